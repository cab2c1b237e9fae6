"""Command-line front end for the full experiment lifecycle.

One TOML configuration file describes an experiment; each command runs
one stage and leaves artifacts under the configured output directory:

  synth       materialize the synthetic treebanks as CoNLL-U files
  pretrain    train the monolingual parser          -> checkpoints/mono_s*.npz
  metatrain   episodic training (+ scratch variant) -> maml_s*, maml_scratch_s*
  train-ne    joint training on the same episodes   -> ne_s*.npz
  metatest    few-shot evaluation of all systems    -> reports_s*.json
  eval        score CoNLL-U files, or parse with a checkpoint
  analyze     correlation tables (fig3_sim / fig4_features / fig5_projectivity)
  report      aggregate summary.csv with significance tests

Every artifact is a pure function of (config, seed): no timestamps, no
machine identifiers, stable key order. Exit codes: 0 success, 2 config
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import io
import json
import sys
import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .autodiff import NumericsError, Tensor
from .conllu import ConlluFormatError, TreeValidationError, emit_conllu, \
    load_treebank
from .evaluate import EvalReport, score_treebank_pair
from .experiments import ConfigError, ExperimentPlan, LanguagePlan, \
    _load_or_generate, analysis_outputs, build_data, make_parser_fns, \
    mt_only_init, stage_meta, stage_pretrain, stage_test, summary_rows
from .model import ModelConfig, encode_treebank, predict
from .typology import read_feature_csv

OK, CONFIG_ERROR, DATA_ERROR, NUMERICAL_ERROR = 0, 2, 3, 4


class DataError(Exception):
    """An input artifact is missing or unreadable."""


class NumericalError(Exception):
    """Training produced non-finite parameters or losses."""


# ---- configuration ----

def _coerce(value: str):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one `section.key=value` override to the parsed config."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, _, value = assignment.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} crosses a non-table value")
    node[parts[-1]] = _coerce(value.strip())


def load_config(path, overrides=()) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        cfg = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from e
    for assignment in overrides:
        apply_override(cfg, assignment)
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the experiment-defining sections.

    Orchestration ([experiment]: output location, seed list, workers) and
    post-hoc analysis keys do not shape training artifacts, so they stay
    out of the hash; everything else invalidates existing checkpoints.
    """
    defining = {k: v for k, v in cfg.items()
                if k not in ("experiment", "analysis")}
    blob = json.dumps(defining, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _build(cls, section: dict, where: str):
    try:
        return cls(**section)
    except TypeError as e:
        raise ConfigError(f"[{where}] {e}") from e


def _language(section: dict, where: str) -> LanguagePlan:
    section = dict(section)
    if "flip_relations" in section:
        section["flip_relations"] = tuple(section["flip_relations"])
    return _build(LanguagePlan, section, where)


def plan_from_config(cfg: dict) -> ExperimentPlan:
    for required in ("model", "pretrain_language", "metatrain_languages",
                     "metatest_languages"):
        if required not in cfg:
            raise ConfigError(f"config lacks the {required!r} section")
    model = _build(ModelConfig, cfg["model"], "model")
    fields = dict(cfg.get("training", {}))
    testing = dict(cfg.get("testing", {}))
    renames = {"sizes_primary": "test_sizes_primary",
               "sizes_secondary": "test_sizes_secondary",
               "reps": "test_reps"}
    for key, value in testing.items():
        fields[renames.get(key, key)] = tuple(value) \
            if isinstance(value, list) else value
    plan_kw = dict(
        model=model,
        pretrain_language=_language(cfg["pretrain_language"],
                                    "pretrain_language"),
        metatrain_languages=[_language(s, "metatrain_languages")
                             for s in cfg["metatrain_languages"]],
        metatest_languages=[_language(s, "metatest_languages")
                            for s in cfg["metatest_languages"]],
        **fields)
    return _build(ExperimentPlan, plan_kw, "training")


def experiment_section(cfg: dict) -> dict:
    exp = dict(cfg.get("experiment", {}))
    seeds = exp.get("seeds", [])
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("[experiment] seeds must be a non-empty integer list")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("[experiment] seeds repeat")
    exp.setdefault("output_dir", "runs/default")
    workers = exp.setdefault("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("[experiment] workers must be a positive integer")
    return exp


def _seeds_to_run(args, exp: dict) -> list:
    return [args.seed] if args.seed is not None else list(exp["seeds"])


# ---- artifacts ----

def write_manifest(out_dir: Path, cfg: dict, exp: dict) -> None:
    manifest = {
        "config_hash": config_hash(cfg),
        "seeds": list(exp["seeds"]),
        "workers": exp["workers"],
        "versions": {
            "metadep": __version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")


def save_checkpoint(path: Path, params: dict, meta: dict) -> None:
    """Write an npz-compatible container with byte-stable zip entries
    (np.savez stamps wall-clock times into the archive, breaking the
    reproducibility contract)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    entries = sorted((f"p:{name}", tensor.data)
                     for name, tensor in params.items())
    entries.append(("meta", np.frombuffer(blob, dtype=np.uint8)))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, array in entries:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(array))
            info = zipfile.ZipInfo(name + ".npy",
                                   date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: Path, expected_hash: str | None = None):
    if not path.is_file():
        raise DataError(f"missing checkpoint: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        params = {name[2:]: Tensor(z[name].copy()) for name in z.files
                  if name.startswith("p:")}
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        raise ConfigError(
            f"checkpoint {path} was trained under config "
            f"{meta.get('config_hash')}, current config is {expected_hash}")
    return params, meta


def check_finite(params: dict, stage: str) -> None:
    for name, tensor in params.items():
        if not np.all(np.isfinite(tensor.data)):
            raise NumericalError(f"{stage}: non-finite values in {name}")


def _jsonable(obj):
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)!r}")


class TelemetryWriter:
    """telemetry_factory writing one JSON-lines file per training stage."""

    def __init__(self, out_dir: Path, seed: int):
        self.dir = out_dir / "telemetry"
        self.seed = seed
        self.handles = []

    def __call__(self, stage: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        fh = open(self.dir / f"{stage}_s{self.seed}.jsonl", "w",
                  encoding="utf-8")
        self.handles.append(fh)

        def emit(record: dict) -> None:
            fh.write(json.dumps(record, sort_keys=True, default=_jsonable))
            fh.write("\n")

        return emit

    def close(self) -> None:
        for fh in self.handles:
            fh.close()
        self.handles = []


def _checkpoint_path(out_dir: Path, name: str, seed: int) -> Path:
    return out_dir / "checkpoints" / f"{name}_s{seed}.npz"


def _checkpoint_meta(cfg: dict, name: str, seed: int) -> dict:
    return {"config_hash": config_hash(cfg), "stage": name, "seed": seed,
            "versions": {"metadep": __version__, "numpy": np.__version__}}


def _load_reports(out_dir: Path) -> list:
    paths = sorted(out_dir.glob("reports_s*.json"))
    if not paths:
        raise DataError(f"no reports_s*.json under {out_dir}; run metatest")
    reports = []
    for path in paths:
        for row in json.loads(path.read_text(encoding="utf-8")):
            reports.append(EvalReport(**row))
    return reports


def _write_csv(path: Path, rows: list, columns: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _done(command: str, **extra) -> int:
    line = {"command": command, "status": "ok"}
    line.update(extra)
    print(json.dumps(line, sort_keys=True))
    return OK


# ---- commands ----

def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.set)
    plan = plan_from_config(cfg)
    exp = experiment_section(cfg)
    out = Path(exp["output_dir"])
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for lp in [plan.pretrain_language] + plan.metatrain_languages + \
            plan.metatest_languages:
        if lp.conllu_train is not None:
            continue  # real data stays where it is
        train_tb, eval_tb, _ = _load_or_generate(lp)
        path = data_dir / f"{lp.tag}.conllu"
        path.write_text(emit_conllu(train_tb), encoding="utf-8")
        written.append(str(path))
        if eval_tb is not None:
            path = data_dir / f"{lp.tag}.eval.conllu"
            path.write_text(emit_conllu(eval_tb), encoding="utf-8")
            written.append(str(path))
    write_manifest(out, cfg, exp)
    return _done("synth", files=written)


def _run_training(args, command: str):
    """Shared scaffolding: config, data, manifest, per-seed loop."""
    cfg = load_config(args.config, args.set)
    plan = plan_from_config(cfg)
    exp = experiment_section(cfg)
    out = Path(exp["output_dir"])
    languages, vocab = build_data(plan)
    write_manifest(out, cfg, exp)
    saved = []
    for seed in _seeds_to_run(args, exp):
        telemetry = TelemetryWriter(out, seed)
        try:
            saved.extend(_train_one_seed(command, cfg, plan, exp, out,
                                         languages, vocab, seed, telemetry))
        finally:
            telemetry.close()
    return _done(command, checkpoints=saved)


def _train_one_seed(command, cfg, plan, exp, out, languages, vocab, seed,
                    telemetry) -> list:
    chash = config_hash(cfg)
    saved = []

    def save(name, params):
        check_finite(params, f"{name} seed {seed}")
        path = _checkpoint_path(out, name, seed)
        save_checkpoint(path, params, _checkpoint_meta(cfg, name, seed))
        saved.append(str(path))

    if command == "pretrain":
        mono, _ = stage_pretrain(plan, languages, vocab, seed,
                                 telemetry=telemetry("pretrain"))
        save("mono", mono)
        return saved

    mono, _ = load_checkpoint(_checkpoint_path(out, "mono", seed), chash)
    if command == "metatrain":
        maml, _ = stage_meta(plan, languages, vocab, seed, "maml", start=mono,
                             telemetry=telemetry("maml"))
        save("maml", maml)
        scratch, _ = stage_meta(plan, languages, vocab, seed, "maml_scratch",
                                telemetry=telemetry("maml_scratch"))
        save("maml_scratch", scratch)
    elif command == "train-ne":
        ne, _ = stage_meta(plan, languages, vocab, seed, "ne", start=mono,
                           telemetry=telemetry("ne"))
        save("ne", ne)
    return saved


def cmd_pretrain(args) -> int:
    return _run_training(args, "pretrain")


def cmd_metatrain(args) -> int:
    return _run_training(args, "metatrain")


def cmd_train_ne(args) -> int:
    return _run_training(args, "train-ne")


def cmd_metatest(args) -> int:
    cfg = load_config(args.config, args.set)
    plan = plan_from_config(cfg)
    exp = experiment_section(cfg)
    out = Path(exp["output_dir"])
    chash = config_hash(cfg)
    languages, vocab = build_data(plan)
    write_manifest(out, cfg, exp)
    needed = set(plan.primary_models) | set(plan.secondary_models)
    written = []
    for seed in _seeds_to_run(args, exp):
        models = {}
        for name in sorted(needed):
            if name == "mt_only":
                models[name] = mt_only_init(plan, vocab, seed)
            else:
                models[name], _ = load_checkpoint(
                    _checkpoint_path(out, name, seed), chash)
        reports = stage_test(plan, models, languages, vocab, seed)
        path = out / f"reports_s{seed}.json"
        path.write_text(json.dumps([vars(r) for r in reports],
                                   sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
        written.append(str(path))
    return _done("metatest", reports=written)


def _load_or_fail(path, what: str):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"missing {what}: {p}")
    return load_treebank(p)


def cmd_eval(args) -> int:
    if args.gold and args.pred:
        counts = score_treebank_pair(_load_or_fail(args.gold, "gold file"),
                                     _load_or_fail(args.pred, "prediction file"))
        return _done("eval", las=round(counts.las, 4),
                     uas=round(counts.uas, 4), n_tokens=counts.n_tokens)
    if not (args.checkpoint and args.language):
        raise ConfigError("eval needs either --gold and --pred, "
                          "or --checkpoint and --language (with --config)")
    if not args.config:
        raise ConfigError("checkpoint evaluation needs --config")
    cfg = load_config(args.config, args.set)
    plan = plan_from_config(cfg)
    params, _ = load_checkpoint(Path(args.checkpoint))
    by_tag = {lp.tag: lp for lp in [plan.pretrain_language] +
              plan.metatrain_languages + plan.metatest_languages}
    if args.language not in by_tag:
        raise ConfigError(f"language {args.language!r} is not in the plan")
    train_tb, eval_tb, _ = _load_or_generate(by_tag[args.language])
    gold = eval_tb if args.split == "eval" else train_tb
    if gold is None:
        raise DataError(f"language {args.language!r} has no eval split")
    _, vocab = build_data(plan)
    encoded = encode_treebank(gold, vocab)
    pred_sentences = []
    for sentence, enc in zip(gold.sentences, encoded):
        heads, labels = predict(enc, params, plan.model, vocab)
        entries, i = [], 0
        for token in sentence.entries:
            if token.is_multiword or token.is_empty:
                entries.append(token)
                continue
            cols = list(token.cols)
            cols[6] = str(int(heads[i]))
            cols[7] = labels[i]
            entries.append(replace(token, cols=tuple(cols),
                                   head=int(heads[i])))
            i += 1
        pred_sentences.append(replace(sentence, entries=entries))
    pred_tb = replace(gold, sentences=pred_sentences)
    if args.pred_out:
        Path(args.pred_out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.pred_out).write_text(emit_conllu(pred_tb), encoding="utf-8")
    counts = score_treebank_pair(gold, pred_tb)
    return _done("eval", language=args.language, split=args.split,
                 las=round(counts.las, 4), uas=round(counts.uas, 4),
                 n_tokens=counts.n_tokens,
                 predictions=args.pred_out or None)


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    plan = plan_from_config(cfg)
    exp = experiment_section(cfg)
    analysis = dict(cfg.get("analysis", {}))
    out = Path(exp["output_dir"])
    reports = _load_reports(out)
    languages, _ = build_data(plan)
    if "typology_csv" in analysis:
        table = read_feature_csv(analysis["typology_csv"])
        for tag, feats in table.features.items():
            if tag in languages:
                languages[tag].typology.update(feats)
    tables = analysis_outputs(
        reports, languages,
        metatrain_tags=[lp.tag for lp in plan.metatrain_languages],
        size=int(analysis.get("gain_size", 20)))
    rows = [{"language": r["language"], "similarity": round(r["similarity"], 6),
             "gain": round(r["gain"], 4)} for r in tables["similarity_rows"]]
    _write_csv(out / "fig3_sim.csv", rows, ["language", "similarity", "gain"])
    rows = [{"feature": r["feature"], "rho": round(r["rho"], 6),
             "p": round(r["p"], 6), "n": r["n"]}
            for r in tables["feature_rows"]]
    _write_csv(out / "fig4_features.csv", rows, ["feature", "rho", "p", "n"])
    rows = [{"language": r["language"],
             "nonproj_rate": round(r["nonproj_rate"], 6),
             "gain": round(r["gain"], 4)}
            for r in tables["projectivity_rows"]]
    _write_csv(out / "fig5_projectivity.csv", rows,
               ["language", "nonproj_rate", "gain"])

    def rounded(stat):
        return None if stat is None else \
            {"rho": round(stat["rho"], 6), "p": round(stat["p"], 6),
             "n": stat["n"]}

    stats = {"similarity": rounded(tables["similarity_stat"]),
             "projectivity": rounded(tables["projectivity_stat"]),
             "gains": {k: round(v, 4) for k, v in
                       sorted(tables["gains"].items())}}
    (out / "analysis_stats.json").write_text(
        json.dumps(stats, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return _done("analyze", files=[str(out / n) for n in
                                   ("fig3_sim.csv", "fig4_features.csv",
                                    "fig5_projectivity.csv",
                                    "analysis_stats.json")])


def cmd_report(args) -> int:
    cfg = load_config(args.config, args.set)
    exp = experiment_section(cfg)
    analysis = dict(cfg.get("analysis", {}))
    out = Path(exp["output_dir"])
    reports = _load_reports(out)
    rows = summary_rows(reports, alpha=float(analysis.get("alpha", 0.05)))
    columns = ["language", "model", "support_size", "n", "mean_las",
               "std_las", "mean_uas", "maml_vs_ne_p", "significant"]
    _write_csv(out / "summary.csv", rows, columns)
    return _done("report", files=[str(out / "summary.csv")],
                 rows=len(rows))


# ---- entry point ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metadep",
        description="Few-shot cross-lingual dependency parsing experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="TOML experiment configuration")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    for name, fn, doc in [
            ("synth", cmd_synth, "write the synthetic treebanks"),
            ("pretrain", cmd_pretrain, "train the monolingual parser"),
            ("metatrain", cmd_metatrain,
             "episodic training, with and without pre-training"),
            ("train-ne", cmd_train_ne, "joint training on the same episodes"),
            ("metatest", cmd_metatest, "few-shot evaluation of all systems"),
            ("analyze", cmd_analyze, "correlation tables"),
            ("report", cmd_report, "aggregate summary table")]:
        p = sub.add_parser(name, help=doc)
        common(p)
        if name in ("pretrain", "metatrain", "train-ne", "metatest"):
            p.add_argument("--seed", type=int, default=None,
                           help="run one seed instead of the configured list")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="score files or parse with a checkpoint")
    common(p, config_required=False)
    p.add_argument("--gold", help="gold CoNLL-U file")
    p.add_argument("--pred", help="predicted CoNLL-U file")
    p.add_argument("--checkpoint", help="checkpoint to parse with")
    p.add_argument("--language", help="plan language to parse")
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.add_argument("--pred-out", help="write predictions as CoNLL-U here")
    p.set_defaults(fn=cmd_eval)
    return parser


def _fail(kind: str, detail) -> None:
    print(json.dumps({"error": kind, "detail": str(detail)}),
          file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        _fail("config", e)
        return CONFIG_ERROR
    except (DataError, FileNotFoundError, ConlluFormatError,
            TreeValidationError) as e:
        _fail("data", e)
        return DATA_ERROR
    except (NumericalError, NumericsError) as e:
        _fail("numerical", e)
        return NUMERICAL_ERROR
    except (ValueError, KeyError) as e:
        _fail("config", e)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
