"""End-to-end experiment driver.

One seed runs: generate (or load) per-language data, build a shared
vocabulary, pre-train on the high-resource language, then branch into
the five systems under comparison:

  mono          pre-trained parser, adapted only at test time
  maml          pre-train, then episodic meta-training
  ne            pre-train, then joint multilingual training on the same
                episode stream
  maml_scratch  episodic meta-training from random initialization (the
                pre-training language joins the episode languages, with
                proportionally more steps)
  mt_only       random initialization, adapted only at test time with
                its own larger step size

Meta-testing samples a support set from an unseen language's pool,
runs the same k-step inner loop used in training, and scores labeled
attachment on that language's held-out evaluation set. Everything is
derived deterministically from (plan, seed).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import synthlang as sl
from .conllu import load_treebank, projectivity_stats
from .evaluate import EvalCounts, EvalReport, aggregate, bonferroni_threshold, \
    paired_ttest, per_seed_means
from .meta import MetaConfig, inner_adapt, meta_train, non_episodic_train, \
    pretrain, sample_episode, split_pool
from .model import ModelConfig, batch_gradients, batch_loss, build_vocab, \
    encode_treebank, group_of, init_params, predict
from .optim import clone_params
from .typology import TypologyTable, per_feature_gain_rows, \
    projectivity_gain_rows, similarity_gain_rows


class ConfigError(ValueError):
    """The experiment plan is malformed or inconsistent."""


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from labels; platform-independent."""
    key = ":".join(str(p) for p in parts)
    return zlib.crc32(key.encode("utf-8"))


# ---- plan ----

@dataclass
class LanguagePlan:
    tag: str
    spec_seed: int = 0
    pool_size: int = 150
    eval_size: int = 0
    nonprojective_rate: object = None  # None keeps the drawn rate
    finality: object = None  # None keeps the drawn latent coordinate
    flip_relations: tuple = ()  # relations whose direction convention inverts
    shared_vocab_frac: float = 0.15
    vocab_size: int = 120
    conllu_train: object = None  # path: real data instead of synthetic
    conllu_eval: object = None


@dataclass
class ExperimentPlan:
    model: ModelConfig
    pretrain_language: LanguagePlan
    metatrain_languages: list
    metatest_languages: list  # first entry is the primary analysis language
    inner_lr: dict = field(default_factory=lambda: {"encoder": 0.01, "decoder": 0.05})
    outer_lr: dict = field(default_factory=lambda: {"encoder": 1e-3, "decoder": 2e-3})
    inner_steps: int = 5
    inner_clip: float = 60.0  # global-norm cap on adaptation gradients
    outer_clip: float = 80.0  # global-norm cap on the summed outer gradient
    support_size: int = 20
    query_size: int = 20
    meta_steps: int = 100
    warmup_frac: float = 0.1
    val_every: int = 10
    val_support_size: int = 20
    dev_frac: float = 0.15
    pretrain_epochs: int = 20
    pretrain_batch: int = 16
    pretrain_lrs: dict = field(default_factory=lambda: {"encoder": 2e-3, "decoder": 4e-3})
    pretrain_weight_decay: float = 0.01
    scratch_multiplier: float = 1.5
    mt_only_lr_scale: float = 4.0
    test_sizes_primary: tuple = (20, 40, 80)
    test_sizes_secondary: tuple = (20,)
    primary_models: tuple = ("mono", "maml", "ne", "maml_scratch", "mt_only")
    secondary_models: tuple = ("maml", "ne")
    test_reps: int = 2
    freq_cutoff: int = 2
    vocab_from_test_pools: bool = False

    def __post_init__(self):
        for name in ("inner_steps", "support_size", "query_size",
                     "meta_steps", "val_every", "val_support_size",
                     "pretrain_epochs", "pretrain_batch", "test_reps"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, "
                                  f"got {value!r}")
        for name in ("warmup_frac", "dev_frac"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value!r}")
        for name in ("inner_clip", "outer_clip", "pretrain_weight_decay",
                     "scratch_multiplier", "mt_only_lr_scale"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or value < 0:
                raise ConfigError(f"{name} must be a non-negative number, "
                                  f"got {value!r}")
        if not isinstance(self.freq_cutoff, int) or self.freq_cutoff < 0:
            raise ConfigError("freq_cutoff must be a non-negative integer")
        if not self.metatrain_languages:
            raise ConfigError("need at least one meta-training language")
        if not self.metatest_languages:
            raise ConfigError("need at least one meta-testing language")
        tags = [self.pretrain_language.tag] + \
            [l.tag for l in self.metatrain_languages] + \
            [l.tag for l in self.metatest_languages]
        if len(set(tags)) != len(tags):
            raise ConfigError(f"duplicate language tags in plan: {tags}")
        for lp in self.metatest_languages:
            if lp.conllu_train is None and lp.eval_size < 1:
                raise ConfigError(f"meta-test language {lp.tag} needs eval_size")
        if not self.test_sizes_primary:
            raise ConfigError("test_sizes_primary must not be empty")
        sizes = tuple(self.test_sizes_primary) + tuple(self.test_sizes_secondary)
        if not all(isinstance(s, int) and s >= 0 for s in sizes):
            raise ConfigError(f"test sizes must be non-negative integers: {sizes}")
        synth_pools = [l.pool_size for l in self.metatest_languages
                       if l.conllu_train is None]
        if synth_pools and max(sizes) > min(synth_pools):
            raise ConfigError("test support size exceeds a test language pool")


# ---- data ----

@dataclass
class LanguageData:
    tag: str
    pool: list  # encoded training sentences
    eval_set: list  # encoded held-out sentences (may be empty)
    typology: dict
    nonproj_rate: float


def _load_or_generate(lp: LanguagePlan):
    """(train treebank, eval treebank or None, typology dict or None)."""
    if lp.conllu_train is not None:
        train_tb = load_treebank(lp.conllu_train, language_tag=lp.tag)
        eval_tb = (load_treebank(lp.conllu_eval, language_tag=lp.tag)
                   if lp.conllu_eval else None)
        return train_tb, eval_tb, None
    spec = sl.default_spec(lp.tag, lp.spec_seed,
                           nonprojective_rate=lp.nonprojective_rate,
                           vocab_size=lp.vocab_size,
                           shared_vocab_frac=lp.shared_vocab_frac,
                           finality=lp.finality)
    if lp.flip_relations:
        unknown = set(lp.flip_relations) - set(spec.dep_before_head)
        if unknown:
            raise ConfigError(f"flip_relations not in the grammar: {sorted(unknown)}")
        flipped = dict(spec.dep_before_head)
        for rel in lp.flip_relations:
            flipped[rel] = 1.0 - flipped[rel]
        spec = sl.spec_with(spec, dep_before_head=flipped)
    train_tb = sl.generate_treebank(spec, lp.pool_size,
                                    seed=derive_seed(lp.spec_seed, lp.tag, "pool"))
    eval_tb = None
    if lp.eval_size:
        eval_tb = sl.generate_treebank(spec, lp.eval_size,
                                       seed=derive_seed(lp.spec_seed, lp.tag, "eval"))
    return train_tb, eval_tb, sl.typology_of(spec)


def build_data(plan: ExperimentPlan):
    """(languages: tag -> LanguageData, vocab).

    Synthetic corpora depend only on each language's spec_seed, so every
    run seed trains on the same data and seeds differ in initialization,
    episode order, dropout, and test draws alone.

    The vocabulary is built from the pre-training and meta-training pools
    only, unless vocab_from_test_pools is set: an unseen language should
    reach the model through shared forms and the unknown token, not
    through never-trained embeddings of its private words. Eval sets stay
    out of the vocabulary either way.
    """
    raw = {}
    for lp in [plan.pretrain_language] + plan.metatrain_languages + \
            plan.metatest_languages:
        raw[lp.tag] = _load_or_generate(lp)
    vocab_tags = [plan.pretrain_language.tag] + \
        [l.tag for l in plan.metatrain_languages]
    if plan.vocab_from_test_pools:
        vocab_tags += [l.tag for l in plan.metatest_languages]
    vocab = build_vocab([raw[tag][0] for tag in vocab_tags],
                        freq_cutoff=plan.freq_cutoff)
    languages = {}
    for tag, (train_tb, eval_tb, typo) in raw.items():
        languages[tag] = LanguageData(
            tag=tag,
            pool=encode_treebank(train_tb, vocab),
            eval_set=encode_treebank(eval_tb, vocab) if eval_tb else [],
            typology=typo or {},
            nonproj_rate=projectivity_stats(train_tb).nonproj_fraction)
    return languages, vocab


# ---- parser closures ----

def make_parser_fns(cfg: ModelConfig, vocab, dropout_seed: int):
    """(grad_fn with train-mode dropout, eval loss_fn) for the meta loops."""
    rng = np.random.default_rng(dropout_seed)

    def grad_fn(params, batch):
        return batch_gradients(batch, params, cfg, vocab, rng=rng, train=True)

    def loss_fn(params, batch):
        return batch_loss(batch, params, cfg, vocab, train=False).item()

    return grad_fn, loss_fn


def score_model(params, encoded, cfg: ModelConfig, vocab) -> EvalCounts:
    counts = EvalCounts()
    for e in encoded:
        heads, labels = predict(e, params, cfg, vocab)
        counts.add_sentence([int(h) for h in e.heads], list(e.gold_labels),
                            [int(h) for h in heads], labels)
    return counts


def adapt_and_score(params, support_pool, eval_set, grad_fn, cfg, vocab,
                    inner_lr, inner_steps, size: int, rng,
                    clip: float = 0.0) -> EvalCounts:
    """Few-shot protocol: sample support, adapt a clone, score held-out data."""
    if size > 0:
        support, _ = sample_episode(support_pool, size, 0, rng)
        adapted, _ = inner_adapt(params, grad_fn, support, inner_lr,
                                 inner_steps, group_of=group_of, clip=clip)
    else:
        adapted = params
    return score_model(adapted, eval_set, cfg, vocab)


# ---- one seed ----

def _make_validate_fn(train_pools, dev_sets, grad_fn, plan, cfg, vocab, seed):
    """Meta-validation mirrors meta-testing on the meta-train dev splits.

    The per-language validation support is drawn once and reused at every
    evaluation, so checkpoint selection compares like with like instead of
    rewarding a lucky support draw.
    """
    supports = {}
    for lang in sorted(dev_sets):
        rng = np.random.default_rng(derive_seed(seed, "val", lang))
        supports[lang], _ = sample_episode(train_pools[lang],
                                           plan.val_support_size, 0, rng)

    def validate(params, step):
        scores = []
        for lang in sorted(dev_sets):
            adapted, _ = inner_adapt(params, grad_fn, supports[lang],
                                     plan.inner_lr, plan.inner_steps,
                                     group_of=group_of, clip=plan.inner_clip)
            counts = score_model(adapted, dev_sets[lang], cfg, vocab)
            scores.append(counts.las)
        return float(np.mean(scores))

    return validate


def episode_splits(plan: ExperimentPlan, languages: dict, seed: int):
    """(episode pools, dev sets) for the meta-train languages."""
    episode_pools, dev_sets = {}, {}
    for lp in plan.metatrain_languages:
        train, dev = split_pool(languages[lp.tag].pool, plan.dev_frac,
                                seed=derive_seed(seed, "split", lp.tag))
        episode_pools[lp.tag] = train
        dev_sets[lp.tag] = dev
    return episode_pools, dev_sets


def pretrain_split(plan: ExperimentPlan, languages: dict, seed: int):
    pre_tag = plan.pretrain_language.tag
    return split_pool(languages[pre_tag].pool, plan.dev_frac,
                      seed=derive_seed(seed, "split", pre_tag))


def meta_config_for(plan: ExperimentPlan, seed: int,
                    scratch: bool = False) -> MetaConfig:
    cfg = MetaConfig(inner_lr=plan.inner_lr, outer_lr=plan.outer_lr,
                     inner_steps=plan.inner_steps,
                     support_size=plan.support_size,
                     query_size=plan.query_size,
                     meta_steps=plan.meta_steps,
                     warmup_frac=plan.warmup_frac,
                     val_every=plan.val_every,
                     inner_clip=plan.inner_clip,
                     outer_clip=plan.outer_clip,
                     seed=derive_seed(seed, "episodes"))
    if scratch:
        cfg = replace(cfg,
                      meta_steps=int(round(plan.meta_steps *
                                           plan.scratch_multiplier)),
                      seed=derive_seed(seed, "episodes", "scratch"))
    return cfg


def stage_pretrain(plan: ExperimentPlan, languages: dict, vocab, seed: int,
                   telemetry=None):
    """Train the monolingual parser; returns (params, history).

    Every stage derives its dropout stream from (seed, stage name), so a
    pipeline split across processes reproduces the single-process run.
    """
    cfg = plan.model
    grad_fn, loss_fn = make_parser_fns(cfg, vocab,
                                       derive_seed(seed, "dropout", "pretrain"))
    pre_train, pre_dev = pretrain_split(plan, languages, seed)
    init = init_params(cfg, vocab, seed=derive_seed(seed, "init"))
    return pretrain(
        clone_params(init), pre_train, pre_dev, grad_fn, loss_fn,
        epochs=plan.pretrain_epochs, batch_size=plan.pretrain_batch,
        lrs=plan.pretrain_lrs, group_of=group_of,
        weight_decay=plan.pretrain_weight_decay, freeze_encoder_epochs=1,
        seed=derive_seed(seed, "pretrain"), telemetry=telemetry)


def stage_meta(plan: ExperimentPlan, languages: dict, vocab, seed: int,
               name: str, start=None, telemetry=None):
    """Train one episodically-fed system; returns (params, history).

    name: "maml" (episodic from start), "ne" (joint training on the same
    episode stream, from start), or "maml_scratch" (episodic from a fresh
    initialization with the pre-training language added to the pool mix).
    """
    cfg = plan.model
    grad_fn, _ = make_parser_fns(cfg, vocab, derive_seed(seed, "dropout", name))
    episode_pools, dev_sets = episode_splits(plan, languages, seed)
    validate_fn = _make_validate_fn(episode_pools, dev_sets, grad_fn, plan,
                                    cfg, vocab, seed)
    if name == "maml_scratch":
        pre_train, _ = pretrain_split(plan, languages, seed)
        pools = dict(episode_pools)
        pools[plan.pretrain_language.tag] = pre_train
        meta_cfg = meta_config_for(plan, seed, scratch=True)
        init = init_params(cfg, vocab,
                           seed=derive_seed(seed, "init", "scratch"))
        return meta_train(init, pools, grad_fn, meta_cfg, group_of=group_of,
                          validate_fn=validate_fn, telemetry=telemetry)
    if start is None:
        raise ConfigError(f"{name} starts from the pre-trained parser")
    meta_cfg = meta_config_for(plan, seed)
    train_fn = meta_train if name == "maml" else non_episodic_train
    return train_fn(clone_params(start), episode_pools, grad_fn, meta_cfg,
                    group_of=group_of, validate_fn=validate_fn,
                    telemetry=telemetry)


def mt_only_init(plan: ExperimentPlan, vocab, seed: int):
    """The untrained baseline adapted only at meta-test time."""
    return init_params(plan.model, vocab,
                       seed=derive_seed(seed, "init", "mt_only"))


def stage_test(plan: ExperimentPlan, models: dict, languages: dict, vocab,
               seed: int):
    """Meta-test every system named in the plan; returns EvalReports.

    Every (language, model, size, repetition) cell derives its own support
    and dropout streams, so a cell's score does not move when other cells
    are added, removed, or reordered in the plan.
    """
    cfg = plan.model
    mt_only_lr = {g: lr * plan.mt_only_lr_scale
                  for g, lr in plan.inner_lr.items()} \
        if isinstance(plan.inner_lr, dict) \
        else plan.inner_lr * plan.mt_only_lr_scale

    reports = []
    test_tags = [l.tag for l in plan.metatest_languages]
    for li, tag in enumerate(test_tags):
        sizes = plan.test_sizes_primary if li == 0 else plan.test_sizes_secondary
        names = plan.primary_models if li == 0 else plan.secondary_models
        for name in names:
            lr = mt_only_lr if name == "mt_only" else plan.inner_lr
            for size in sizes:
                for rep in range(plan.test_reps):
                    rng = np.random.default_rng(
                        derive_seed(seed, "test", tag, name, size, rep))
                    grad_fn, _ = make_parser_fns(cfg, vocab, derive_seed(
                        seed, "dropout", "test", tag, name, size, rep))
                    counts = adapt_and_score(
                        models[name], languages[tag].pool,
                        languages[tag].eval_set, grad_fn, cfg, vocab,
                        lr, plan.inner_steps, size, rng,
                        clip=plan.inner_clip)
                    reports.append(EvalReport(
                        language=tag, model=name, support_size=size,
                        repetition=rep, seed=seed, las=counts.las,
                        uas=counts.uas,
                        per_relation=dict(counts.per_relation)))
    return reports


def run_seed(plan: ExperimentPlan, seed: int, telemetry_factory=None) -> dict:
    """Train all five systems and meta-test them for one seed.

    telemetry_factory(stage_name) may return a per-record callback (or None).
    Returns {"reports", "models", "histories", "languages", "vocab"}.
    """
    tele = telemetry_factory or (lambda stage: None)
    languages, vocab = build_data(plan)

    histories = {}
    mono, histories["pretrain"] = stage_pretrain(plan, languages, vocab, seed,
                                                 telemetry=tele("pretrain"))
    models = {"mono": mono}
    for name in ("maml", "ne", "maml_scratch"):
        models[name], histories[name] = stage_meta(
            plan, languages, vocab, seed, name, start=mono,
            telemetry=tele(name))
    models["mt_only"] = mt_only_init(plan, vocab, seed)

    reports = stage_test(plan, models, languages, vocab, seed)
    return {"reports": reports, "models": models, "histories": histories,
            "languages": languages, "vocab": vocab}


def run_experiment(plan: ExperimentPlan, seeds, telemetry_factory=None):
    """All seeds; returns (reports, last seed's languages for metadata)."""
    reports = []
    languages = None
    for seed in seeds:
        out = run_seed(plan, seed, telemetry_factory=telemetry_factory)
        reports.extend(out["reports"])
        languages = out["languages"]
    return reports, languages


# ---- analysis ----

def transfer_gains(reports, size: int = 20, better: str = "maml",
                   baseline: str = "ne") -> dict:
    """Per-language gain: mean LAS difference at one support size."""
    means = per_seed_means(reports)
    gains = {}
    langs = {r.language for r in reports}
    for lang in langs:
        a = means.get((lang, better, size))
        b = means.get((lang, baseline, size))
        if not a or not b:
            continue
        shared = sorted(set(a) & set(b))
        if not shared:
            continue
        gains[lang] = float(np.mean([a[s] - b[s] for s in shared]))
    return gains


def summary_rows(reports, alpha: float = 0.05):
    """Aggregate table plus maml-vs-ne significance per (language, size).

    The correction counts every comparison actually performed.
    """
    means = per_seed_means(reports)
    comparisons = []
    for (lang, model, size) in means:
        if model == "maml" and (lang, "ne", size) in means:
            comparisons.append((lang, size))
    threshold = bonferroni_threshold(alpha, max(1, len(comparisons)))
    verdicts = {}
    for lang, size in comparisons:
        a = means[(lang, "maml", size)]
        b = means[(lang, "ne", size)]
        shared = sorted(set(a) & set(b))
        if len(shared) < 2:
            continue
        t = paired_ttest([a[s] for s in shared], [b[s] for s in shared])
        verdicts[(lang, size)] = (t.p < threshold, t.p)
    rows = []
    for g in aggregate(reports):
        sig, p = verdicts.get((g.language, g.support_size), (None, None))
        rows.append({"language": g.language, "model": g.model,
                     "support_size": g.support_size, "n": g.n,
                     "mean_las": round(g.mean_las, 4),
                     "std_las": round(g.std_las, 4),
                     "mean_uas": round(g.mean_uas, 4),
                     "maml_vs_ne_p": (round(p, 6) if p is not None and
                                      g.model in ("maml", "ne") else ""),
                     "significant": ("yes" if sig else "no")
                     if sig is not None and g.model in ("maml", "ne") else ""})
    return rows


def analysis_outputs(reports, languages: dict, metatrain_tags, size: int = 20):
    """Correlation tables: gain vs similarity, per-feature, vs projectivity."""
    gains = transfer_gains(reports, size=size)
    table = TypologyTable(features={tag: ld.typology
                                    for tag, ld in languages.items()
                                    if ld.typology})
    sim_rows, sim_stat = similarity_gain_rows(table, gains, metatrain_tags)
    feat_rows = per_feature_gain_rows(table, gains)
    rates = {tag: ld.nonproj_rate for tag, ld in languages.items()}
    proj_rows, proj_stat = projectivity_gain_rows(rates, gains)

    def stat_dict(s):
        return None if s is None else {"rho": s.rho, "p": s.p, "n": s.n}

    return {"gains": gains,
            "similarity_rows": sim_rows, "similarity_stat": stat_dict(sim_stat),
            "feature_rows": feat_rows,
            "projectivity_rows": proj_rows,
            "projectivity_stat": stat_dict(proj_stat)}
