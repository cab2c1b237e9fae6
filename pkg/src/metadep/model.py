"""Graph-based biaffine dependency parser over a compact mixed-layer encoder.

The encoder is a stack of small residual blocks (self-attention by default,
gated feedforward as the cheap alternative) on top of word plus position
embeddings. The representation fed to the parser is a softmax-weighted sum
of every layer's output, embedding layer included, scaled by one trainable
scalar. Arc scores are biaffine over head/dependent projections with the
virtual root as row and column 0; label scores are per-label biaffine over
a second projection pair, conditioned on gold heads during training and on
predicted heads at inference.

Parameter names are prefixed "enc." for the encoder group and "dec."/"mix."
for the decoder group; learning-rate schedules and freezing act on groups.
"""

from __future__ import annotations

import base64
import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conllu import Sentence, Treebank
from .decoder import mst_single_root

# ---- configuration and vocabulary ----


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 3
    block: str = "attention"  # "attention" or "gated"
    d_arc: int = 64
    d_label: int = 32
    max_len: int = 64
    emb_dropout: float = 0.2
    hidden_dropout: float = 0.33
    word_dropout: float = 0.0  # train-time form id -> UNK substitution rate

    def __post_init__(self):
        if self.block not in ("attention", "gated"):
            raise ValueError(f"unknown encoder block '{self.block}'")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ValueError("word_dropout must lie in [0, 1)")


UNK = "<unk>"


@dataclass
class Vocab:
    forms: list  # forms[0] is the UNK slot
    labels: list
    form_to_id: dict = field(default_factory=dict, repr=False)
    label_to_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.form_to_id = {f: i for i, f in enumerate(self.forms)}
        self.label_to_id = {l: i for i, l in enumerate(self.labels)}

    @property
    def n_forms(self) -> int:
        return len(self.forms)

    @property
    def n_labels(self) -> int:
        return len(self.labels)


def build_vocab(treebanks, freq_cutoff: int = 2) -> Vocab:
    """Lowercased form vocabulary with a frequency cutoff, plus label set.

    Both lists are sorted so ids are reproducible regardless of treebank
    iteration order.
    """
    counts = Counter()
    labels = set()
    for tb in treebanks:
        for sent in tb.sentences:
            for tok in sent.tokens:
                counts[tok.form.lower()] += 1
                labels.add(tok.deprel)
    forms = [UNK] + sorted(f for f, c in counts.items() if c >= freq_cutoff)
    if not labels:
        raise ValueError("cannot build a vocabulary out of zero sentences")
    return Vocab(forms=forms, labels=sorted(labels))


@dataclass
class EncodedSentence:
    """A sentence reduced to the arrays the model consumes."""

    ids: np.ndarray        # (n,) form ids
    heads: np.ndarray      # (n,) gold head positions, 0 = root
    label_ids: np.ndarray  # (n,) gold label ids, -1 when outside the vocab
    gold_labels: list      # gold deprel strings, for string-level scoring

    @property
    def n(self) -> int:
        return len(self.ids)


def encode_sentence(sent: Sentence, vocab: Vocab) -> EncodedSentence:
    ids = np.array([vocab.form_to_id.get(t.form.lower(), 0) for t in sent.tokens],
                   dtype=np.intp)
    heads = np.array(sent.heads(), dtype=np.intp)
    labels = sent.deprels()
    label_ids = np.array([vocab.label_to_id.get(l, -1) for l in labels],
                         dtype=np.intp)
    return EncodedSentence(ids=ids, heads=heads, label_ids=label_ids,
                           gold_labels=labels)


def encode_treebank(tb: Treebank, vocab: Vocab) -> list:
    return [encode_sentence(s, vocab) for s in tb.sentences]


# ---- parameter construction ----

def group_of(name: str) -> str:
    return "encoder" if name.startswith("enc.") else "decoder"


def _xavier(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_params(cfg: ModelConfig, vocab: Vocab, seed: int) -> dict:
    """Fresh parameter dict. Biaffine weights start at zero so that arc and
    label distributions are exactly uniform before any training."""
    rng = np.random.default_rng(seed)
    d, da, dl = cfg.d_model, cfg.d_arc, cfg.d_label
    dff = 2 * d
    k = vocab.n_labels
    p: dict[str, Tensor] = {}

    p["enc.word_emb"] = Tensor(rng.normal(0.0, 0.1, size=(vocab.n_forms, d)))
    p["enc.pos_emb"] = Tensor(rng.normal(0.0, 0.1, size=(cfg.max_len, d)))
    for i in range(cfg.n_layers):
        pre = f"enc.l{i}."
        if cfg.block == "attention":
            for w_name in ("wq", "wk", "wv", "wo"):
                p[pre + w_name] = Tensor(_xavier(rng, d, d))
                p[pre + w_name.replace("w", "b")] = Tensor(np.zeros(d))
            p[pre + "w1"] = Tensor(_xavier(rng, d, dff))
            p[pre + "b1"] = Tensor(np.zeros(dff))
            p[pre + "w2"] = Tensor(_xavier(rng, dff, d))
            p[pre + "b2"] = Tensor(np.zeros(d))
        else:
            p[pre + "wg"] = Tensor(_xavier(rng, d, d))
            p[pre + "bg"] = Tensor(np.zeros(d))
            p[pre + "wc"] = Tensor(_xavier(rng, d, d))
            p[pre + "bc"] = Tensor(np.zeros(d))

    p["mix.logits"] = Tensor(np.zeros(cfg.n_layers + 1))  # uniform layer mix
    p["mix.scale"] = Tensor(np.asarray(1.0))

    p["dec.root"] = Tensor(rng.normal(0.0, 0.1, size=(1, d)))
    p["dec.arc_h.w"] = Tensor(_xavier(rng, d, da))
    p["dec.arc_h.b"] = Tensor(np.zeros(da))
    p["dec.arc_d.w"] = Tensor(_xavier(rng, d, da))
    p["dec.arc_d.b"] = Tensor(np.zeros(da))
    p["dec.arc.u"] = Tensor(np.zeros((da, da)))
    p["dec.arc.wh"] = Tensor(np.zeros((da, 1)))
    p["dec.arc.wd"] = Tensor(np.zeros((da, 1)))
    p["dec.arc.b"] = Tensor(np.asarray(0.0))

    p["dec.lab_h.w"] = Tensor(_xavier(rng, d, dl))
    p["dec.lab_h.b"] = Tensor(np.zeros(dl))
    p["dec.lab_d.w"] = Tensor(_xavier(rng, d, dl))
    p["dec.lab_d.b"] = Tensor(np.zeros(dl))
    # one bilinear form per label, stored side by side: block j is U_j
    p["dec.lab.u"] = Tensor(np.zeros((dl, k * dl)))
    p["dec.lab.wh"] = Tensor(np.zeros((dl, k)))
    p["dec.lab.wd"] = Tensor(np.zeros((dl, k)))
    p["dec.lab.b"] = Tensor(np.zeros(k))
    return p


# ---- forward passes ----

def _linear(x, w, b):
    return ad.add(ad.matmul(x, w), b)


def _attention_block(x, p, pre, d_model, dropout, rng, train):
    q = _linear(x, p[pre + "wq"], p[pre + "bq"])
    k = _linear(x, p[pre + "wk"], p[pre + "bk"])
    v = _linear(x, p[pre + "wv"], p[pre + "bv"])
    att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)),
                              1.0 / np.sqrt(d_model)), axis=1)
    ctx = _linear(ad.matmul(att, v), p[pre + "wo"], p[pre + "bo"])
    if train and dropout > 0.0:
        ctx = ad.dropout_apply(ctx, ad.make_dropout_mask(ctx.shape, dropout, rng))
    h = ad.add(x, ctx)
    ff = _linear(ad.tanh(_linear(h, p[pre + "w1"], p[pre + "b1"])),
                 p[pre + "w2"], p[pre + "b2"])
    if train and dropout > 0.0:
        ff = ad.dropout_apply(ff, ad.make_dropout_mask(ff.shape, dropout, rng))
    return ad.add(h, ff)


def _gated_block(x, p, pre, dropout, rng, train):
    # highway: out = g * c + (1 - g) * x
    g = ad.sigmoid(_linear(x, p[pre + "wg"], p[pre + "bg"]))
    c = ad.tanh(_linear(x, p[pre + "wc"], p[pre + "bc"]))
    if train and dropout > 0.0:
        c = ad.dropout_apply(c, ad.make_dropout_mask(c.shape, dropout, rng))
    one_minus_g = ad.add_const(ad.scale(g, -1.0), 1.0)
    return ad.add(ad.mul(g, c), ad.mul(one_minus_g, x))


def encode(enc: EncodedSentence, params: dict, cfg: ModelConfig,
           rng=None, train: bool = False) -> Tensor:
    """Mixed-layer token representations, shape (n, d_model)."""
    n = enc.n
    if n > cfg.max_len:
        raise ValueError(f"sentence length {n} exceeds max_len {cfg.max_len}")
    if train and rng is None:
        raise ValueError("training-mode encode needs an rng for dropout masks")

    ids = enc.ids
    if train and cfg.word_dropout > 0.0:
        # expose the model to UNK-heavy inputs so unseen vocabularies stay
        # parseable; the mask reuses the dropout rng stream
        ids = np.where(rng.random(n) < cfg.word_dropout, 0, ids)
    words = ad.embedding(params["enc.word_emb"], ids)
    pos = ad.embedding(params["enc.pos_emb"], np.arange(n))
    b0 = ad.add(words, pos)
    if train and cfg.emb_dropout > 0.0:
        b0 = ad.dropout_apply(b0, ad.make_dropout_mask(b0.shape, cfg.emb_dropout, rng))

    layers = [b0]
    x = b0
    for i in range(cfg.n_layers):
        pre = f"enc.l{i}."
        if cfg.block == "attention":
            x = _attention_block(x, params, pre, cfg.d_model,
                                 cfg.hidden_dropout, rng, train)
        else:
            x = _gated_block(x, params, pre, cfg.hidden_dropout, rng, train)
        layers.append(x)

    weights = ad.softmax(params["mix.logits"], axis=0)
    mixed = ad.mul_scalar(layers[0], ad.pick(weights, 0))
    for i in range(1, len(layers)):
        mixed = ad.add(mixed, ad.mul_scalar(layers[i], ad.pick(weights, i)))
    return ad.mul_scalar(mixed, params["mix.scale"])


def _with_root(e: Tensor, params: dict) -> Tensor:
    return ad.concat([params["dec.root"], e], axis=0)


def _arc_scores_tensor(ef: Tensor, params: dict) -> Tensor:
    """Raw biaffine arc scores, (n+1, n+1), scores[h][d]; unmasked."""
    hh = ad.tanh(_linear(ef, params["dec.arc_h.w"], params["dec.arc_h.b"]))
    hd = ad.tanh(_linear(ef, params["dec.arc_d.w"], params["dec.arc_d.b"]))
    bilinear = ad.matmul(ad.matmul(hh, params["dec.arc.u"]), ad.transpose(hd))
    head_bias = ad.matmul(hh, params["dec.arc.wh"])          # (n+1, 1)
    dep_bias = ad.transpose(ad.matmul(hd, params["dec.arc.wd"]))  # (1, n+1)
    return ad.add(ad.add(ad.add(bilinear, head_bias), dep_bias),
                  params["dec.arc.b"])


def score_arcs(enc: EncodedSentence, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Masked score matrix for decoding: column 0 and diagonal at -inf."""
    e = encode(enc, params, cfg, train=False)
    s = _arc_scores_tensor(_with_root(e, params), params).data.copy()
    np.fill_diagonal(s, -np.inf)
    s[:, 0] = -np.inf
    return s


_ARC_INDEX_CACHE: dict[int, tuple] = {}


def _arc_candidate_indices(n: int):
    """Row/col index matrices selecting, per dependent, its n candidate heads."""
    cached = _ARC_INDEX_CACHE.get(n)
    if cached is None:
        rows = np.empty((n, n), dtype=np.intp)
        for i in range(n):
            d = i + 1
            rows[i] = [h for h in range(n + 1) if h != d]
        cols = np.repeat(np.arange(1, n + 1), n).reshape(n, n)
        cached = _ARC_INDEX_CACHE[n] = (rows, cols)
    return cached


def _label_scores_tensor(ef: Tensor, heads: np.ndarray, params: dict,
                         n_labels: int) -> Tensor:
    """Per-token label scores (n, K), conditioned on the given heads."""
    lh = ad.tanh(_linear(ef, params["dec.lab_h.w"], params["dec.lab_h.b"]))
    ld = ad.tanh(_linear(ef, params["dec.lab_d.w"], params["dec.lab_d.b"]))
    n = len(heads)
    g = ad.gather_rows(lh, np.asarray(heads, dtype=np.intp))
    dmat = ad.gather_rows(ld, np.arange(1, n + 1))
    # all label bilinears at once: block j of g @ u is g @ U_j
    prod = ad.mul(ad.matmul(g, params["dec.lab.u"]), ad.tile_cols(dmat, n_labels))
    scores = ad.block_sum_cols(prod, n_labels)
    scores = ad.add(scores, ad.matmul(g, params["dec.lab.wh"]))
    scores = ad.add(scores, ad.matmul(dmat, params["dec.lab.wd"]))
    return ad.add(scores, params["dec.lab.b"])


def sentence_loss(enc: EncodedSentence, params: dict, cfg: ModelConfig,
                  vocab: Vocab, rng=None, train: bool = False) -> Tensor:
    """Summed arc NLL plus label NLL; labels conditioned on gold heads."""
    if np.any(enc.label_ids < 0):
        missing = [l for l, i in zip(enc.gold_labels, enc.label_ids) if i < 0]
        raise KeyError(f"labels outside the vocabulary: {sorted(set(missing))}")
    n = enc.n
    e = encode(enc, params, cfg, rng=rng, train=train)
    ef = _with_root(e, params)

    s = _arc_scores_tensor(ef, params)
    rows, cols = _arc_candidate_indices(n)
    cand = ad.gather_nd(s, rows, cols)  # (n, n): dependent d's candidate heads
    gold_pos = np.where(enc.heads < np.arange(1, n + 1), enc.heads, enc.heads - 1)
    arc_nll = ad.nll_sum(ad.log_softmax(cand, axis=1), gold_pos)

    lab = _label_scores_tensor(ef, enc.heads, params, vocab.n_labels)
    lab_nll = ad.nll_sum(ad.log_softmax(lab, axis=1), enc.label_ids)
    return ad.add(arc_nll, lab_nll)


def batch_loss(batch, params: dict, cfg: ModelConfig, vocab: Vocab,
               rng=None, train: bool = False) -> Tensor:
    """Mean of per-sentence losses over a batch."""
    if not batch:
        raise ValueError("empty batch")
    total = sentence_loss(batch[0], params, cfg, vocab, rng=rng, train=train)
    for enc in batch[1:]:
        total = ad.add(total, sentence_loss(enc, params, cfg, vocab,
                                            rng=rng, train=train))
    return ad.scale(total, 1.0 / len(batch))


def batch_gradients(batch, params: dict, cfg: ModelConfig, vocab: Vocab,
                    rng=None, train: bool = True):
    """(loss value, grads dict) for one batch under a fresh tape."""
    with ad.GradientTape() as tape:
        for t in params.values():
            tape.watch(t)
        loss = batch_loss(batch, params, cfg, vocab, rng=rng, train=train)
    grads = ad.backward(tape, loss)
    return loss.item(), {name: grads.of(t) for name, t in params.items()}


def predict(enc: EncodedSentence, params: dict, cfg: ModelConfig, vocab: Vocab):
    """Decode heads with the single-root MST and label them greedily.

    Returns (heads, labels): heads is (n,) with 1-based positions (0 root),
    labels a list of strings. Label argmax breaks ties at the lowest id.
    """
    e = encode(enc, params, cfg, train=False)
    ef = _with_root(e, params)
    s = _arc_scores_tensor(ef, params).data.copy()
    np.fill_diagonal(s, -np.inf)
    s[:, 0] = -np.inf
    heads = mst_single_root(s)[1:]
    lab = _label_scores_tensor(ef, heads, params, vocab.n_labels).data
    label_ids = np.argmax(lab, axis=1)
    return heads, [vocab.labels[i] for i in label_ids]


# ---- checkpoints ----

CHECKPOINT_VERSION = 1


class CheckpointMismatchError(RuntimeError):
    """Checkpoint was produced under a different configuration."""


def config_hash_of(payload: dict) -> str:
    import hashlib
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, params: dict, vocab: Vocab, cfg: ModelConfig,
                    config_hash: str, meta: dict | None = None) -> None:
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "model_config": asdict(cfg),
        "vocab": {"forms": vocab.forms, "labels": vocab.labels},
        "meta": meta or {},
        "params": {
            name: {
                "shape": list(t.data.shape),
                "dtype": str(t.data.dtype),
                "data": base64.b64encode(
                    np.ascontiguousarray(t.data).astype("<f8").tobytes()).decode("ascii"),
            }
            for name, t in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path, expected_config_hash: str | None = None):
    """Returns (params, vocab, cfg, meta); rejects mismatched config hashes."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(
            f"unsupported checkpoint version {blob.get('format_version')}")
    if expected_config_hash is not None and blob["config_hash"] != expected_config_hash:
        raise CheckpointMismatchError(
            f"checkpoint config hash {blob['config_hash'][:12]}... does not match "
            f"expected {expected_config_hash[:12]}...")
    cfg = ModelConfig(**blob["model_config"])
    vocab = Vocab(forms=blob["vocab"]["forms"], labels=blob["vocab"]["labels"])
    params = {}
    for name, spec in blob["params"].items():
        raw = np.frombuffer(base64.b64decode(spec["data"]), dtype="<f8")
        params[name] = Tensor(raw.reshape(spec["shape"]).astype(np.float64))
    return params, vocab, cfg, blob.get("meta", {})
