"""Seeded synthetic languages for controlled cross-lingual experiments.

A language is a small dependency grammar: per-relation attachment
probabilities, per-relation linearization direction (probability that the
dependent precedes its head), a Zipf-weighted vocabulary with a language
prefix plus a shared-form fraction, and a target rate of non-projective
sentences. Sentences are built top-down, linearized projectively, and a
chosen fraction is made non-projective by cutting one subtree's token
block and reinserting it elsewhere; the rewrite is kept only if the
result really is non-projective, so every achieved count is validated.

Generation is fully determined by (spec, n_sentences, seed).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .conllu import Sentence, Token, Treebank, heads_are_projective

LABELS = ("root", "nsubj", "obj", "obl", "nmod", "amod", "det",
          "case", "mark", "advmod", "cc", "conj")

_LABEL_CAT = {"nsubj": "NOUN", "obj": "NOUN", "obl": "NOUN", "nmod": "NOUN",
              "amod": "ADJ", "det": "DET", "case": "ADP", "mark": "SCONJ",
              "advmod": "ADV", "cc": "CCONJ", "conj": "VERB"}

# closed classes keep tiny vocabularies regardless of spec.vocab_size
_CLOSED_SIZE = {"DET": 4, "ADP": 6, "ADV": 8, "CCONJ": 3, "SCONJ": 3}

# canonical within-side dependent order, shared by all languages
_PRECEDENCE = {"mark": 0, "cc": 1, "det": 2, "amod": 3, "nsubj": 4,
               "advmod": 5, "obl": 6, "nmod": 7, "obj": 8, "case": 9,
               "conj": 10}

_BASE_ATTACH = {"nsubj": 0.9, "obj": 0.65, "obl": 0.4, "advmod": 0.35,
                "conj": 0.2, "cc": 0.85, "mark": 0.15, "det": 0.6,
                "amod": 0.45, "case": 0.5, "nmod": 0.3}


@dataclass
class GrammarSpec:
    """Everything that defines one synthetic language."""

    language_tag: str
    dep_before_head: dict  # label -> P(dependent linearizes before head)
    attach_probs: dict  # label -> attachment probability
    nonprojective_rate: float = 0.0
    vocab_size: int = 120
    shared_vocab_frac: float = 0.15
    min_len: int = 3
    max_len: int = 16


@dataclass
class GenStats:
    n_sentences: int = 0
    n_rewrite_attempted: int = 0
    n_nonprojective: int = 0
    n_rewrite_failed: int = 0
    total_tokens: int = 0

    @property
    def mean_len(self) -> float:
        return self.total_tokens / max(1, self.n_sentences)


def default_spec(language_tag: str, seed: int, nonprojective_rate=None,
                 vocab_size: int = 120, shared_vocab_frac: float = 0.15,
                 finality=None) -> GrammarSpec:
    """Draw a language around a latent head-finality coordinate.

    Direction probabilities for the core relations track one latent
    coordinate so languages are internally consistent, the way real
    word-order features correlate; jitter keeps any two languages
    distinct. Pass finality in [0, 1] to place a language deliberately
    (0 head-initial, 1 head-final) instead of drawing it.
    """
    rng = np.random.default_rng(seed)
    drawn = float(rng.uniform())
    finality = drawn if finality is None else float(finality)
    if not 0.0 <= finality <= 1.0:
        raise ValueError(f"finality {finality} outside [0, 1]")

    def near(x, s=0.12):
        return float(np.clip(x + rng.normal(0.0, s), 0.05, 0.95))

    dep_before_head = {
        "nsubj": near(0.55 + 0.35 * finality),
        "obj": near(finality),
        "obl": near(finality),
        "nmod": near(finality),
        "amod": near(finality),
        "det": near(0.3 + 0.6 * finality),
        "case": near(finality),
        "mark": near(0.2 + 0.6 * finality),
        "advmod": near(0.4 + 0.4 * finality),
        "cc": near(0.8 - 0.3 * finality),
        "conj": near(0.08, 0.04),  # second conjunct nearly always follows
    }
    attach = {k: near(v, 0.08) for k, v in _BASE_ATTACH.items()}
    if nonprojective_rate is None:
        nonprojective_rate = float(rng.uniform(0.0, 0.25))
    return GrammarSpec(language_tag=language_tag,
                       dep_before_head=dep_before_head,
                       attach_probs=attach,
                       nonprojective_rate=nonprojective_rate,
                       vocab_size=vocab_size,
                       shared_vocab_frac=shared_vocab_frac)


def typology_of(spec: GrammarSpec) -> dict:
    """Binary feature vector describing the grammar, for similarity work."""
    feats = {}
    for lab in LABELS[1:]:
        feats[f"{lab}_before_head"] = int(spec.dep_before_head[lab] > 0.5)
    for lab in ("obl", "nmod", "conj", "mark"):
        feats[f"has_{lab}"] = int(spec.attach_probs[lab] >= 0.3)
    feats["allows_nonprojective"] = int(spec.nonprojective_rate > 0.05)
    return feats


# ---- tree construction ----

def _add(nodes, parent, label):
    nodes.append({"parent": parent, "label": label, "cat": _LABEL_CAT[label]})
    return len(nodes) - 1


def _expand_noun(nodes, idx, depth, spec, rng):
    ap = spec.attach_probs
    if rng.random() < ap["det"]:
        _add(nodes, idx, "det")
    if rng.random() < ap["amod"]:
        _add(nodes, idx, "amod")
        if rng.random() < ap["amod"] * 0.4:
            _add(nodes, idx, "amod")
    if rng.random() < ap["case"]:
        _add(nodes, idx, "case")
    if depth < 3 and rng.random() < ap["nmod"] * (0.5 ** depth):
        _expand_noun(nodes, _add(nodes, idx, "nmod"), depth + 1, spec, rng)


def _expand_verb(nodes, idx, depth, spec, rng):
    ap = spec.attach_probs
    damp = 1.0 if depth == 0 else 0.6
    if rng.random() < ap["nsubj"] * damp:
        _expand_noun(nodes, _add(nodes, idx, "nsubj"), depth, spec, rng)
    if rng.random() < ap["obj"] * damp:
        _expand_noun(nodes, _add(nodes, idx, "obj"), depth, spec, rng)
    if rng.random() < ap["obl"] * damp:
        _expand_noun(nodes, _add(nodes, idx, "obl"), depth, spec, rng)
    if rng.random() < ap["advmod"]:
        _add(nodes, idx, "advmod")
    if rng.random() < ap["mark"]:
        _add(nodes, idx, "mark")
    if depth == 0 and rng.random() < ap["conj"]:
        conj = _add(nodes, idx, "conj")
        if rng.random() < ap["cc"]:
            _add(nodes, conj, "cc")
        _expand_verb(nodes, conj, depth + 1, spec, rng)


def _linearize(nodes, spec, rng):
    """Projective order: each dependent's side drawn per relation."""
    children = defaultdict(list)
    for i in range(1, len(nodes)):
        children[nodes[i]["parent"]].append(i)

    def order(i):
        before, after = [], []
        for c in children[i]:
            lab = nodes[c]["label"]
            side = before if rng.random() < spec.dep_before_head[lab] else after
            side.append(c)
        key = lambda c: _PRECEDENCE[nodes[c]["label"]]
        seq = []
        for c in sorted(before, key=key):
            seq.extend(order(c))
        seq.append(i)
        for c in sorted(after, key=key):
            seq.extend(order(c))
        return seq

    return order(0)


def _heads_for_order(order, nodes):
    pos_of = {node: p for p, node in enumerate(order, start=1)}
    return [0 if nodes[node]["parent"] == -1 else pos_of[nodes[node]["parent"]]
            for node in order]


def _try_nonprojective(order, nodes, rng, attempts=30):
    """Cut one subtree's block and reinsert it; keep only a crossing result."""
    n = len(order)
    if n < 4:
        return order, False
    children = defaultdict(list)
    for i in range(1, len(nodes)):
        children[nodes[i]["parent"]].append(i)

    def descendants(i):
        out = {i}
        stack = [i]
        while stack:
            for c in children[stack.pop()]:
                out.add(c)
                stack.append(c)
        return out

    pos_of = {node: p for p, node in enumerate(order)}
    for _ in range(attempts):
        u = int(rng.integers(1, len(nodes)))
        block_nodes = descendants(u)
        if len(block_nodes) >= n:
            continue
        positions = sorted(pos_of[v] for v in block_nodes)
        start, width = positions[0], len(positions)
        rest = order[:start] + order[start + width:]
        gap = int(rng.integers(0, len(rest) + 1))
        if gap == start:
            continue
        candidate = rest[:gap] + order[start:start + width] + rest[gap:]
        if not heads_are_projective(_heads_for_order(candidate, nodes)):
            return candidate, True
    return order, False


@lru_cache(maxsize=32)
def _zipf_weights(size: int) -> tuple:
    w = 1.0 / np.arange(1, size + 1)
    return tuple((w / w.sum()).tolist())


def _sample_form(cat, spec, rng):
    size = _CLOSED_SIZE.get(cat, spec.vocab_size)
    idx = int(rng.choice(size, p=_zipf_weights(size)))
    if rng.random() < spec.shared_vocab_frac:
        return f"sh_{cat.lower()}{idx}"
    return f"{spec.language_tag}_{cat.lower()}{idx}"


def _build_sentence(spec, rng, sent_id):
    for _ in range(200):
        nodes = [{"parent": -1, "label": "root", "cat": "VERB"}]
        _expand_verb(nodes, 0, 0, spec, rng)
        if spec.min_len <= len(nodes) <= spec.max_len:
            break
    else:
        raise RuntimeError(
            f"could not draw a sentence within [{spec.min_len}, {spec.max_len}] tokens")
    order = _linearize(nodes, spec, rng)
    rewritten = False
    if rng.random() < spec.nonprojective_rate:
        order, rewritten = _try_nonprojective(order, nodes, rng)
        attempted = True
    else:
        attempted = False
    heads = _heads_for_order(order, nodes)
    entries = []
    for p, node in enumerate(order, start=1):
        form = _sample_form(nodes[node]["cat"], spec, rng)
        cols = (str(p), form, form, nodes[node]["cat"], "_", "_",
                str(heads[p - 1]), nodes[node]["label"], "_", "_")
        entries.append(Token(cols=cols, index=p, head=heads[p - 1]))
    sent = Sentence(comments=[f"# sent_id = {spec.language_tag}-{sent_id}"],
                    entries=entries)
    return sent, attempted, rewritten


def generate_treebank_with_stats(spec: GrammarSpec, n_sentences: int, seed: int):
    if n_sentences < 1:
        raise ValueError("need at least one sentence")
    rng = np.random.default_rng(seed)
    stats = GenStats()
    sentences = []
    for i in range(n_sentences):
        sent, attempted, rewritten = _build_sentence(spec, rng, i)
        sentences.append(sent)
        stats.n_sentences += 1
        stats.total_tokens += len(sent)
        if attempted:
            stats.n_rewrite_attempted += 1
            if rewritten:
                stats.n_nonprojective += 1
            else:
                stats.n_rewrite_failed += 1
    return Treebank(sentences, language_tag=spec.language_tag), stats


def generate_treebank(spec: GrammarSpec, n_sentences: int, seed: int) -> Treebank:
    tb, _ = generate_treebank_with_stats(spec, n_sentences, seed)
    return tb


def spec_with(spec: GrammarSpec, **overrides) -> GrammarSpec:
    """Copy a spec with field overrides (unknown names raise)."""
    return replace(spec, **overrides)
