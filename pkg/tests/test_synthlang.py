"""Synthetic language generator tests.

Statistical properties are checked against binomial confidence intervals
(4 sigma) and structural properties against the CoNLL-U validator by
emitting and re-parsing, which runs full tree validation.
"""

import math

import numpy as np
import pytest

from metadep import conllu
from metadep import synthlang as sl
from metadep.model import build_vocab, encode_treebank


def _binomial_ok(observed, n, p, z=4.0):
    sd = math.sqrt(p * (1.0 - p) / n)
    return abs(observed / n - p) <= z * sd


def test_generation_is_deterministic():
    spec = sl.default_spec("aa", seed=5)
    a = conllu.emit_conllu(sl.generate_treebank(spec, 50, seed=9))
    b = conllu.emit_conllu(sl.generate_treebank(spec, 50, seed=9))
    c = conllu.emit_conllu(sl.generate_treebank(spec, 50, seed=10))
    assert a == b
    assert a != c


def test_default_spec_deterministic_and_distinct():
    s1 = sl.default_spec("aa", seed=3)
    s2 = sl.default_spec("aa", seed=3)
    s3 = sl.default_spec("bb", seed=4)
    assert s1 == s2
    assert s1.dep_before_head != s3.dep_before_head


def test_all_trees_survive_strict_reparse():
    spec = sl.default_spec("cc", seed=2)
    tb = sl.generate_treebank(spec, 200, seed=1)
    reparsed = conllu.parse_conllu(conllu.emit_conllu(tb), language_tag="cc")
    assert len(reparsed) == len(tb)
    for a, b in zip(tb.sentences, reparsed.sentences):
        assert a.heads() == b.heads()
        assert a.deprels() == b.deprels()


def test_length_bounds_respected():
    spec = sl.spec_with(sl.default_spec("dd", seed=8), min_len=4, max_len=11)
    tb = sl.generate_treebank(spec, 150, seed=2)
    lens = [len(s) for s in tb.sentences]
    assert min(lens) >= 4
    assert max(lens) <= 11


def test_full_label_inventory_appears():
    spec = sl.default_spec("ee", seed=1)
    tb = sl.generate_treebank(spec, 300, seed=7)
    seen = set()
    for s in tb.sentences:
        seen.update(s.deprels())
    assert seen == set(sl.LABELS)


def test_direction_probabilities_govern_linear_order():
    base = sl.default_spec("ff", seed=4)
    forced = sl.spec_with(base, nonprojective_rate=0.0,
                          dep_before_head={**base.dep_before_head,
                                           "obj": 0.9, "det": 0.15})
    tb = sl.generate_treebank(forced, 400, seed=11)
    counts = {"obj": [0, 0], "det": [0, 0]}
    for s in tb.sentences:
        for t in s.tokens:
            if t.deprel in counts:
                counts[t.deprel][0] += 1
                counts[t.deprel][1] += int(t.index < t.head)
    for lab, p in (("obj", 0.9), ("det", 0.15)):
        total, before = counts[lab]
        assert total > 100
        assert _binomial_ok(before, total, p), (lab, before / total)


def test_nonprojective_rate_hit_and_validated():
    spec = sl.spec_with(sl.default_spec("gg", seed=6), nonprojective_rate=0.5)
    tb, stats = sl.generate_treebank_with_stats(spec, 400, seed=3)
    # attempts follow the configured Bernoulli rate
    assert _binomial_ok(stats.n_rewrite_attempted, 400, 0.5)
    # achieved counts agree with an independent projectivity scan
    ps = conllu.projectivity_stats(tb)
    assert ps.n_nonprojective == stats.n_nonprojective
    # rewrites almost always succeed on sentences of this length
    assert stats.n_nonprojective >= 0.8 * stats.n_rewrite_attempted
    assert stats.n_rewrite_failed == stats.n_rewrite_attempted - stats.n_nonprojective


def test_zero_rate_means_fully_projective():
    spec = sl.spec_with(sl.default_spec("hh", seed=9), nonprojective_rate=0.0)
    tb, stats = sl.generate_treebank_with_stats(spec, 200, seed=5)
    assert stats.n_rewrite_attempted == 0
    assert conllu.projectivity_stats(tb).n_nonprojective == 0


def test_shared_vocab_fraction():
    spec = sl.spec_with(sl.default_spec("ii", seed=12), shared_vocab_frac=0.3)
    tb = sl.generate_treebank(spec, 300, seed=4)
    total = shared = 0
    for s in tb.sentences:
        for form in s.forms():
            total += 1
            if form.startswith("sh_"):
                shared += 1
            else:
                assert form.startswith("ii_")
    assert _binomial_ok(shared, total, 0.3)


def test_typology_features_track_spec():
    base = sl.default_spec("jj", seed=2)
    spec = sl.spec_with(base, nonprojective_rate=0.2,
                        dep_before_head={**base.dep_before_head,
                                         "obj": 0.9, "amod": 0.1})
    feats = typo = sl.typology_of(spec)
    assert len(feats) == 16
    assert set(feats.values()) <= {0, 1}
    assert feats["obj_before_head"] == 1
    assert feats["amod_before_head"] == 0
    assert feats["allows_nonprojective"] == 1
    flat = sl.spec_with(spec, nonprojective_rate=0.0)
    assert sl.typology_of(flat)["allows_nonprojective"] == 0
    assert typo == sl.typology_of(spec)  # pure function of the spec


def test_spec_with_overrides_and_rejects_unknown():
    spec = sl.default_spec("kk", seed=1)
    assert sl.spec_with(spec, vocab_size=50).vocab_size == 50
    with pytest.raises(TypeError):
        sl.spec_with(spec, no_such_field=1)


def test_generated_bank_feeds_the_encoder():
    spec = sl.default_spec("ll", seed=3)
    tb = sl.generate_treebank(spec, 60, seed=6)
    vocab = build_vocab([tb], freq_cutoff=2)
    encoded = encode_treebank(tb, vocab)
    assert len(encoded) == 60
    assert all(e.ids.shape[0] == len(s) for e, s in zip(encoded, tb.sentences))
    assert set(sl.LABELS) >= set(vocab.labels)


def test_sentence_count_guard():
    with pytest.raises(ValueError):
        sl.generate_treebank(sl.default_spec("mm", seed=1), 0, seed=1)
