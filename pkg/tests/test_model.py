"""Parser model: scoring math, losses, prediction, checkpoints, vocab."""

import math

import numpy as np
import pytest

from helpers import make_sentence, make_treebank
from metadep import autodiff as ad
from metadep.conllu import Treebank
from metadep.gradcheck import finite_difference_gradient, max_rel_error
from metadep.model import (
    CheckpointMismatchError,
    ModelConfig,
    Vocab,
    batch_gradients,
    batch_loss,
    build_vocab,
    config_hash_of,
    encode,
    encode_sentence,
    encode_treebank,
    group_of,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    score_arcs,
    sentence_loss,
)

TINY = ModelConfig(d_model=6, n_layers=2, block="attention", d_arc=5,
                   d_label=4, max_len=8, emb_dropout=0.2, hidden_dropout=0.33)


def _toy_data(labels=("amod", "nsubj", "obj")):
    sents = [
        make_sentence([2, 0, 2], deprels=["nsubj", "amod", "obj"],
                      forms=["sue", "sees", "owls"]),
        make_sentence([0, 1], deprels=["amod", "obj"], forms=["sees", "owls"]),
        make_sentence([2, 0, 2, 3], deprels=["nsubj", "amod", "obj", "obj"],
                      forms=["sue", "sees", "owls", "owls"]),
    ]
    tb = Treebank(sents, language_tag="toy")
    vocab = build_vocab([tb], freq_cutoff=2)
    return tb, vocab


def test_vocab_cutoff_unk_and_sorted_ids():
    tb, vocab = _toy_data()
    # "sue" x2, "sees" x3, "owls" x3 survive; nothing else
    assert vocab.forms[0] == "<unk>"
    assert vocab.forms[1:] == sorted(vocab.forms[1:])
    assert set(vocab.forms[1:]) == {"sue", "sees", "owls"}
    assert vocab.labels == ["amod", "nsubj", "obj"]
    enc = encode_sentence(make_sentence([0], forms=["Mystery"]), vocab)
    assert enc.ids[0] == 0  # unknown and case-folded forms hit UNK


def test_vocab_lowercases_before_counting():
    tb = Treebank([make_sentence([0, 1], forms=["Word", "word"])])
    vocab = build_vocab([tb], freq_cutoff=2)
    assert "word" in vocab.forms


def test_uniform_scorers_give_closed_form_loss():
    # biaffine weights start at zero: arcs and labels are exactly uniform
    tb, vocab = _toy_data()
    cfg = TINY
    params = init_params(cfg, vocab, seed=3)
    enc = encode_treebank(tb, vocab)[2]  # n = 4
    n, k = enc.n, vocab.n_labels
    expected = n * math.log(n) + n * math.log(k)
    loss = sentence_loss(enc, params, cfg, vocab, train=False)
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_arc_scores_match_hand_bilinear_form():
    cfg = ModelConfig(d_model=2, n_layers=0, block="gated", d_arc=2, d_label=2,
                      max_len=4, emb_dropout=0.0, hidden_dropout=0.0)
    vocab = Vocab(forms=["<unk>", "a", "b"], labels=["x", "y"])
    params = init_params(cfg, vocab, seed=0)
    params["enc.word_emb"].data[:] = [[0.0, 0.0], [0.3, -0.2], [-0.5, 0.8]]
    params["enc.pos_emb"].data[:] = [[0.1, 0.1], [-0.1, 0.2], [0.0, 0.0], [0.0, 0.0]]
    params["dec.root"].data[:] = [[0.25, -0.4]]
    params["dec.arc_h.w"].data[:] = np.eye(2)
    params["dec.arc_d.w"].data[:] = [[0.5, 1.0], [-1.0, 0.0]]
    params["dec.arc.u"].data[:] = [[0.5, -1.0], [2.0, 0.0]]
    params["dec.arc.wh"].data[:] = [[0.3], [-0.2]]
    params["dec.arc.wd"].data[:] = [[0.1], [0.4]]
    params["dec.arc.b"].data[...] = 0.7

    sent = make_sentence([2, 0], forms=["a", "b"], deprels=["x", "y"])
    enc = encode_sentence(sent, vocab)
    s = score_arcs(enc, params, cfg)

    # independent recomputation with plain numpy
    e = params["enc.word_emb"].data[[1, 2]] + params["enc.pos_emb"].data[:2]
    ef = np.vstack([params["dec.root"].data, e])
    hh = np.tanh(ef @ np.eye(2))
    hd = np.tanh(ef @ params["dec.arc_d.w"].data)
    want = (hh @ params["dec.arc.u"].data @ hd.T
            + (hh @ params["dec.arc.wh"].data)
            + (hd @ params["dec.arc.wd"].data).T
            + 0.7)
    for h in range(3):
        for d in range(3):
            if d == 0 or h == d:
                assert s[h, d] == -np.inf
            else:
                assert s[h, d] == pytest.approx(want[h, d], rel=1e-12)


def test_full_model_gradients_match_finite_differences():
    tb, vocab = _toy_data()
    cfg = TINY
    params = init_params(cfg, vocab, seed=11)
    sent = make_sentence([2, 0, 2, 3, 2],
                         deprels=["nsubj", "amod", "obj", "obj", "amod"],
                         forms=["sue", "sees", "owls", "owls", "sue"])
    enc = encode_sentence(sent, vocab)

    def loss_value():
        return sentence_loss(enc, params, cfg, vocab, train=False).item()

    with ad.GradientTape() as tape:
        for t in params.values():
            tape.watch(t)
        loss = sentence_loss(enc, params, cfg, vocab, train=False)
    grads = ad.backward(tape, loss)

    worst = {}
    for name, t in params.items():
        def f(arr, _t=t):
            _t.data = arr.copy()
            return loss_value()
        saved = t.data.copy()
        numeric = finite_difference_gradient(f, saved.copy())
        t.data = saved
        worst[name] = max_rel_error(grads.of(t), numeric)
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    assert not bad, f"gradient mismatches: {bad}"


def test_gated_block_gradients_too():
    tb, vocab = _toy_data()
    cfg = ModelConfig(d_model=5, n_layers=2, block="gated", d_arc=4, d_label=3,
                      max_len=8)
    params = init_params(cfg, vocab, seed=5)
    enc = encode_treebank(tb, vocab)[0]
    with ad.GradientTape() as tape:
        for t in params.values():
            tape.watch(t)
        loss = sentence_loss(enc, params, cfg, vocab, train=False)
    grads = ad.backward(tape, loss)
    for name in ("enc.l0.wg", "enc.l1.wc", "mix.logits", "mix.scale"):
        t = params[name]
        def f(arr, _t=t):
            _t.data = arr.copy()
            return sentence_loss(enc, params, cfg, vocab, train=False).item()
        saved = t.data.copy()
        numeric = finite_difference_gradient(f, saved.copy())
        t.data = saved
        assert max_rel_error(grads.of(t), numeric) < 1e-4


def test_train_mode_needs_rng_and_is_seeded():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    enc = encode_treebank(tb, vocab)[0]
    with pytest.raises(ValueError):
        encode(enc, params, TINY, train=True)
    # nonzero scorer so the loss actually depends on the encoder output
    params["dec.arc.u"].data[:] = np.random.default_rng(0).normal(size=(5, 5))
    l1 = sentence_loss(enc, params, TINY, vocab,
                       rng=np.random.default_rng(4), train=True).item()
    l2 = sentence_loss(enc, params, TINY, vocab,
                       rng=np.random.default_rng(4), train=True).item()
    l3 = sentence_loss(enc, params, TINY, vocab,
                       rng=np.random.default_rng(5), train=True).item()
    assert l1 == l2
    assert l1 != l3


def test_eval_mode_is_deterministic_without_rng():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    enc = encode_treebank(tb, vocab)[0]
    a = sentence_loss(enc, params, TINY, vocab, train=False).item()
    b = sentence_loss(enc, params, TINY, vocab, train=False).item()
    assert a == b


def test_sentence_longer_than_position_table_rejected():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    long_sent = make_sentence([0] + [1] * 8, deprels=["amod"] * 9,
                              forms=["sees"] * 9)
    enc = encode_sentence(long_sent, vocab)
    with pytest.raises(ValueError, match="max_len"):
        encode(enc, params, TINY, train=False)


def test_unknown_training_label_is_an_error():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    alien = encode_sentence(make_sentence([0], deprels=["zzz"], forms=["sees"]),
                            vocab)
    with pytest.raises(KeyError, match="zzz"):
        sentence_loss(alien, params, TINY, vocab)


def test_batch_loss_is_mean_of_sentence_losses():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    encs = encode_treebank(tb, vocab)
    per = [sentence_loss(e, params, TINY, vocab).item() for e in encs]
    total = batch_loss(encs, params, TINY, vocab).item()
    assert total == pytest.approx(sum(per) / len(per), rel=1e-12)
    with pytest.raises(ValueError):
        batch_loss([], params, TINY, vocab)


def test_batch_gradients_returns_every_parameter():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=0)
    encs = encode_treebank(tb, vocab)
    value, grads = batch_gradients(encs, params, TINY, vocab, train=False)
    assert set(grads) == set(params)
    assert np.isfinite(value)
    assert any(np.abs(g).sum() > 0 for g in grads.values())


def test_predict_returns_valid_tree_and_known_labels():
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=2)
    for enc in encode_treebank(tb, vocab):
        heads, labels = predict(enc, params, TINY, vocab)
        assert len(heads) == enc.n and len(labels) == enc.n
        assert list(heads).count(0) == 1
        assert all(l in vocab.labels for l in labels)
        for d in range(1, enc.n + 1):  # acyclic: every token reaches root
            u, hops = d, 0
            while u != 0:
                u = int(heads[u - 1])
                hops += 1
                assert hops <= enc.n


def test_group_assignment():
    assert group_of("enc.word_emb") == "encoder"
    assert group_of("enc.l0.wq") == "encoder"
    assert group_of("dec.arc.u") == "decoder"
    assert group_of("mix.logits") == "decoder"


def test_checkpoint_roundtrip_and_hash_guard(tmp_path):
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=9)
    h = config_hash_of({"model": "tiny", "seed": 9})
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, vocab, TINY, h, meta={"step": 7})
    p2, v2, cfg2, meta = load_checkpoint(path, expected_config_hash=h)
    assert cfg2 == TINY
    assert v2.forms == vocab.forms and v2.labels == vocab.labels
    assert meta == {"step": 7}
    for name, t in params.items():
        np.testing.assert_array_equal(p2[name].data, t.data)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected_config_hash="0" * 64)


def test_checkpoint_bytes_are_deterministic(tmp_path):
    tb, vocab = _toy_data()
    params = init_params(TINY, vocab, seed=9)
    h = config_hash_of({"x": 1})
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, params, vocab, TINY, h)
    save_checkpoint(b, params, vocab, TINY, h)
    assert a.read_bytes() == b.read_bytes()


def test_config_hash_is_order_insensitive_and_value_sensitive():
    assert config_hash_of({"a": 1, "b": 2}) == config_hash_of({"b": 2, "a": 1})
    assert config_hash_of({"a": 1}) != config_hash_of({"a": 2})
