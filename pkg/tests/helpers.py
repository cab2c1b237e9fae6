"""Shared test utilities: random trees and synthetic Sentence construction."""

import numpy as np

from metadep.conllu import Sentence, Token, Treebank


def random_tree_heads(n, rng):
    """Random head vector for n tokens: exactly one root child, acyclic."""
    heads = [0] * (n + 1)  # 1-based; heads[0] unused
    perm = (rng.permutation(n) + 1).tolist()
    heads[perm[0]] = 0
    for i in range(1, n):
        heads[perm[i]] = perm[int(rng.integers(0, i))]
    return heads[1:]


def make_sentence(heads, deprels=None, forms=None, upos=None):
    """Build a Sentence from 1-based head assignments."""
    n = len(heads)
    deprels = deprels or ["dep"] * n
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    upos = upos or ["X"] * n
    entries = []
    for i in range(n):
        cols = (str(i + 1), forms[i], forms[i], upos[i], "_", "_",
                str(heads[i]), deprels[i], "_", "_")
        entries.append(Token(cols=cols, index=i + 1, head=heads[i]))
    return Sentence(comments=[], entries=entries)


def make_treebank(head_lists, language_tag="xx", labels=None):
    sents = []
    for heads in head_lists:
        sents.append(make_sentence(heads, deprels=labels and list(labels)[: len(heads)]))
    return Treebank(sents, language_tag=language_tag)


def random_sentence(n, rng, labels=("a", "b", "c")):
    heads = random_tree_heads(n, rng)
    deprels = [labels[int(rng.integers(0, len(labels)))] for _ in range(n)]
    return make_sentence(heads, deprels=deprels)
