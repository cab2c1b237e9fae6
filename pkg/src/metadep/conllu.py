"""CoNLL-U reading, writing, tree validation, and projectivity.

Files are 10 tab-separated columns per token line, # comment lines, and
blank-line sentence separators. Multiword range lines (id "a-b") and empty
nodes (id "i.j") are preserved verbatim for round-tripping but are never
scored and never take part in the tree. Emission reproduces a cleanly
parsed input byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("metadep.conllu")

N_COLS = 10


class ConlluFormatError(ValueError):
    """Malformed line: wrong column count, bad id, non-integer head."""


class TreeValidationError(ValueError):
    """Head arcs do not form a single tree hanging off the virtual root."""


@dataclass
class Token:
    cols: tuple  # the 10 raw columns, emitted verbatim
    index: int = -1  # position among regular tokens, 1-based; -1 for specials
    head: int = -1
    is_multiword: bool = False
    is_empty: bool = False

    @property
    def form(self) -> str:
        return self.cols[1]

    @property
    def upos(self) -> str:
        return self.cols[3]

    @property
    def deprel(self) -> str:
        return self.cols[7]


@dataclass
class Sentence:
    """One sentence: comment lines plus token entries in file order."""

    comments: list = field(default_factory=list)
    entries: list = field(default_factory=list)

    @property
    def tokens(self) -> list:
        """Regular (scorable) tokens only, in order."""
        return [t for t in self.entries if not (t.is_multiword or t.is_empty)]

    def __len__(self) -> int:
        return len(self.tokens)

    def heads(self) -> list:
        return [t.head for t in self.tokens]

    def deprels(self) -> list:
        return [t.deprel for t in self.tokens]

    def forms(self) -> list:
        return [t.form for t in self.tokens]


@dataclass
class Treebank:
    sentences: list
    language_tag: str = ""

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass
class ProjectivityStats:
    n_sentences: int
    n_nonprojective: int

    @property
    def nonproj_fraction(self) -> float:
        return self.n_nonprojective / self.n_sentences


def _parse_token_line(line: str, lineno: int) -> Token:
    cols = line.split("\t")
    if len(cols) != N_COLS:
        raise ConlluFormatError(
            f"line {lineno}: expected {N_COLS} tab-separated columns, got {len(cols)}")
    tid = cols[0]
    if "-" in tid:
        a, _, b = tid.partition("-")
        if not (a.isdigit() and b.isdigit() and int(a) <= int(b)):
            raise ConlluFormatError(f"line {lineno}: bad multiword range id '{tid}'")
        return Token(cols=tuple(cols), is_multiword=True)
    if "." in tid:
        a, _, b = tid.partition(".")
        if not (a.isdigit() and b.isdigit()):
            raise ConlluFormatError(f"line {lineno}: bad empty-node id '{tid}'")
        return Token(cols=tuple(cols), is_empty=True)
    if not tid.isdigit() or int(tid) < 1:
        raise ConlluFormatError(f"line {lineno}: bad token id '{tid}'")
    head_col = cols[6]
    try:
        head = int(head_col)
    except ValueError:
        raise ConlluFormatError(
            f"line {lineno}: non-integer head '{head_col}'") from None
    return Token(cols=tuple(cols), index=int(tid), head=head)


def validate_tree(sentence: Sentence, where: str = "") -> None:
    """Single root child, every head in range, acyclic, fully connected."""
    tokens = sentence.tokens
    n = len(tokens)
    if n == 0:
        raise TreeValidationError(f"{where}: sentence has no scorable tokens")
    for pos, tok in enumerate(tokens, start=1):
        if tok.index != pos:
            raise TreeValidationError(
                f"{where}: token ids not consecutive at position {pos} (saw {tok.index})")
        if not 0 <= tok.head <= n:
            raise TreeValidationError(
                f"{where}: token {pos} head {tok.head} outside [0, {n}]")
        if tok.head == pos:
            raise TreeValidationError(f"{where}: token {pos} is its own head")
    heads = [t.head for t in tokens]
    if heads.count(0) != 1:
        raise TreeValidationError(
            f"{where}: expected exactly one root-attached token, got {heads.count(0)}")
    # reachability from the virtual root covers both cycles and disconnection
    children = [[] for _ in range(n + 1)]
    for pos, h in enumerate(heads, start=1):
        children[h].append(pos)
    seen = [False] * (n + 1)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in children[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    if not all(seen[1:]):
        bad = next(i for i in range(1, n + 1) if not seen[i])
        raise TreeValidationError(
            f"{where}: token {bad} unreachable from root (cycle or disconnection)")


def parse_conllu(text: str, language_tag: str = "", skip_invalid: bool = False,
                 max_len: int | None = None) -> Treebank:
    """Parse a CoNLL-U document into a Treebank.

    Format problems always raise ConlluFormatError naming the line. Tree
    violations raise TreeValidationError by default; with skip_invalid the
    offending sentence is dropped with a logged warning instead. Sentences
    longer than max_len scorable tokens are dropped with a logged count.
    """
    sentences = []
    comments: list = []
    entries: list = []
    n_skipped_invalid = 0
    n_skipped_long = 0
    sent_start_line = 1

    def flush(lineno: int) -> None:
        nonlocal comments, entries, n_skipped_invalid, n_skipped_long
        if not comments and not entries:
            return
        sent = Sentence(comments=comments, entries=entries)
        comments, entries = [], []
        where = f"sentence starting at line {sent_start_line}"
        try:
            validate_tree(sent, where=where)
        except TreeValidationError as err:
            if skip_invalid:
                n_skipped_invalid += 1
                log.warning("skipping invalid sentence: %s", err)
                return
            raise
        if max_len is not None and len(sent) > max_len:
            n_skipped_long += 1
            return
        sentences.append(sent)

    in_sentence = False
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            flush(lineno)
            in_sentence = False
            continue
        if not in_sentence:
            sent_start_line = lineno
            in_sentence = True
        if line.startswith("#"):
            entries_seen = bool(entries)
            if entries_seen:
                raise ConlluFormatError(
                    f"line {lineno}: comment after token lines in one sentence")
            comments.append(line)
        else:
            entries.append(_parse_token_line(line, lineno))
    flush(-1)

    if n_skipped_invalid:
        log.warning("dropped %d sentence(s) failing tree validation", n_skipped_invalid)
    if n_skipped_long:
        log.warning("dropped %d sentence(s) longer than %d tokens",
                    n_skipped_long, max_len)
    return Treebank(sentences=sentences, language_tag=language_tag)


def load_treebank(path, language_tag: str = "", max_len: int | None = 60) -> Treebank:
    """Read a .conllu file leniently: invalid trees are skipped, not fatal."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_conllu(text, language_tag=language_tag, skip_invalid=True,
                        max_len=max_len)


def emit_sentence(sentence: Sentence) -> str:
    lines = list(sentence.comments)
    lines.extend("\t".join(t.cols) for t in sentence.entries)
    return "\n".join(lines) + "\n"


def emit_conllu(treebank: Treebank) -> str:
    """Inverse of parse_conllu for cleanly formatted input, byte for byte.

    Each sentence block ends with one blank line, the standard layout.
    """
    return "".join(emit_sentence(s) + "\n" for s in treebank.sentences)


# ---- projectivity ----

def _arcs(sentence: Sentence) -> list:
    return [(t.head, t.index) for t in sentence.tokens]


def heads_are_projective(heads) -> bool:
    """Projectivity of a 1-based head vector (heads[i] governs token i+1)."""
    spans = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    m = len(spans)
    for i in range(m):
        lo1, hi1 = spans[i]
        for j in range(i + 1, m):
            lo2, hi2 = spans[j]
            if lo1 < lo2 < hi1 < hi2 or lo2 < lo1 < hi2 < hi1:
                return False
    return True


def is_projective(sentence: Sentence) -> bool:
    """No two dependency arcs cross (strictly interleaved spans)."""
    return heads_are_projective([t.head for t in sentence.tokens])


def is_projective_by_dominance(sentence: Sentence) -> bool:
    """Every token strictly inside an arc's span descends from the arc's head.

    The dual of the crossing-arcs definition; the two agree on valid trees
    and both are exposed so that agreement stays testable.
    """
    heads = [0] + [t.head for t in sentence.tokens]  # parent lookup, 1-based

    def descends_from(w: int, h: int) -> bool:
        if h == 0:
            return True
        seen = 0
        while w != 0 and seen <= len(heads):
            if w == h:
                return True
            w = heads[w]
            seen += 1
        return False

    for h, d in _arcs(sentence):
        lo, hi = min(h, d), max(h, d)
        for w in range(lo + 1, hi):
            if not descends_from(w, h):
                return False
    return True


def projectivity_stats(treebank: Treebank) -> ProjectivityStats:
    if len(treebank.sentences) == 0:
        raise ValueError("projectivity stats of an empty treebank are undefined")
    n_bad = sum(0 if is_projective(s) else 1 for s in treebank.sentences)
    return ProjectivityStats(n_sentences=len(treebank.sentences),
                             n_nonprojective=n_bad)


def split_support(treebank: Treebank, size: int, rng_seed: int):
    """Sample a support set without replacement; return (support, remainder).

    Deterministic in rng_seed. Remainder keeps the original order of the
    sentences that were not drawn.
    """
    n = len(treebank.sentences)
    if not 0 <= size <= n:
        raise ValueError(f"support size {size} outside [0, {n}]")
    rng = np.random.default_rng(rng_seed)
    chosen = set(rng.permutation(n)[:size].tolist())
    support = [treebank.sentences[i] for i in sorted(chosen)]
    rest = [s for i, s in enumerate(treebank.sentences) if i not in chosen]
    return (Treebank(support, treebank.language_tag),
            Treebank(rest, treebank.language_tag))
