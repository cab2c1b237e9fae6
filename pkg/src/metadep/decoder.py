"""Maximum spanning arborescence decoding for arc score matrices.

Scores are (n+1) x (n+1) arrays, scores[h][d], with the virtual root at
index 0. Column 0 and the diagonal are forced to -inf before decoding.
Ties prefer the lower head index at every greedy selection, which makes
decoding deterministic. Head vectors come back as int arrays of length
n+1 whose slot 0 holds the sentinel -1.

Three routes with very different trust profiles:
  * mst_single_root: Chu-Liu/Edmonds run once per candidate root child,
    keeping the best total, so exactly one token attaches to the root.
  * brute_force_heads: exhaustive enumeration over all valid single-root
    arborescences (n <= 8). The oracle the fast path is judged against.
  * greedy_heads: per-dependent argmax, no tree guarantee. Diagnostic only.
"""

from __future__ import annotations

import numpy as np

_MAX_BRUTE_N = 8
_VALID_VECTORS_CACHE: dict[int, np.ndarray] = {}


def _prepare(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {s.shape}")
    if s.shape[0] < 2:
        raise ValueError("score matrix needs at least one token beyond the root")
    if np.isnan(s).any():
        raise ValueError("score matrix contains NaN")
    s = s.copy()
    np.fill_diagonal(s, -np.inf)
    s[:, 0] = -np.inf
    return s


def _find_cycle(heads: np.ndarray):
    m = len(heads)
    state = [0] * m  # 0 unseen, 1 on current walk, 2 settled
    state[0] = 2
    for start in range(1, m):
        if state[start]:
            continue
        path = []
        u = start
        while state[u] == 0:
            state[u] = 1
            path.append(u)
            u = int(heads[u])
        if state[u] == 1:
            cycle = path[path.index(u):]
            for p in path:
                state[p] = 2
            return cycle
        for p in path:
            state[p] = 2
    return None


def _cle(scores: np.ndarray) -> np.ndarray:
    """Unconstrained maximum arborescence rooted at node 0 (recursive)."""
    m = scores.shape[0]
    heads = np.full(m, -1, dtype=np.int64)
    for d in range(1, m):
        h = int(np.argmax(scores[:, d]))  # first max = lowest head index
        if not np.isfinite(scores[h, d]):
            raise ValueError(f"node {d} has no finite incoming arc")
        heads[d] = h
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    in_cycle = np.zeros(m, dtype=bool)
    in_cycle[cycle] = True
    rest = [i for i in range(m) if not in_cycle[i]]  # rest[0] == 0 always
    k = len(rest)
    sub = np.full((k + 1, k + 1), -np.inf)
    for ni, i in enumerate(rest):
        for nj, j in enumerate(rest):
            sub[ni, nj] = scores[i, j]

    cycle_in_score = {d: scores[heads[d], d] for d in cycle}
    enter_choice = {}  # sub head index -> (old head, cycle node whose arc breaks)
    for ni, h in enumerate(rest):
        vals = [scores[h, d] - cycle_in_score[d] for d in cycle]
        bi = int(np.argmax(vals))
        sub[ni, k] = vals[bi]
        enter_choice[ni] = (h, cycle[bi])
    leave_choice = {}  # sub dependent index -> best head inside the cycle
    for nj, d in enumerate(rest):
        if d == 0:
            continue
        vals = [scores[h, d] for h in cycle]
        bi = int(np.argmax(vals))
        sub[k, nj] = vals[bi]
        leave_choice[nj] = cycle[bi]

    sub_heads = _cle(sub)
    result = heads.copy()  # cycle arcs stay except the one the entry breaks
    old_h, broken_d = enter_choice[int(sub_heads[k])]
    result[broken_d] = old_h
    for nj in range(1, k):
        d_old = rest[nj]
        h_new = int(sub_heads[nj])
        result[d_old] = leave_choice[nj] if h_new == k else rest[h_new]
    return result


def tree_score(scores: np.ndarray, heads: np.ndarray) -> float:
    s = np.asarray(scores, dtype=np.float64)
    total = 0.0
    for d in range(1, len(heads)):
        total += s[int(heads[d]), d]
    return total


def mst_single_root(scores: np.ndarray) -> np.ndarray:
    """Best arborescence with exactly one child of the root.

    Runs Chu-Liu/Edmonds once per candidate root child r with all other
    root arcs masked, and keeps the highest-total run (ties: lowest r).
    Shortcut: when the unconstrained optimum already attaches exactly one
    token to the root it is also the constrained optimum (the constrained
    total can never exceed the unconstrained one), so return it directly.
    """
    s = _prepare(scores)
    m = s.shape[0]
    unconstrained = _cle(s)
    if int((unconstrained[1:] == 0).sum()) == 1:
        return unconstrained
    best_heads = None
    best_total = -np.inf
    root_row = s[0].copy()
    for r in range(1, m):
        if not np.isfinite(root_row[r]):
            continue
        s[0, :] = -np.inf
        s[0, r] = root_row[r]
        heads = _cle(s)
        total = tree_score(s, heads)
        if total > best_total:
            best_total = total
            best_heads = heads
    s[0] = root_row
    if best_heads is None:
        raise ValueError("no feasible single-root arborescence")
    return best_heads


def greedy_heads(scores: np.ndarray) -> np.ndarray:
    """Per-dependent argmax. May contain cycles; upper-bounds any tree."""
    s = _prepare(scores)
    heads = np.full(s.shape[0], -1, dtype=np.int64)
    heads[1:] = np.argmax(s[:, 1:], axis=0)
    return heads


def _valid_head_vectors(n: int) -> np.ndarray:
    """All single-root arborescence head vectors for n tokens, lex order.

    Enumeration is chunked by the first token's head so the n=8 case stays
    within a few tens of MB. Within and across chunks the ordering is
    lexicographic, which makes argmax-on-first-max the lexicographic
    tie-break for free.
    """
    cached = _VALID_VECTORS_CACHE.get(n)
    if cached is not None:
        return cached
    rest_choices = [np.array([h for h in range(n + 1) if h != d], dtype=np.int16)
                    for d in range(2, n + 1)]
    parts = []
    for h1 in (h for h in range(n + 1) if h != 1):
        if n == 1:
            combos = np.array([[h1]], dtype=np.int16)
        else:
            grids = np.meshgrid(*rest_choices, indexing="ij")
            tail = np.stack([g.reshape(-1) for g in grids], axis=1)
            combos = np.concatenate(
                [np.full((tail.shape[0], 1), h1, dtype=np.int16), tail], axis=1)
        combos = combos[(combos == 0).sum(axis=1) == 1]
        # ancestor chase: n hops must land every token on the root
        cur = combos.copy()
        for _ in range(n):
            idx = np.maximum(cur - 1, 0).astype(np.intp)
            parent = np.take_along_axis(combos, idx, axis=1)
            cur = np.where(cur == 0, 0, parent)
        parts.append(combos[(cur == 0).all(axis=1)])
    result = np.ascontiguousarray(np.concatenate(parts, axis=0))
    _VALID_VECTORS_CACHE[n] = result
    return result


def brute_force_heads(scores: np.ndarray) -> np.ndarray:
    """Exhaustive single-root decode; the independent oracle for small n."""
    s = _prepare(scores)
    n = s.shape[0] - 1
    if n > _MAX_BRUTE_N:
        raise ValueError(f"brute force supports n <= {_MAX_BRUTE_N}, got {n}")
    vectors = _valid_head_vectors(n)
    cols = np.arange(1, n + 1)
    totals = s[vectors, cols].sum(axis=1)
    best = int(np.argmax(totals))  # first max = lexicographically smallest
    heads = np.full(n + 1, -1, dtype=np.int64)
    heads[1:] = vectors[best]
    return heads
