"""Dense tensors with reverse-mode automatic differentiation.

Ops execute eagerly on numpy arrays. When a GradientTape is open, every op
records its parents and a local-gradient closure; backward() replays the
records in reverse to accumulate gradients for watched leaves. Gradients of
gradients are unsupported by design: backward itself is never taped.
"""

from __future__ import annotations

import numpy as np

# 64-bit is the test/reference mode; 32-bit is the fast mode. The active
# dtype is set process-wide before any tensors are built.
_DEFAULT_DTYPE = np.float64


class NumericsError(ArithmeticError):
    """A forward op produced NaN or Inf, or numeric state went bad."""


class TapeUsageError(RuntimeError):
    """Tape misuse: nested tapes, reuse after backward, foreign tensors."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def _check_finite(arr: np.ndarray, op: str) -> None:
    # fast path: a finite sum implies finite entries; a non-finite sum is
    # either a real NaN/Inf or (rarely) overflow of the sum itself, so only
    # then pay for the elementwise check before raising
    if not np.isfinite(arr.sum()):
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A dense real-valued array plus its identity on the active tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.size == 0:
            raise ValueError(f"zero-size tensor with shape {arr.shape}")
        _check_finite(arr, "tensor")
        self.data = arr
        self._tape = None
        self._node = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


_ACTIVE_TAPE: "GradientTape | None" = None


class GradientTape:
    """Records ops while open; single-owner, one backward pass, no reuse.

    Usage:
        with GradientTape() as tape:
            loss = ...ops...
        grads = backward(tape, loss)
    """

    def __init__(self):
        self._records = []  # (out_node, parent_nodes, backward_fn)
        self._n_nodes = 0
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeUsageError("a tape is already open; tapes do not nest")
        if self._consumed:
            raise TapeUsageError("tape already used; build a new one")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def watch(self, t: Tensor) -> None:
        """Register a leaf so backward reports its gradient (zeros if unused)."""
        self._bind(t)

    def _bind(self, t: Tensor) -> int:
        # A tensor joins this tape lazily the first time an op touches it.
        if t._tape is self:
            return t._node
        t._tape = self
        t._node = self._n_nodes
        self._n_nodes += 1
        return t._node

    def _record(self, out: np.ndarray, parents, backward_fn, op: str) -> Tensor:
        if self._consumed:
            raise TapeUsageError("tape already used; build a new one")
        _check_finite(out, op)
        result = Tensor.__new__(Tensor)
        result.data = out
        result._tape = self
        result._node = self._n_nodes
        self._n_nodes += 1
        parent_nodes = tuple(self._bind(p) for p in parents)
        self._records.append((result._node, parent_nodes, backward_fn))
        return result


class Grads:
    """Gradient lookup keyed by tensor identity on the tape that produced it."""

    def __init__(self, tape: GradientTape, table: dict):
        self._tape = tape
        self._table = table

    def of(self, t: Tensor) -> np.ndarray:
        if t._tape is not self._tape:
            raise TapeUsageError("tensor was never seen by this tape")
        g = self._table.get(t._node)
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(tape: GradientTape, root: Tensor) -> Grads:
    """Accumulate d(root)/d(leaf) for every tensor the tape saw.

    root must be a scalar recorded on this tape. Records are replayed in
    reverse chronological order, which is a valid topological order for a
    DAG built by forward execution. Fan-out accumulates by addition.
    """
    if tape._consumed:
        raise TapeUsageError("backward already ran on this tape")
    if root._tape is not tape:
        raise TapeUsageError("root tensor does not belong to this tape")
    if root.data.shape != ():
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    tape._consumed = True

    table: dict[int, np.ndarray] = {root._node: np.ones((), dtype=root.data.dtype)}
    for out_node, parent_nodes, backward_fn in reversed(tape._records):
        g_out = table.get(out_node)
        if g_out is None:
            continue  # not on the path from root
        parent_grads = backward_fn(g_out)
        for node, g in zip(parent_nodes, parent_grads):
            if g is None:
                continue
            _check_finite(g, "backward")
            acc = table.get(node)
            if acc is None:
                table[node] = g
            else:
                table[node] = acc + g
    return Grads(tape, table)


# ---- op plumbing ----

def _apply(op: str, out: np.ndarray, parents, backward_fn) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is not None:
        return tape._record(out, parents, backward_fn, op)
    _check_finite(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t._tape = None
    t._node = -1
    return t


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- primitive ops ----

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    sa, sb = a.data.shape, b.data.shape
    return _apply("add", out, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    sa, sb = a.data.shape, b.data.shape
    return _apply("sub", out, (a, b),
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    da, db = a.data, b.data
    return _apply("mul", out, (a, b),
                  lambda g: (_unbroadcast(g * db, da.shape),
                             _unbroadcast(g * da, db.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _apply("scale", a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _apply("add_const", a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    da, db = a.data, b.data
    return _apply("matmul", out, (a, b),
                  lambda g: (g @ db.T, da.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _apply("transpose", a.data.T, (a,), lambda g: (g.T,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _apply("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = (a.data > 0.0).astype(a.data.dtype)  # subgradient 0 at the kink
    return _apply("relu", out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60.0, 60.0)))
    return _apply("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _apply("softmax", out, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _apply("log_softmax", out, (a,),
                  lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def nll_sum(logp: Tensor, targets) -> Tensor:
    """Summed negative log-likelihood: -sum_i logp[i, targets[i]]."""
    idx = np.asarray(targets, dtype=np.intp)
    if logp.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != logp.data.shape[0]:
        raise ValueError(f"nll_sum shape mismatch: {logp.data.shape} vs {idx.shape}")
    rows = np.arange(idx.shape[0])
    out = -logp.data[rows, idx].sum()

    def bwd(g):
        gi = np.zeros_like(logp.data)
        gi[rows, idx] = -g
        return (gi,)

    return _apply("nll_sum", np.asarray(out), (logp,), bwd)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _apply("sum_all", np.asarray(a.data.sum()), (a,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    out = a.data.sum(axis=axis)
    shape = a.data.shape
    return _apply("sum_axis", out, (a,),
                  lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.data.shape
    return _apply("mean_all", np.asarray(a.data.mean()), (a,),
                  lambda g: (np.broadcast_to(g / n, shape).copy(),))


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _apply("concat", out, tuple(parts),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; gradients scatter-add into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    out = table.data[idx]
    shape = table.data.shape

    def bwd(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, idx, g)
        return (gt,)

    return _apply("embedding", out, (table,), bwd)


gather_rows = embedding  # same op, two roles: vocab lookup and row selection


def gather_nd(a: Tensor, rows, cols) -> Tensor:
    """out[i, j] = a[rows[i, j], cols[i, j]] with scatter-add backward."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    out = a.data[r, c]
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape, dtype=g.dtype)
        np.add.at(ga, (r, c), g)
        return (ga,)

    return _apply("gather_nd", out, (a,), bwd)


def pick(a: Tensor, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar."""
    if a.data.ndim != 1:
        raise ValueError(f"pick expects a vector, got shape {a.data.shape}")
    i = int(index)
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape, dtype=g.dtype)
        ga[i] = g
        return (ga,)

    return _apply("pick", np.asarray(a.data[i]), (a,), bwd)


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Array times a scalar tensor; gradient flows to both operands."""
    if s.data.shape != ():
        raise ValueError(f"mul_scalar needs scalar second arg, got {s.data.shape}")
    da = a.data
    return _apply("mul_scalar", a.data * s.data, (a, s),
                  lambda g: (g * s.data, np.asarray((g * da).sum())))


def tile_cols(a: Tensor, k: int) -> Tensor:
    """Repeat a matrix k times along columns: (n, d) -> (n, k*d)."""
    if a.data.ndim != 2:
        raise ValueError(f"tile_cols expects a matrix, got shape {a.data.shape}")
    n, d = a.data.shape
    out = np.tile(a.data, (1, k))
    return _apply("tile_cols", out, (a,),
                  lambda g: (g.reshape(n, k, d).sum(axis=1),))


def block_sum_cols(a: Tensor, k: int) -> Tensor:
    """Sum k contiguous column blocks: (n, k*d) -> (n, k)."""
    if a.data.ndim != 2 or a.data.shape[1] % k:
        raise ValueError(f"block_sum_cols: shape {a.data.shape} not divisible into {k} blocks")
    n, kd = a.data.shape
    d = kd // k
    out = a.data.reshape(n, k, d).sum(axis=2)
    return _apply("block_sum_cols", out, (a,),
                  lambda g: (np.repeat(g, d, axis=1),))


def dropout_apply(a: Tensor, mask: np.ndarray) -> Tensor:
    """Apply a precomputed inverted-dropout mask (constant, no gradient)."""
    m = np.asarray(mask, dtype=a.data.dtype)
    return _apply("dropout", a.data * m, (a,), lambda g: (g * m,))


def make_dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with prob p, survivors scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if p == 0.0:
        return np.ones(shape, dtype=_DEFAULT_DTYPE)
    keep = (rng.random(shape) >= p).astype(_DEFAULT_DTYPE)
    return keep / (1.0 - p)
