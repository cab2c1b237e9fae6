"""Parameter updates: SGD, Adam, and a cosine schedule with linear warmup.

Parameters travel as dicts of name -> Tensor. Learning rates are given per
group; group_of maps a parameter name to its group ("encoder"/"decoder" in
the parser, a single group in toy problems). Updates mutate tensors in
place; callers that need an untouched copy clone first (clone_params).
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def clone_params(params: dict) -> dict:
    return {name: t.copy() for name, t in params.items()}


def params_fingerprint(params: dict) -> tuple:
    """Order-independent content hash, used to assert non-mutation."""
    return tuple(sorted((name, t.data.tobytes()) for name, t in params.items()))


def _lr_for(name: str, lrs, group_of) -> float:
    if isinstance(lrs, dict):
        group = group_of(name) if group_of is not None else next(iter(lrs))
        if group not in lrs:
            raise KeyError(f"no learning rate configured for group '{group}'")
        return float(lrs[group])
    return float(lrs)


def sgd_step(params: dict, grads: dict, lrs, group_of=None, lr_scale: float = 1.0) -> None:
    """Plain gradient descent: p <- p - lr * g."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        p.data -= lr_scale * _lr_for(name, lrs, group_of) * g


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale the gradient dict in place so its global L2 norm is at most
    max_norm; returns the pre-clip norm. max_norm <= 0 disables clipping."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class Adam:
    """Adam with bias correction; optional decoupled weight decay.

    Defaults beta1=0.9, beta2=0.999, eps=1e-8. Moment state is keyed by
    parameter name and created lazily. skip_groups freezes whole groups for
    a step: their parameters and moments stay untouched.
    """

    def __init__(self, lrs, group_of=None, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lrs = lrs
        self.group_of = group_of
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr_scale: float = 1.0,
             skip_groups=frozenset()) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            if skip_groups and self.group_of is not None \
                    and self.group_of(name) in skip_groups:
                continue
            g = grads.get(name)
            if g is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            lr = lr_scale * _lr_for(name, self.lrs, self.group_of)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update


def cosine_warmup(step: int, total_steps: int, warmup_frac: float) -> float:
    """Learning-rate multiplier in [0, 1] for 0-indexed step.

    Linear ramp over the first warmup_frac of training: multiplier is
    (step + 1) / warmup_steps, reaching 1 on the last warmup step. After
    warmup, half-cosine decay toward 0 at total_steps.
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0.0 <= warmup_frac <= 1.0:
        raise ValueError(f"warmup_frac {warmup_frac} outside [0, 1]")
    warmup_steps = int(round(warmup_frac * total_steps))
    if step < warmup_steps:
        return (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))
