"""Episodic meta-training with first-order updates.

Inner loop: a task's support batch drives k full-batch SGD steps starting
from a clone of the shared initialization, which is never mutated by
adaptation. Outer loop: the query-batch gradient, taken at the adapted
parameters and summed over the step's tasks, feeds one Adam update of the
shared initialization; no second derivatives are used. The outer step
size follows a cosine schedule with linear warmup.

Everything is generic over (params: dict of Tensors, grad_fn), where
grad_fn(params, batch) returns (scalar loss, gradient dict). The same
machinery therefore drives both the parser and small closed-form
problems whose meta-gradients are known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optim import Adam, clip_global_norm, clone_params, cosine_warmup, sgd_step


@dataclass
class Episode:
    language: str
    support: object
    query: object


@dataclass
class MetaConfig:
    inner_lr: object  # float, or {"group": lr} resolved through group_of
    outer_lr: object
    inner_steps: int = 3
    support_size: int = 20
    query_size: int = 20
    meta_steps: int = 100
    warmup_frac: float = 0.1
    weight_decay: float = 0.0
    val_every: int = 20
    inner_clip: float = 0.0  # max global grad norm per inner step; 0 = off
    outer_clip: float = 0.0  # max global norm of the summed outer gradient
    seed: int = 0


def split_pool(pool, dev_frac: float = 0.2, seed: int = 0):
    """Deterministic train/dev partition of a sentence pool."""
    if not 0.0 < dev_frac < 1.0:
        raise ValueError(f"dev fraction {dev_frac} outside (0, 1)")
    idx = np.random.default_rng(seed).permutation(len(pool))
    n_dev = max(1, int(round(dev_frac * len(pool))))
    if n_dev >= len(pool):
        raise ValueError("pool too small to split")
    dev = [pool[i] for i in idx[:n_dev]]
    train = [pool[i] for i in idx[n_dev:]]
    return train, dev


def sample_episode(pool, support_size: int, query_size: int,
                   rng: np.random.Generator):
    """Disjoint support and query batches, drawn without replacement."""
    need = support_size + query_size
    if len(pool) < need:
        raise ValueError(
            f"pool of {len(pool)} cannot yield {support_size}+{query_size} sentences")
    idx = rng.permutation(len(pool))
    support = [pool[i] for i in idx[:support_size]]
    query = [pool[i] for i in idx[support_size:need]]
    return support, query


def inner_adapt(params: dict, grad_fn, support, lrs, steps: int,
                group_of=None, clip: float = 0.0):
    """k full-batch SGD steps on a clone; the initialization is untouched.

    clip > 0 caps each step's global gradient norm, which also governs
    meta-testing since adaptation there runs through this same routine.
    Returns (adapted params, per-step support losses).
    """
    if steps < 0:
        raise ValueError("negative adaptation steps")
    adapted = clone_params(params)
    losses = []
    for _ in range(steps):
        loss, grads = grad_fn(adapted, support)
        clip_global_norm(grads, clip)
        sgd_step(adapted, grads, lrs, group_of=group_of)
        losses.append(loss)
    return adapted, losses


def meta_step(params: dict, episodes, grad_fn, inner_lrs, inner_steps: int,
              outer_opt: Adam, group_of=None, lr_scale: float = 1.0,
              inner_clip: float = 0.0, outer_clip: float = 0.0) -> dict:
    """One first-order outer update over a batch of episodes.

    The query gradients are evaluated at each episode's adapted parameters
    and summed across episodes before the single Adam step.
    """
    total = {name: np.zeros_like(t.data) for name, t in params.items()}
    inner_losses, query_losses = {}, {}
    for ep in episodes:
        adapted, losses = inner_adapt(params, grad_fn, ep.support,
                                      inner_lrs, inner_steps,
                                      group_of=group_of, clip=inner_clip)
        q_loss, q_grads = grad_fn(adapted, ep.query)
        for name in total:
            total[name] += q_grads[name]
        inner_losses[ep.language] = losses
        query_losses[ep.language] = q_loss
    outer_norm = clip_global_norm(total, outer_clip)
    outer_opt.step(params, total, lr_scale=lr_scale)
    return {"inner_losses": inner_losses, "query_losses": query_losses,
            "outer_grads": total, "outer_norm": outer_norm,
            "lr_scale": lr_scale}


def _maybe_validate(step: int, cfg: MetaConfig, validate_fn, params,
                    best, record, history, telemetry):
    due = validate_fn is not None and (
        (step + 1) % cfg.val_every == 0 or step + 1 == cfg.meta_steps)
    if due:
        score = validate_fn(params, step)
        record["val_score"] = score
        if score > best[0]:
            best[0] = score
            best[1] = clone_params(params)
            record["val_best"] = True
    history.append(record)
    if telemetry is not None:
        telemetry(record)


def meta_train(params: dict, train_pools: dict, grad_fn, cfg: MetaConfig,
               group_of=None, validate_fn=None, telemetry=None):
    """Episodic training over languages; one episode per language per step.

    validate_fn(params, step) -> score (higher is better) selects the
    returned parameters; without it the final parameters are returned.
    Returns (best params, history records).
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lrs=cfg.outer_lr, group_of=group_of,
               weight_decay=cfg.weight_decay)
    best = [-math.inf, None]
    history = []
    langs = sorted(train_pools)
    if not langs:
        raise ValueError("no training languages")
    for step in range(cfg.meta_steps):
        episodes = []
        for lang in langs:
            support, query = sample_episode(train_pools[lang],
                                            cfg.support_size, cfg.query_size, rng)
            episodes.append(Episode(language=lang, support=support, query=query))
        scale = cosine_warmup(step, cfg.meta_steps, cfg.warmup_frac)
        info = meta_step(params, episodes, grad_fn, cfg.inner_lr,
                         cfg.inner_steps, opt, group_of=group_of, lr_scale=scale,
                         inner_clip=cfg.inner_clip, outer_clip=cfg.outer_clip)
        record = {"meta_step": step, "lr_scale": scale,
                  "query_loss": info["query_losses"],
                  "inner_first": {k: v[0] for k, v in info["inner_losses"].items() if v},
                  "inner_last": {k: v[-1] for k, v in info["inner_losses"].items() if v}}
        _maybe_validate(step, cfg, validate_fn, params, best, record,
                        history, telemetry)
    final = best[1] if best[1] is not None else clone_params(params)
    return final, history


def non_episodic_train(params: dict, train_pools: dict, grad_fn,
                       cfg: MetaConfig, group_of=None, validate_fn=None,
                       telemetry=None):
    """Joint multilingual baseline on the identical episode stream.

    Sampling mirrors meta_train step for step (same seed, same draws), but
    each step takes one Adam update on the summed gradient over every
    language's support plus query batch; there is no inner loop.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lrs=cfg.outer_lr, group_of=group_of,
               weight_decay=cfg.weight_decay)
    best = [-math.inf, None]
    history = []
    langs = sorted(train_pools)
    if not langs:
        raise ValueError("no training languages")
    for step in range(cfg.meta_steps):
        total = {name: np.zeros_like(t.data) for name, t in params.items()}
        losses = {}
        for lang in langs:
            support, query = sample_episode(train_pools[lang],
                                            cfg.support_size, cfg.query_size, rng)
            loss, grads = grad_fn(params, support + query)
            for name in total:
                total[name] += grads[name]
            losses[lang] = loss
        scale = cosine_warmup(step, cfg.meta_steps, cfg.warmup_frac)
        clip_global_norm(total, cfg.outer_clip)
        opt.step(params, total, lr_scale=scale)
        record = {"meta_step": step, "lr_scale": scale, "joint_loss": losses}
        _maybe_validate(step, cfg, validate_fn, params, best, record,
                        history, telemetry)
    final = best[1] if best[1] is not None else clone_params(params)
    return final, history


def pretrain(params: dict, train_pool, dev_pool, grad_fn, loss_fn,
             epochs: int, batch_size: int, lrs, group_of=None,
             weight_decay: float = 0.01, freeze_encoder_epochs: int = 1,
             seed: int = 0, telemetry=None):
    """Minibatch supervised training on one high-resource language.

    The encoder group stays frozen (moments untouched) for the first
    freeze_encoder_epochs epochs so the randomly initialized scorers do
    not disturb it. Returns (best-dev params, history).
    """
    if not train_pool or not dev_pool:
        raise ValueError("pretraining needs nonempty train and dev pools")
    rng = np.random.default_rng(seed)
    opt = Adam(lrs=lrs, group_of=group_of, weight_decay=weight_decay)
    best = [math.inf, clone_params(params)]
    history = []
    for epoch in range(epochs):
        skip = ("encoder",) if epoch < freeze_encoder_epochs else ()
        perm = rng.permutation(len(train_pool))
        train_losses = []
        for lo in range(0, len(perm), batch_size):
            batch = [train_pool[i] for i in perm[lo:lo + batch_size]]
            loss, grads = grad_fn(params, batch)
            opt.step(params, grads, skip_groups=skip)
            train_losses.append(loss)
        dev_loss = loss_fn(params, dev_pool)
        record = {"epoch": epoch, "train_loss": float(np.mean(train_losses)),
                  "dev_loss": dev_loss, "frozen": list(skip)}
        if dev_loss < best[0]:
            best[0] = dev_loss
            best[1] = clone_params(params)
            record["dev_best"] = True
        history.append(record)
        if telemetry is not None:
            telemetry(record)
    return best[1], history
