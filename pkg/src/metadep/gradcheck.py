"""Central finite-difference gradient checking.

The checker is the independent oracle for every analytic gradient in this
package: it perturbs each parameter entry by +/- h and never touches the
tape machinery, so agreement is evidence rather than self-confirmation.
"""

from __future__ import annotations

import numpy as np


def finite_difference_gradient(f, param: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f around param, one entry at a time.

    f receives a fresh array each call and must not cache state between
    calls. Runs in whatever dtype param carries; use float64.
    """
    g = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(param))
        flat[i] = orig - h
        fm = float(f(param))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case elementwise relative error with an absolute floor of 1."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"gradient shape mismatch: {a.shape} vs {n.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(loss_fn, params: dict, h: float = 1e-6) -> dict:
    """Compare analytic gradients against finite differences per parameter.

    loss_fn(params) must rebuild the forward pass from the current numeric
    contents of params (a dict of name -> Tensor) and return
    (loss_value: float, grads: dict name -> ndarray). Returns the max
    relative error per parameter name.
    """
    _, analytic = loss_fn(params)
    errors = {}
    for name, p in params.items():
        def f_scalar(_arr, _name=name):
            value, _ = loss_fn(params)
            return value
        numeric = finite_difference_gradient(f_scalar, p.data, h=h)
        errors[name] = max_rel_error(analytic[name], numeric)
    return errors
