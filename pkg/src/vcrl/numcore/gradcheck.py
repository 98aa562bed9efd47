"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamSet


def _eval_scalar(func, params: ParamSet) -> float:
    with T.no_grad():
        out = func(params)
    value = out.item() if isinstance(out, T.Tensor) else float(out)
    if not np.isfinite(value):
        raise ValueError(f"objective returned non-finite value {value}")
    return value


def finite_diff_check(func, params: ParamSet, epsilon: float = 1e-6) -> float:
    """Compare backward() grads of func(params) against central differences.

    Returns the worst relative error over every parameter coordinate.
    func must be a deterministic map ParamSet -> scalar Tensor.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")

    params.zero_grads()
    loss = func(params)
    if not isinstance(loss, T.Tensor):
        raise TypeError("objective must return a Tensor")
    if not np.isfinite(loss.item()):
        raise ValueError(f"objective returned non-finite value {loss.item()}")
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.data.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = _eval_scalar(func, params)
            flat[i] = original - epsilon
            f_minus = _eval_scalar(func, params)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            scale = max(abs(a_flat[i]), abs(numeric))
            if scale < 1e-10:
                continue  # both effectively zero
            err = abs(a_flat[i] - numeric) / max(scale, 1e-6)
            if err > worst:
                worst = err
    return worst
