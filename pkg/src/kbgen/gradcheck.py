"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import NumericError
from .tensor import Tensor, no_grad


def _scalar(value: Tensor) -> float:
    v = float(np.asarray(value.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"function value is not finite: {v}")
    return v


def _coords(shape: tuple, max_coords: int | None, rng: np.random.Generator | None) -> list[tuple]:
    every = list(np.ndindex(*shape))
    if max_coords is None or len(every) <= max_coords:
        return every
    rng = rng or np.random.default_rng(0)
    picked = rng.choice(len(every), size=max_coords, replace=False)
    return [every[i] for i in sorted(picked)]


def grad_check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5,
                      max_coords: int | None = None, rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare analytic and central-difference gradients for each named tensor.

    Returns, per name, the maximum over the checked coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``. With ``max_coords`` set, a
    random subset of that many coordinates per tensor is checked.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    _scalar(loss)
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    errors: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            worst = 0.0
            for idx in _coords(p.shape, max_coords, rng):
                orig = p.data[idx]
                p.data[idx] = orig + h
                fp = _scalar(loss_fn())
                p.data[idx] = orig - h
                fm = _scalar(loss_fn())
                p.data[idx] = orig
                numeric = (fp - fm) / (2.0 * h)
                a = analytic[name][idx]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
            errors[name] = worst
    return errors


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``d f / d x`` and its central difference."""
    x.requires_grad = True
    return grad_check_params(lambda: f(x), {"x": x}, h=h, max_coords=max_coords, rng=rng)["x"]
