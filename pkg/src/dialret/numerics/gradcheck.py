"""Central finite-difference gradient oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .rng import Rng
from .tensor import NumericError, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int
    worst: tuple[str, tuple[int, ...]] | None = None
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" worst at {self.worst[0]}{list(self.worst[1])}" if self.worst else ""
        return f"{status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:g}) over {self.n_checked} coords{where}"


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _eval(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = f().item()
    if not math.isfinite(value):
        raise NumericError("objective returned a non-finite value")
    return value


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Full central-difference gradient of a scalar ``f`` with respect to ``x``."""
    out = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = _eval(f)
        flat[i] = orig - h
        down = _eval(f)
        flat[i] = orig
        out.reshape(-1)[i] = (up - down) / (2 * h)
    return out


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
    max_coords: int | None = None,
    rng: Rng | None = None,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must rebuild the graph from the current parameter values on every
    call. With ``max_coords`` set, each parameter contributes that many
    coordinates drawn from ``rng`` instead of all of them. ``analytic`` lets a
    caller supply (possibly wrong) gradients instead of running backward.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    rng = rng or Rng(0)

    if analytic is None:
        for p in params.values():
            p.grad = None
        loss = f()
        if not math.isfinite(loss.item()):
            raise NumericError("objective returned a non-finite value")
        backward(loss, params.values())
        analytic = {name: p.grad for name, p in params.items()}

    worst_err, worst_at, n_checked = 0.0, None, 0
    per_param: dict[str, float] = {}
    for name, p in params.items():
        grad = analytic[name]
        size = p.data.size
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, max_coords))
        else:
            coords = np.arange(size)
        flat = p.data.reshape(-1)
        param_err = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = _eval(f)
            flat[i] = orig - h
            down = _eval(f)
            flat[i] = orig
            num = (up - down) / (2 * h)
            ana = float(grad.reshape(-1)[i]) if grad is not None else 0.0
            err = relative_error(ana, num)
            n_checked += 1
            param_err = max(param_err, err)
            if err > worst_err or worst_at is None:
                worst_err = max(worst_err, err)
                worst_at = (name, tuple(int(v) for v in np.unravel_index(i, p.shape)))
        per_param[name] = param_err
    return GradCheckReport(worst_err, tol, n_checked, worst_at, per_param)
