"""Central-finite-difference audit of analytic gradients.

The oracle side of every differentiable module: perturb parameter entries
by +-h, difference the loss, and compare against the recorded gradient.
Only meaningful in float64; refuses to run on float32 parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import ParamStore
from .util import fnv1a64


@dataclass
class GradCheckReport:
    tolerance: float
    h: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked_entries: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_param.items(), key=lambda kv: -kv[1])[:k]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "h": self.h,
            "per_param": dict(self.per_param),
            "checked_entries": dict(self.checked_entries),
        }


def _rel_err(a: float, n: float, floor: float) -> float:
    """Relative error with a denominator floor at the finite-difference
    noise scale: central differences of a loss of magnitude f carry
    roundoff ~eps*f/h, so gradients near that level can only be compared
    absolutely. Zero-vs-zero reports 0."""
    scale = max(abs(a), abs(n))
    if scale == 0.0:
        return 0.0
    return abs(a - n) / max(scale, floor)


def finite_diff_check(params: ParamStore, loss_fn, tolerance: float = 1e-4,
                      h: float = 1e-5, max_entries: int = 8, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    `loss_fn` takes no arguments, rebuilds the forward graph from the
    current parameter values, and returns a scalar Tensor. Large parameter
    tensors are probed at `max_entries` deterministically sampled entries;
    the reported error per parameter is the max over probed entries.
    """
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ad.NumericsError(
                f"gradient check requires float64 parameters; {name!r} is {t.data.dtype}"
            )

    base1 = float(loss_fn().data)
    base2 = float(loss_fn().data)
    if base1 != base2:
        raise ad.NumericsError(
            f"loss_fn is nondeterministic: {base1!r} != {base2!r}; cannot finite-difference"
        )

    params.zero_grad()
    loss = loss_fn()
    ad.backward(loss)
    analytic = {name: params.grad(name).copy() for name, _ in params.items()}

    # FD roundoff on the derivative is ~eps*|f|/h; below floor*tolerance
    # the comparison is absolute rather than relative
    eps = float(np.finfo(np.float64).eps)
    floor = 64.0 * eps * max(1.0, abs(base1)) / h / tolerance

    report = GradCheckReport(tolerance=tolerance, h=h)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        size = flat.size
        if size <= max_entries:
            idx = np.arange(size)
        else:
            rng = np.random.RandomState((seed ^ fnv1a64(name.encode())) & 0xFFFFFFFF)
            idx = rng.choice(size, size=max_entries, replace=False)
            idx.sort()
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            saved = flat[i]
            flat[i] = saved + h
            up = float(loss_fn().data)
            flat[i] = saved - h
            down = float(loss_fn().data)
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_err(float(a_flat[i]), numeric, floor))
        report.per_param[name] = worst
        report.checked_entries[name] = int(len(idx))
    return report
