"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    h: float
    passed: bool = field(init=False)
    finite: bool = True

    def __post_init__(self):
        self.passed = self.finite and self.max_error < self.tol

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_error:.2e} ({worst}), h={self.h}"


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor] | Sequence[Tensor],
               h: float = 1e-5, tol: float = 1e-6, max_coords: int | None = 24,
               seed: int = 0) -> GradCheckReport:
    """Compare gradients of scalar ``f()`` with central differences.

    Parameters with more than ``max_coords`` entries are checked on a fixed
    random subset of coordinates.  The relative error of a coordinate uses the
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if not isinstance(params, Mapping):
        params = {f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.data = np.ascontiguousarray(p.data)
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        return GradCheckReport({}, tol, h, finite=False)
    out.backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for name, p in params.items()}

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    finite = True
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            else:
                coords = np.arange(flat.size)
            worst = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = float(f().data)
                flat[c] = orig - h
                fm = float(f().data)
                flat[c] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    finite = False
                    continue
                num = (fp - fm) / (2 * h)
                ana = analytic[name].reshape(-1)[c]
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
            errors[name] = worst
    return GradCheckReport(errors, tol, h, finite=finite)
