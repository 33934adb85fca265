"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    tolerance: float
    worst: tuple | None = None
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(fn: Callable[[dict[str, Tensor]], Tensor], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, h: float = 1e-3, coords_per_param: int = 8,
               seed: int = 0, noise_floor: float = 1e-9,
               kink_tol: float = 1e-2) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn`` maps a dict of leaf tensors to a scalar tensor. Everything runs in
    float64. The numeric derivative is the Richardson combination
    ``(4 D(h/2) - D(h)) / 3`` of two central differences, which cancels the
    ``h^2`` truncation term; layer norm over small embeddings has enough
    curvature that a plain ``D(h)`` at ``h = 1e-3`` sits near ``1e-4``
    relative error on its own. Coordinates sitting on or near a non-differentiable point (a
    ReLU input at exactly zero, say) are detected by repeating the stencil at
    ``h/10``: on a smooth function the one-sided discrepancy shrinks tenfold
    and the central estimate is stable, near a kink neither holds. Such
    coordinates are skipped and counted, not reported as failures.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in base.items()}
    loss = fn(leaves)
    loss.backward()
    f0 = loss.item()

    def evaluate(name, flat_index, delta):
        trial = {k: Tensor(v if k != name else v.copy()) for k, v in base.items()}
        arr = trial[name].data.reshape(-1)
        arr[flat_index] += delta
        return fn(trial).item()

    def stencil(name, i, step):
        fp, fm = evaluate(name, i, step), evaluate(name, i, -step)
        return (fp - fm) / (2 * step), abs((fp - f0) - (f0 - fm)) / step

    report = GradCheckReport(max_rel_error=0.0, checked=0, skipped_kinks=0, tolerance=tolerance)
    for name in sorted(base):
        size = base[name].size
        grad = leaves[name].grad
        grad = np.zeros(size) if grad is None else grad.reshape(-1)
        picks = rng.choice(size, size=min(coords_per_param, size), replace=False)
        for i in picks:
            coarse, gap = stencil(name, i, h)
            half, _ = stencil(name, i, h / 2)
            fine, fine_gap = stencil(name, i, h / 10)
            at_kink = fine_gap > noise_floor and fine_gap > 0.5 * gap
            near_kink = relative_error(coarse, fine) > kink_tol
            numeric = (4 * half - coarse) / 3
            if at_kink or near_kink:
                report.skipped_kinks += 1
                continue
            err = relative_error(float(grad[i]), numeric)
            report.checked += 1
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, int(i), float(grad[i]), numeric)
            if err >= tolerance:
                report.errors.append((name, int(i), float(grad[i]), numeric))
    return report
