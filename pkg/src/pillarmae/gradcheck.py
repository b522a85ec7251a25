"""Finite-difference oracle for analytic gradients.

The checker perturbs parameter buffers in place, re-evaluates a scalar
function under no_grad, and compares central differences against the
gradients produced by one backward pass. It never inspects the tape, so it
stays an independent route.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape

# Relative error uses a small denominator floor so near-zero gradient pairs
# are compared on an absolute scale instead of exploding.
DENOM_FLOOR = 1e-3


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    rel_tol: float
    step: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rel_tol

    def summary(self) -> str:
        lines = [
            f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e} "
            f"(tol {self.rel_tol:.1e}, step {self.step:.1e})"
        ]
        for p in self.params:
            lines.append(
                f"  {p.name}: rel_err={p.max_rel_err:.3e} at {p.worst_index} "
                f"(analytic {p.analytic:.6e}, numeric {p.numeric:.6e}, {p.checked} coords)"
            )
        return "\n".join(lines)


def finite_diff_grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    names: Sequence[str] | None = None,
    max_elements_per_param: int | None = None,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be deterministic and read the given parameter tensors; it is
    re-evaluated with individual coordinates shifted by +-step. When
    ``max_elements_per_param`` is set, a seeded subset of coordinates per
    parameter is probed instead of all of them.
    """
    if step <= 0:
        raise ValueError("finite_diff_grad_check: step must be positive")
    names = list(names) if names is not None else [f"param[{i}]" for i in range(len(params))]
    if len(names) != len(params):
        raise ValueError("finite_diff_grad_check: names and params length mismatch")

    reset_tape()
    with no_grad():
        base1 = float(f().data)
        base2 = float(f().data)
    if base1 != base2 or not np.isfinite(base1):
        raise ValueError(
            f"finite_diff_grad_check: f is not deterministic or not finite ({base1!r} vs {base2!r})"
        )

    for p in params:
        p.grad = None
    loss = f()
    backward(loss)

    rng = np.random.default_rng(sample_seed)
    report = GradCheckReport(rel_tol=rel_tol, step=step)
    for name, p in zip(names, params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements_per_param is not None and max_elements_per_param < n:
            coords = np.sort(rng.choice(n, size=max_elements_per_param, replace=False))
        else:
            coords = np.arange(n)
        worst = ParamCheck(name=name, max_rel_err=0.0, worst_index=(0,), analytic=0.0, numeric=0.0, checked=len(coords))
        a_flat = analytic.reshape(-1)
        with no_grad():
            for c in coords:
                orig = flat[c]
                flat[c] = orig + step
                f_plus = float(f().data)
                flat[c] = orig - step
                f_minus = float(f().data)
                flat[c] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = float(a_flat[c])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
                if rel >= worst.max_rel_err:
                    worst.max_rel_err = rel
                    worst.worst_index = np.unravel_index(int(c), p.data.shape)
                    worst.analytic = a
                    worst.numeric = numeric
        report.params.append(worst)
    return report
