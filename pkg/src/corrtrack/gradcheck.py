"""Central finite-difference gradient checking.

The checker is the correctness oracle for every differentiable operation: it
compares analytic gradients from the reverse-mode engine against central
differences computed by re-running the forward function, and never relies on
the backward pass it is checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    per_leaf: dict[str, float] = field(default_factory=dict)
    non_finite: bool = False

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max_rel_error={self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.1e})")


def finite_difference_check(
    f: Callable[[], Tensor],
    leaves: Sequence[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    `leaves` are the tensors f reads; their `.data` buffers are perturbed in
    place. All leaves should be float64 for the step size to make sense.
    `max_entries` limits how many coordinates per leaf are probed (random
    subset) to bound runtime on large parameter tensors.

    The per-leaf error is ||analytic - numeric||_2 / max(||analytic||_2,
    ||numeric||_2, 1e-8), measured over the probed coordinates.
    """
    if isinstance(leaves, dict):
        named = list(leaves.items())
    else:
        named = [(f"leaf{i}", t) for i, t in enumerate(leaves)]
    for _, t in named:
        if t.data.dtype != np.float64:
            raise ValueError("finite_difference_check requires float64 leaves")
        t.requires_grad = True
        t.zero_grad()

    out = f()
    if not np.isfinite(out.data).all():
        return GradCheckReport(False, np.inf, tolerance, non_finite=True)
    out.backward()

    rng = rng or np.random.default_rng(0)
    per_leaf: dict[str, float] = {}
    non_finite = False
    for name, t in named:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
        flat = t.data.ravel()
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        numeric = np.empty(idx.size)
        for pos, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            numeric[pos] = (hi - lo) / (2 * step)
        if not np.isfinite(numeric).all():
            non_finite = True
            per_leaf[name] = np.inf
            continue
        a = analytic[idx]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        per_leaf[name] = float(np.linalg.norm(a - numeric) / denom)

    max_err = max(per_leaf.values()) if per_leaf else 0.0
    return GradCheckReport(max_err < tolerance and not non_finite,
                           max_err, tolerance, per_leaf, non_finite)
