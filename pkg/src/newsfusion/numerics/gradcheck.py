"""Backward-vs-finite-difference gradient verification.

The two routes stay fully independent: the analytic side is one backward()
sweep; the numeric side re-evaluates the loss with each coordinate nudged by
+/- eps under no_grad. Run it against a float64-backed store, otherwise the
perturbation drowns in float32 quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, backward, no_grad

__all__ = ["GradCheckReport", "grad_check", "format_report"]

_FD_EPS = 1e-5
_REL_TOL = 1e-4


@dataclass
class CoordFailure:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    n_checked: int = 0
    max_rel_err: float = 0.0
    per_param: dict[str, float] = field(default_factory=dict)
    failures: list[CoordFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(
    store: ParameterStore,
    loss_fn: Callable[[], Tensor],
    eps: float = _FD_EPS,
    tol: float = _REL_TOL,
    names: list[str] | None = None,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward() gradients against central differences.

    ``loss_fn`` must be a deterministic scalar function of the store values;
    two baseline evaluations are compared and a mismatch is an error. Checks
    every coordinate of every trainable parameter unless ``names`` or
    ``max_coords_per_param`` narrows the sweep. Relative error per coordinate
    is |a - n| / max(|a|, |n|, 1e-8).
    """
    with no_grad():
        base_a = loss_fn().item()
        base_b = loss_fn().item()
    if base_a != base_b:
        raise ValueError(
            f"loss is not deterministic: baseline evaluations {base_a!r} != {base_b!r}"
        )

    store.zero_grads()
    loss = loss_fn()
    backward(loss)
    analytic = {n: g.copy() for n, g in store.grads.items()}

    if names is None:
        names = store.trainable_names()
    report = GradCheckReport()
    for name in names:
        value = store.value(name)
        ga = analytic.get(name)
        if ga is None:
            ga = np.zeros(value.shape, dtype=np.float64)
        report.per_param[name] = 0.0
        coords = list(np.ndindex(value.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            picked = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picked)]
        for index in coords:
            original = value[index]
            value[index] = original + eps
            with no_grad():
                f_plus = loss_fn().item()
            value[index] = original - eps
            with no_grad():
                f_minus = loss_fn().item()
            value[index] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(ga[index])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            report.n_checked += 1
            if rel > report.max_rel_err:
                report.max_rel_err = rel
            if rel > report.per_param[name]:
                report.per_param[name] = rel
            if rel >= tol:
                report.failures.append(CoordFailure(name, index, a, numeric, rel))
    return report


def format_report(report: GradCheckReport, limit: int = 20) -> str:
    lines = [
        f"coordinates checked: {report.n_checked}",
        f"max relative error:  {report.max_rel_err:.3e}",
        f"result: {'PASS' if report.passed else 'FAIL'}",
    ]
    for name in sorted(report.per_param):
        lines.append(f"  {name}: max rel err {report.per_param[name]:.3e}")
    for f in report.failures[:limit]:
        lines.append(
            f"  {f.name}{list(f.index)}: analytic={f.analytic:.6e} "
            f"numeric={f.numeric:.6e} rel={f.rel_err:.3e}"
        )
    if len(report.failures) > limit:
        lines.append(f"  ... {len(report.failures) - limit} more failures")
    return "\n".join(lines)
