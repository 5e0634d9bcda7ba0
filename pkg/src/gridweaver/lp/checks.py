"""Solver-independent optimality checks for a primal/dual pair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridweaver.lp.program import LinearProgram


@dataclass
class Certificate:
    max_primal_residual: float
    max_bound_violation: float
    max_dual_infeasibility: float
    duality_gap: float
    complementary_slackness: float
    primal_objective: float
    dual_objective: float

    def ok(self, tol=1e-6) -> bool:
        return (
            self.max_primal_residual <= tol
            and self.max_bound_violation <= tol
            and self.duality_gap <= tol
        )


def _violation(v, lo, hi):
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


def certify(lp: LinearProgram, x, y, dual_tol=1e-7) -> Certificate:
    """Recompute residuals of ``x`` and the duality gap implied by row duals ``y``.

    Each column and each row activity is a bounded variable with reduced cost
    ``d = c - A.T @ y`` (columns) or ``y`` (rows). The dual objective picks
    the lower bound where ``d > 0`` and the upper bound where ``d < 0``. A
    reduced cost pointing at an infinite bound counts as dual infeasibility;
    such terms contribute ``d * x`` so the gap stays finite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    activity = lp.A @ x
    row_res = _violation(activity, lp.row_lo, lp.row_hi)
    col_res = _violation(x, lp.col_lo, lp.col_hi)

    d = lp.c - lp.A.T @ y
    values = np.concatenate([x, activity])
    red = np.concatenate([d, y])
    lo = np.concatenate([lp.col_lo, lp.row_lo])
    hi = np.concatenate([lp.col_hi, lp.row_hi])
    scale = max(1.0, float(np.abs(red).max(initial=0.0)))

    bound = np.where(red > 0, lo, np.where(red < 0, hi, values))
    tiny = np.abs(red) <= dual_tol * scale
    infinite = ~np.isfinite(bound)
    dual_inf = np.where(infinite & ~tiny, np.abs(red), 0.0)
    bound = np.where(infinite | tiny, values, bound)

    primal = float(lp.c @ x + lp.offset)
    dual = float(red @ bound + lp.offset)
    # with A x = activity exactly, primal == d @ x + y @ activity + offset
    cs = np.abs(red * (values - bound))
    return Certificate(
        max_primal_residual=float(row_res.max(initial=0.0)),
        max_bound_violation=float(col_res.max(initial=0.0)),
        max_dual_infeasibility=float(dual_inf.max(initial=0.0)),
        duality_gap=abs(primal - dual) / (1.0 + abs(primal)),
        complementary_slackness=float(cs.max(initial=0.0)),
        primal_objective=primal,
        dual_objective=dual,
    )
