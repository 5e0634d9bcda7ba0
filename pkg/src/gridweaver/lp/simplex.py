"""Bounded-variable revised primal simplex over sparse constraint data.

Every row gets a logical column ``r_i`` with bounds ``[row_lo_i, row_hi_i]`` so
the working system is ``A x - r = 0`` and all columns are simply bounded.
The basis is held as a sparse LU factorization (SuperLU) plus a product-form
eta file that is refactorized every ``refactor_every`` pivots.

Start-up uses a singleton crash: a row whose logical would start out of
bounds is covered by a structural column that appears only in that row, if
one exists. Remaining infeasible rows get an artificial column and a
phase-1 pass minimizes their sum.

Pricing is Devex (reference-framework approximation of steepest edge, the
default) or Dantzig (largest reduced cost), either falling back to Bland's
smallest-index rule during long runs of degenerate pivots; ``pricing="bland"``
uses Bland throughout. Reduced costs are updated from the pivot row each
iteration and recomputed exactly at every refactorization and before
declaring optimality. The ratio test is a two-pass Harris test.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from gridweaver.errors import SolverError
from gridweaver.lp.program import LinearProgram

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
PRICING_RULES = ("dantzig", "devex", "bland")


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    row_activity: np.ndarray
    row_duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int
    phase1_iterations: int
    pricing: str

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Simplex:
    def __init__(self, lp: LinearProgram, pricing, feas_tol, opt_tol, refactor_every, max_iter):
        if pricing not in PRICING_RULES:
            raise SolverError(f"unknown pricing rule {pricing!r}")
        self.lp = lp
        self.pricing = pricing
        self.ftol = feas_tol
        cmax = float(np.max(np.abs(lp.c))) if lp.c.size else 0.0
        self.dtol = opt_tol * max(1.0, cmax)
        self.ptol = 1e-11
        self.refactor_every = refactor_every
        m, n = lp.A.shape
        self.m, self.n = m, n
        self.max_iter = max_iter if max_iter is not None else 20 * (m + n) + 1000
        self.iterations = 0
        self.phase1_iterations = 0
        self._bland = pricing == "bland"

    # -- setup -------------------------------------------------------------

    def _initial_point(self):
        lp, m, n = self.lp, self.m, self.n
        lo, hi = lp.col_lo, lp.col_hi
        if np.any(lo > hi):
            return None
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        activity = lp.A @ x

        A = lp.A
        nnz = np.diff(A.indptr)
        singleton_by_row: dict[int, list[int]] = {}
        for j in np.flatnonzero(nnz == 1):
            singleton_by_row.setdefault(int(A.indices[A.indptr[j]]), []).append(int(j))

        basis = np.empty(m, dtype=np.int64)
        r = np.empty(m)
        art_rows, art_sign = [], []
        for i in range(m):
            a, rl, rh = activity[i], lp.row_lo[i], lp.row_hi[i]
            if rl > rh:
                return None
            if rl - self.ftol <= a <= rh + self.ftol:
                basis[i] = n + i
                r[i] = a
                continue
            target = rl if a < rl else rh
            r[i] = target
            # cheapest singletons first, each pushed to its bound until one can
            # absorb the remaining residual and become basic
            residual = target - a
            cands = []
            for j in singleton_by_row.get(i, ()):
                coef = A.data[A.indptr[j]]
                up = residual / coef > 0
                room = (hi[j] - x[j]) if up else (x[j] - lo[j])
                if room <= 0:
                    continue
                cands.append((lp.c[j] * (1.0 if up else -1.0) / abs(coef), j, coef, up, room))
            cands.sort(key=lambda t: (t[0], t[1]))
            chosen = None
            for _, j, coef, up, room in cands:
                need = abs(residual / coef)
                if need <= room + self.ftol:
                    x[j] = min(max(x[j] + residual / coef, lo[j]), hi[j])
                    chosen = j
                    residual = 0.0
                    break
                x[j] = hi[j] if up else lo[j]
                residual -= coef * (room if up else -room)
            if chosen is not None:
                basis[i] = chosen
                singleton_by_row[i] = []
            else:
                basis[i] = -1
                art_rows.append(i)
                art_sign.append(1.0 if residual > 0 else -1.0)
        return x, r, basis, art_rows, art_sign

    def _setup(self):
        init = self._initial_point()
        if init is None:
            return False
        xs, r, basis, art_rows, art_sign = init
        lp, m, n = self.lp, self.m, self.n
        k = len(art_rows)
        self.num_art = k
        logical = -sp.identity(m, format="csc")
        art = sp.csc_matrix(
            (np.array(art_sign, dtype=float), (np.array(art_rows, dtype=np.int64), np.arange(k))),
            shape=(m, k),
        )
        self.M = sp.hstack([lp.A, logical, art], format="csc")
        self.M.sort_indices()
        self.MT = self.M.T.tocsr()
        N = n + m + k
        self.N = N
        self.lower = np.concatenate([lp.col_lo, lp.row_lo, np.zeros(k)])
        self.upper = np.concatenate([lp.col_hi, lp.row_hi, np.full(k, np.inf)])
        self.x = np.concatenate([xs, r, np.zeros(k)])
        activity = lp.A @ xs
        for a_idx, i in enumerate(art_rows):
            self.x[n + m + a_idx] = abs(r[i] - activity[i])
            basis[i] = n + m + a_idx
        self.basis = basis
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[basis] = True
        self.cost2 = np.concatenate([lp.c, np.zeros(m + k)])
        self.cost1 = np.concatenate([np.zeros(n + m), np.ones(k)])
        self._refactor()
        return True

    # -- linear algebra ----------------------------------------------------

    def _refactor(self):
        B = self.M[:, self.basis].tocsc()
        try:
            self.lu = splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"basis factorization failed: {exc}") from exc
        self.etas = []
        xn = self.x.copy()
        xn[self.basis] = 0.0
        rhs = -(self.M @ xn)
        self.x[self.basis] = self.lu.solve(rhs)

    def _column(self, j):
        v = np.zeros(self.m)
        lo, hi = self.M.indptr[j], self.M.indptr[j + 1]
        v[self.M.indices[lo:hi]] = self.M.data[lo:hi]
        return v

    # Eta columns are stored dense with the pivot entry zeroed: on LPs with
    # time-coupling (storage, energy budgets) B^-1 a_q is typically dense, and
    # contiguous vector ops then beat indexed scatter/gather.

    def _ftran(self, v):
        v = self.lu.solve(v)
        for p, col, piv in self.etas:
            vp = v[p] / piv
            if vp != 0.0:
                v -= vp * col
            v[p] = vp
        return v

    def _btran(self, w):
        w = np.array(w, dtype=float)
        for p, col, piv in reversed(self.etas):
            w[p] = (w[p] - w @ col) / piv
        return self.lu.solve(w, trans="T")

    # -- iterations --------------------------------------------------------

    def _duals(self, cost, J, MTJ):
        y = self._btran(cost[self.basis])
        return cost[J] - MTJ @ y

    def _run(self, cost):
        lower, upper = self.lower, self.upper
        # fixed columns (equality-row logicals, retired artificials) never enter
        J = np.flatnonzero(lower < upper)
        MTJ = self.MT[J]
        loJ, upJ = lower[J] + self.ftol, upper[J] - self.ftol
        degenerate_run = 0
        d = self._duals(cost, J, MTJ)
        fresh = True
        devex = self.pricing == "devex"
        weights = np.ones(J.size)
        unit = np.zeros(self.m)
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            if len(self.etas) >= self.refactor_every:
                self._refactor()
                d = self._duals(cost, J, MTJ)
                fresh = True
            x = self.x
            xJ = x[J]
            nonbasic = ~self.is_basic[J]
            cand = nonbasic & (((d < -self.dtol) & (xJ < upJ)) | ((d > self.dtol) & (xJ > loJ)))
            if not cand.any():
                if fresh:
                    return OPTIMAL
                # incremental reduced costs drift; confirm optimality on exact ones
                d = self._duals(cost, J, MTJ)
                fresh = True
                continue
            bland = self._bland or degenerate_run > 50
            if bland:
                k = int(np.argmax(cand))
            elif devex:
                k = int(np.argmax(np.where(cand, d * d / weights, -1.0)))
            else:
                k = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            q = int(J[k])
            dq = d[k]
            direction = 1.0 if dq < 0 else -1.0
            alpha = self._ftran(self._column(q))
            rate = -direction * alpha

            moved = np.flatnonzero(rate)
            rmv = rate[moved]
            bmv = self.basis[moved]
            xmv = x[bmv]
            big = np.abs(rmv) > self.ptol
            nz, rnz, bnz, xnz = moved[big], rmv[big], bmv[big], xmv[big]
            # bound each moving basic variable runs into
            bound = np.where(rnz < 0, lower[bnz], upper[bnz])
            with np.errstate(invalid="ignore"):
                exact = np.maximum((bound - xnz) / rnz, 0.0)
                if bland:
                    tmin = exact.min(initial=np.inf)
                    ties = np.flatnonzero(exact <= tmin + 1e-12) if np.isfinite(tmin) else np.array([], int)
                else:
                    relaxed = (bound + np.sign(rnz) * self.ftol - xnz) / rnz
                    tmax = relaxed.min(initial=np.inf)
                    ties = np.flatnonzero(exact <= tmax) if np.isfinite(tmax) else np.array([], int)

            t_flip = upper[q] - lower[q]
            if ties.size == 0:
                if not np.isfinite(t_flip):
                    return UNBOUNDED
                p = -1
                t = t_flip
            else:
                if bland:
                    i = int(ties[np.argmin(bnz[ties])])
                else:
                    i = int(ties[np.argmax(np.abs(rnz[ties]))])
                p = int(nz[i])
                t = float(exact[i])
                if t_flip <= t:
                    p = -1
                    t = t_flip

            self.iterations += 1
            degenerate_run = degenerate_run + 1 if t <= 1e-12 else 0
            if t > 0.0:
                x[bmv] = xmv + t * rmv
            if p < 0:
                x[q] = upper[q] if direction > 0 else lower[q]
                continue
            piv = alpha[p]
            # pivot row of B^-1 M, taken before the basis changes
            unit[p] = 1.0
            arow = MTJ @ self._btran(unit)
            unit[p] = 0.0
            d -= (dq / piv) * arow
            d[k] = 0.0
            fresh = False
            leaving = self.basis[p]
            if devex:
                wq = weights[k]
                upd = np.maximum(weights, (arow / piv) ** 2 * wq)
                weights = np.where(nonbasic, upd, weights)
                # the leaving column is basic now, so J-position lookup is needed
                pos = np.searchsorted(J, leaving)
                if pos < J.size and J[pos] == leaving:
                    weights[pos] = max(wq / piv**2, 1.0)
                if weights.max() > 1e12:
                    weights[:] = 1.0
            x[leaving] = lower[leaving] if rate[p] < 0 else upper[leaving]
            x[q] = x[q] + direction * t
            self.basis[p] = q
            self.is_basic[leaving] = False
            self.is_basic[q] = True
            col = alpha.copy()
            col[p] = 0.0
            self.etas.append((p, col, piv))

    def solve(self) -> LPResult:
        lp, m, n = self.lp, self.m, self.n
        if not self._setup():
            return self._result(INFEASIBLE)
        if self.num_art:
            status = self._run(self.cost1)
            self.phase1_iterations = self.iterations
            if status == ITERATION_LIMIT:
                return self._result(status)
            self._refactor()
            infeas = float(self.x[n + m :].sum())
            if infeas > 1e-7 * self._scale():
                logger.info("phase 1 ended with infeasibility %.3g", infeas)
                return self._result(INFEASIBLE)
            self.lower[n + m :] = 0.0
            self.upper[n + m :] = 0.0
            nb = ~self.is_basic
            nb[: n + m] = False
            self.x[nb] = 0.0
        status = self._run(self.cost2)
        return self._result(status)

    def _scale(self):
        vals = np.concatenate([self.lp.row_lo, self.lp.row_hi, self.lp.col_lo, self.lp.col_hi])
        vals = np.abs(vals[np.isfinite(vals)])
        return max(1.0, float(vals.max(initial=0.0)))

    def _result(self, status) -> LPResult:
        lp, m, n = self.lp, self.m, self.n
        if hasattr(self, "lu"):
            self._refactor()
            y = self._btran(self.cost2[self.basis]) if m else np.zeros(0)
            x = self.x[:n].copy()
        else:
            y = np.zeros(m)
            x = np.where(np.isfinite(lp.col_lo), lp.col_lo, 0.0)
        d = lp.c - lp.A.T @ y
        return LPResult(
            status=status,
            x=x,
            row_activity=lp.A @ x,
            row_duals=y,
            reduced_costs=d,
            objective=lp.objective(x),
            iterations=self.iterations,
            phase1_iterations=self.phase1_iterations,
            pricing=self.pricing if self.pricing == "bland" else f"{self.pricing}+bland-fallback",
        )


def _solve_unconstrained(lp: LinearProgram) -> LPResult:
    c, lo, hi = lp.c, lp.col_lo, lp.col_hi
    if np.any(lo > hi):
        status = INFEASIBLE
    elif np.any((c < 0) & ~np.isfinite(hi)) or np.any((c > 0) & ~np.isfinite(lo)):
        status = UNBOUNDED
    else:
        status = OPTIMAL
    x = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    x = np.where(np.isfinite(x), x, 0.0)
    return LPResult(status, x, np.zeros(0), np.zeros(0), c.copy(), lp.objective(x), 0, 0, "none")


def solve_lp(
    lp: LinearProgram,
    pricing: str = "devex",
    feas_tol: float = 1e-9,
    opt_tol: float = 1e-9,
    refactor_every: int = 40,
    max_iter: int | None = None,
) -> LPResult:
    """Minimize ``lp``; see module docstring for the algorithm.

    ``opt_tol`` is scaled by ``max(1, max|c|)`` before use as the reduced
    cost threshold.
    """
    if lp.num_rows == 0:
        return _solve_unconstrained(lp)
    solver = _Simplex(lp, pricing, feas_tol, opt_tol, refactor_every, max_iter)
    result = solver.solve()
    logger.debug(
        "simplex %s after %d iterations (%d in phase 1), objective %.10g",
        result.status, result.iterations, result.phase1_iterations, result.objective,
    )
    return result
