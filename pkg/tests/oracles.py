"""Independent reference computations used as test oracles."""
import itertools

import numpy as np


def vertex_enumeration(c, A, row_lo, row_hi, col_lo, col_hi, tol=1e-9):
    """Minimum of c @ x over a bounded polyhedron by trying every basic point.

    Every finite bound (rows and columns) defines a hyperplane; each choice of
    n linearly independent hyperplanes gives a candidate point. Returns
    ``(best_objective, best_x)`` or ``(None, None)`` if no candidate is feasible.
    """
    c = np.asarray(c, float)
    A = np.atleast_2d(np.asarray(A, float)).reshape(-1, len(c))
    n = len(c)
    planes = []
    for i in range(A.shape[0]):
        for b in (row_lo[i], row_hi[i]):
            if np.isfinite(b):
                planes.append((A[i], b))
    eye = np.eye(n)
    for j in range(n):
        for b in (col_lo[j], col_hi[j]):
            if np.isfinite(b):
                planes.append((eye[j], b))
    best, best_x = None, None
    for combo in itertools.combinations(range(len(planes)), n):
        M = np.array([planes[k][0] for k in combo])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, np.array([planes[k][1] for k in combo]))
        act = A @ x
        scale = 1.0 + np.abs(x).max()
        if np.any(x < col_lo - tol * scale) or np.any(x > col_hi + tol * scale):
            continue
        if np.any(act < row_lo - tol * scale) or np.any(act > row_hi + tol * scale):
            continue
        val = float(c @ x)
        if best is None or val < best:
            best, best_x = val, x
    return best, best_x


def random_bounded_lp(rng, max_vars=4, max_rows=4):
    """Feasible LP with finite column bounds, built around an interior point."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    lo = rng.uniform(-5, 0, n)
    hi = lo + rng.uniform(0.5, 6, n)
    x0 = rng.uniform(lo, hi)
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.8)
    act = A @ x0
    row_lo = np.where(rng.random(m) < 0.6, act - rng.uniform(0, 3, m), -np.inf)
    row_hi = np.where(rng.random(m) < 0.6, act + rng.uniform(0, 3, m), np.inf)
    eq = rng.random(m) < 0.15
    row_lo[eq] = row_hi[eq] = act[eq]
    c = rng.normal(size=n)
    return c, A, row_lo, row_hi, lo, hi
