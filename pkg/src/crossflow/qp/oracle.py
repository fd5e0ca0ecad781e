"""Independent brute-force checks for the QP solver.

Two oracles, deliberately sharing no code with the solver:

* ``grid_oracle`` - projected grid descent. The objective is separable
  (diagonal Hessian), so single-coordinate moves are exact on the grid;
  multi-resolution pairwise grid sweeps handle coupling through the
  constraint rows.
* ``enumeration_oracle`` - exhaustive active-set enumeration, exact but
  only tractable for tiny instances; used to validate the grid oracle.
"""

from __future__ import annotations

import itertools

import numpy as np

from .types import QpProblem


def _feasible(p: QpProblem, x: np.ndarray, tol: float = 1e-9) -> bool:
    if np.any(x < p.lo - tol) or np.any(x > p.hi + tol):
        return False
    return p.m == 0 or bool(np.all(p.A @ x <= p.b + tol))


def _coord_interval(p: QpProblem, x: np.ndarray, i: int):
    """Exact feasible interval for x_i with the other coordinates fixed."""
    lo, hi = p.lo[i], p.hi[i]
    if p.m:
        rest = p.b - p.A @ x + p.A[:, i] * x[i]
        for a, r in zip(p.A[:, i], rest):
            if a > 1e-14:
                hi = min(hi, r / a)
            elif a < -1e-14:
                lo = max(lo, r / a)
    return lo, hi


def _coord_sweep(p: QpProblem, x: np.ndarray, step: float) -> bool:
    """One pass of exact single-coordinate grid minimization."""
    moved = False
    for i in range(p.n):
        lo, hi = _coord_interval(p, x, i)
        if hi < lo:
            continue
        target = np.clip(-p.g[i] / p.h[i], lo, hi)
        # snap to the grid anchored at p.lo[i], staying inside [lo, hi]
        k = np.round((target - p.lo[i]) / step)
        for kk in (k, k - 1, k + 1):
            cand = p.lo[i] + kk * step
            if lo - 1e-12 <= cand <= hi + 1e-12:
                cand = min(max(cand, lo), hi)
                if abs(cand - x[i]) > 1e-15:
                    old = 0.5 * p.h[i] * x[i] ** 2 + p.g[i] * x[i]
                    new = 0.5 * p.h[i] * cand ** 2 + p.g[i] * cand
                    if new < old - 1e-15:
                        x[i] = cand
                        moved = True
                break
    return moved


def _pair_sweep(p: QpProblem, x: np.ndarray, base_step: float) -> bool:
    """Multi-resolution 2-coordinate grid moves to slide along row edges."""
    moved_any = False
    K = 16
    offsets = np.arange(-K, K + 1)
    levels = (64.0, 16.0, 4.0, 1.0)
    for i, j in itertools.combinations(range(p.n), 2):
        # independent per-coordinate resolutions: sliding along a row edge
        # may need a fine step in one coordinate and a coarse one in the other
        for level_i, level_j in itertools.product(levels, levels):
            di = offsets * (base_step * level_i)
            dj = offsets * (base_step * level_j)
            DI, DJ = np.meshgrid(di, dj, indexing="ij")
            xi = x[i] + DI
            xj = x[j] + DJ
            feas = ((xi >= p.lo[i] - 1e-12) & (xi <= p.hi[i] + 1e-12)
                    & (xj >= p.lo[j] - 1e-12) & (xj <= p.hi[j] + 1e-12))
            if p.m:
                slack = p.b - p.A @ x
                for a_i, a_j, sl in zip(p.A[:, i], p.A[:, j], slack):
                    feas &= (a_i * DI + a_j * DJ) <= sl + 1e-12
            if not feas.any():
                continue
            obj = (0.5 * p.h[i] * xi ** 2 + p.g[i] * xi
                   + 0.5 * p.h[j] * xj ** 2 + p.g[j] * xj)
            obj = np.where(feas, obj, np.inf)
            best = np.unravel_index(int(np.argmin(obj)), obj.shape)
            cur = (0.5 * p.h[i] * x[i] ** 2 + p.g[i] * x[i]
                   + 0.5 * p.h[j] * x[j] ** 2 + p.g[j] * x[j])
            if obj[best] < cur - 1e-13:
                x[i] += DI[best]
                x[j] += DJ[best]
                moved_any = True
    return moved_any


def grid_oracle(p: QpProblem, x0: np.ndarray, step: float = 1e-3,
                max_rounds: int = 200, feas_tol: float = 1e-9) -> np.ndarray:
    """Brute-force grid minimizer starting from a feasible point ``x0``.

    ``feas_tol`` admits starting points that are feasible only up to the
    caller's solver tolerance.
    """
    x = np.array(x0, dtype=float)
    if not _feasible(p, x, tol=feas_tol):
        raise ValueError("grid oracle needs a feasible starting point")
    for _ in range(max_rounds):
        moved = _coord_sweep(p, x, step)
        moved |= _pair_sweep(p, x, step)
        if not moved:
            break
    return x


def enumeration_oracle(p: QpProblem) -> np.ndarray | None:
    """Exact minimizer by enumerating candidate active sets (tiny n only).

    Returns None if no feasible candidate is found.
    """
    n = p.n
    eye = np.eye(n)
    G = np.vstack([p.A, -eye, eye]) if p.m else np.vstack([-eye, eye])
    hvec = np.concatenate([p.b, -p.lo, p.hi])
    n_cons = len(hvec)
    best, best_obj = None, np.inf
    for k in range(0, n + 1):
        for combo in itertools.combinations(range(n_cons), k):
            Gw = G[list(combo)]
            KKT = np.block([[np.diag(p.h), Gw.T],
                            [Gw, np.zeros((k, k))]])
            rhs = np.concatenate([-p.g, hvec[list(combo)]])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            x, mu = sol[:n], sol[n:]
            if np.any(mu < -1e-9):
                continue
            if not np.all(G @ x <= hvec + 1e-9):
                continue
            obj = p.objective(x)
            if obj < best_obj - 1e-15:
                best, best_obj = x, obj
    return best
