"""Dense convex QP solver for diagonal Hessians.

Primary method is an active-set iteration whose per-step linear algebra
runs in a swappable kernel (compiled extension when available, NumPy
otherwise). If the active set cycles past its iteration budget, an
operator-splitting (ADMM) fallback takes over and the result is polished
back through the equality-constrained subproblem.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import QpProblem, QpSolution, QpStatus

if os.environ.get("CROSSFLOW_PURE_PYTHON", "").strip() not in ("", "0", "false"):
    from . import _kernels_py as _kernels
else:
    try:
        from . import _kernels_cy as _kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _kernels

BACKEND = _kernels.BACKEND_NAME

_MULT_TOL = 1e-9          # drop threshold for negative multipliers
_ADMM_SIGMA = 1e-6
_ADMM_ALPHA = 1.6
_ADMM_CHUNK = 250
_ADMM_MAX_ITER = 40000


@dataclass
class WarmStart:
    """Primal warm start; the active set is re-detected from it."""

    x: np.ndarray


def default_max_iter(p: QpProblem) -> int:
    return 10 * (p.n + p.m)


def _stack(p: QpProblem):
    """All constraints as G x <= hvec: rows of A, then -x <= -lo, x <= hi."""
    eye = np.eye(p.n)
    G = np.vstack([p.A, -eye, eye]) if p.m else np.vstack([-eye, eye])
    hvec = np.concatenate([p.b, -p.lo, p.hi])
    return np.ascontiguousarray(G), np.ascontiguousarray(hvec)


def _box_certificate(p: QpProblem, tol: float) -> list:
    """Rows whose bound-restricted minimum already exceeds b (infeasible)."""
    if p.m == 0:
        return []
    pos = np.clip(p.A, 0.0, None)
    neg = np.clip(p.A, None, 0.0)
    row_min = pos @ p.lo + neg @ p.hi
    return [int(i) for i in np.nonzero(row_min > p.b + tol)[0]]


def _split_duals(p: QpProblem, mu_full: np.ndarray):
    m, n = p.m, p.n
    return mu_full[:m], mu_full[m:m + n], mu_full[m + n:]


def _make_solution(p: QpProblem, x, mu_full, status, iters, fallback) -> QpSolution:
    rows, d_lo, d_hi = _split_duals(p, mu_full)
    sol = QpSolution(x=x, duals_rows=rows.copy(), duals_lo=d_lo.copy(),
                     duals_hi=d_hi.copy(), status=status, iterations=iters,
                     used_fallback=fallback)
    sol.kkt_residual = max(kkt_residual(p, sol))
    return sol


def kkt_residual(p: QpProblem, sol: QpSolution) -> tuple[float, float, float]:
    """(stationarity, primal feasibility, complementarity) max-norms."""
    x = sol.x
    grad = p.h * x + p.g
    if p.m:
        grad = grad + p.A.T @ sol.duals_rows
    grad = grad - sol.duals_lo + sol.duals_hi
    stat = float(np.max(np.abs(grad), initial=0.0))

    slacks = [p.lo - x, x - p.hi]
    if p.m:
        slacks.insert(0, p.A @ x - p.b)
    primal = float(max(np.max(s, initial=0.0) for s in slacks))
    primal = max(primal, 0.0)

    comp_terms = [sol.duals_lo * (p.lo - x), sol.duals_hi * (x - p.hi)]
    if p.m:
        comp_terms.insert(0, sol.duals_rows * (p.A @ x - p.b))
    comp = float(max(np.max(np.abs(t), initial=0.0) for t in comp_terms))
    return stat, primal, comp


def solve(p: QpProblem, tol: float = 1e-6, max_iter: Optional[int] = None,
          warm: Optional[WarmStart] = None) -> QpSolution:
    """Solve the QP; deterministic for fixed inputs.

    Returns status OPTIMAL with KKT residuals <= tol, INFEASIBLE with a
    certificate, or ITER_LIMIT if both methods exhaust their budgets.
    """
    p.validate()
    n, m = p.n, p.m
    if max_iter is None:
        max_iter = default_max_iter(p)

    if n == 0:
        return QpSolution(x=np.zeros(0), duals_rows=np.zeros(m),
                          duals_lo=np.zeros(0), duals_hi=np.zeros(0),
                          status=QpStatus.OPTIMAL, kkt_residual=0.0)

    fixed = p.hi - p.lo <= 1e-12
    if np.any(fixed):
        return _solve_with_fixed(p, fixed, tol, max_iter, warm)

    bad_rows = _box_certificate(p, tol)
    if bad_rows:
        return QpSolution(x=np.clip(-p.g / p.h, p.lo, p.hi),
                          duals_rows=np.zeros(m), duals_lo=np.zeros(n),
                          duals_hi=np.zeros(n), status=QpStatus.INFEASIBLE,
                          certificate=bad_rows)

    G, hvec = _stack(p)
    ws = _kernels.Workspace(p.h, p.g, G, hvec)
    n_cons = len(hvec)
    scale = np.maximum(1.0, np.abs(hvec))

    # unconstrained fast path
    x_free = -p.g / p.h
    if np.all(G @ x_free <= hvec + tol):
        mu = np.zeros(n_cons)
        return _make_solution(p, x_free, mu, QpStatus.OPTIMAL, 0, False)

    # initial working set: constraints near-active at the warm-start point
    W: list[int] = []
    if warm is not None and len(warm.x) == n:
        r0 = G @ np.clip(warm.x, p.lo, p.hi) - hvec
        cand = np.nonzero(r0 > -1e-3 * scale)[0]
        if len(cand) > n:
            cand = cand[np.argsort(r0[cand] / scale[cand])[::-1][:n]]
        W = sorted(int(i) for i in cand)

    x, mu_full, iters, ok = _active_set(ws, W, n, n_cons, hvec, scale,
                                        tol, max_iter)
    if ok:
        sol = _make_solution(p, x, mu_full, QpStatus.OPTIMAL, iters, False)
        if sol.kkt_residual <= 10 * tol:
            return sol

    return _admm_fallback(p, ws, hvec, scale, tol, iters)


def _solve_with_fixed(p: QpProblem, fixed: np.ndarray, tol: float,
                      max_iter: int, warm: Optional[WarmStart]) -> QpSolution:
    """Eliminate variables pinned by lo == hi and solve the reduced QP.

    Pinned variables make both of their bound rows active at once, which
    degenerates every active-set subproblem; substitution avoids that and
    shrinks the system.
    """
    free = ~fixed
    x_fix = p.lo.copy()
    n = p.n

    if p.m:
        A_red = np.ascontiguousarray(p.A[:, free])
        b_red = p.b - p.A[:, fixed] @ x_fix[fixed]
        # rows that involved only pinned variables reduce to 0 <= b_red:
        # either vacuous or an infeasibility certificate, and if kept
        # they poison every working set (zero gradient, zero residual)
        nonzero = np.abs(A_red).sum(axis=1) > 1e-14
        bad = [int(i) for i in np.nonzero(~nonzero & (b_red < -tol))[0]]
        if bad:
            sol = QpSolution(x=np.clip(-p.g / p.h, p.lo, p.hi),
                             duals_rows=np.zeros(p.m),
                             duals_lo=np.zeros(n), duals_hi=np.zeros(n),
                             status=QpStatus.INFEASIBLE, certificate=bad)
            return sol
        keep = np.nonzero(nonzero)[0]
        A_red = np.ascontiguousarray(A_red[keep])
        b_red = b_red[keep]
    else:
        keep = np.zeros(0, dtype=np.intp)
        A_red = np.zeros((0, int(free.sum())))
        b_red = np.zeros(0)

    duals_lo = np.zeros(n)
    duals_hi = np.zeros(n)

    if not free.any():
        x = x_fix
        bad = []
        if p.m:
            bad = [int(i) for i in np.nonzero(p.A @ x > p.b + tol)[0]]
        status = QpStatus.INFEASIBLE if bad else QpStatus.OPTIMAL
        grad = p.h * x + p.g
        duals_lo = np.maximum(grad, 0.0)
        duals_hi = np.maximum(-grad, 0.0)
        sol = QpSolution(x=x, duals_rows=np.zeros(p.m), duals_lo=duals_lo,
                         duals_hi=duals_hi, status=status, certificate=bad)
        sol.kkt_residual = max(kkt_residual(p, sol))
        return sol

    red = QpProblem(h=p.h[free], g=p.g[free], A=A_red, b=b_red,
                    lo=p.lo[free], hi=p.hi[free])
    warm_red = WarmStart(x=np.asarray(warm.x)[free]) \
        if warm is not None and len(warm.x) == n else None
    sub = solve(red, tol=tol, max_iter=max_iter, warm=warm_red)

    x = np.empty(n)
    x[free] = sub.x
    x[fixed] = x_fix[fixed]
    duals_lo[free] = sub.duals_lo
    duals_hi[free] = sub.duals_hi
    duals_rows = np.zeros(p.m)
    if len(keep):
        duals_rows[keep] = sub.duals_rows
    # a pinned variable absorbs its stationarity residual into bound duals
    grad = p.h * x + p.g
    if p.m:
        grad = grad + p.A.T @ duals_rows
    duals_lo[fixed] = np.maximum(grad[fixed], 0.0)
    duals_hi[fixed] = np.maximum(-grad[fixed], 0.0)

    cert = [int(keep[c]) if isinstance(c, (int, np.integer)) else c
            for c in sub.certificate]
    sol = QpSolution(x=x, duals_rows=duals_rows, duals_lo=duals_lo,
                     duals_hi=duals_hi, status=sub.status,
                     iterations=sub.iterations, certificate=cert,
                     used_fallback=sub.used_fallback)
    sol.kkt_residual = max(kkt_residual(p, sol))
    return sol


def _active_set(ws, W: list[int], n: int, n_cons: int, hvec, scale,
                tol: float, max_iter: int):
    """Naive dual-flavored active-set loop. Returns (x, mu_full, iters, ok)."""
    mu_full = np.zeros(n_cons)
    x = None
    reg = 0.0
    add_counts: dict[int, int] = {}
    restarted = False
    for it in range(1, max_iter + 1):
        Wa = np.asarray(W, dtype=np.intp)
        x, mu = ws.eqp(Wa, reg)
        if not np.all(np.isfinite(x)):
            reg = 1e-10 if reg == 0.0 else reg * 100
            if reg > 1e-4:
                return x, mu_full, it, False
            continue
        if len(W) and np.min(mu) < -_MULT_TOL:
            W.pop(int(np.argmin(mu)))
            continue
        r = ws.G @ x - hvec
        worst = int(np.argmax(r / scale))
        if r[worst] <= tol * scale[worst]:
            mu_full[:] = 0.0
            mu_full[Wa] = np.maximum(mu, 0.0) if len(W) else 0.0
            return x, mu_full, it, True
        if worst in W:
            # numerically stuck on a degenerate set
            reg = 1e-10 if reg == 0.0 else reg * 100
            if reg > 1e-4:
                return x, mu_full, it, False
            continue
        if len(W) >= n:
            W.pop(int(np.argmin(mu)))
        add_counts[worst] = add_counts.get(worst, 0) + 1
        if add_counts[worst] > 3:
            # a warm working set can cycle at a degenerate vertex (more
            # active constraints than variables); throw it away once and
            # rebuild from scratch
            if restarted:
                return x, mu_full, it, False
            restarted = True
            W.clear()
            add_counts.clear()
            continue
        W.append(worst)
    return x, mu_full, max_iter, False


def _admm_fallback(p: QpProblem, ws, hvec, scale, tol: float,
                   prior_iters: int) -> QpSolution:
    # operator splitting is very sensitive to row scaling (planner rows mix
    # coefficients near 100 with unit box rows); equilibrate to unit row
    # norms and unscale the duals on the way out
    d = np.linalg.norm(np.asarray(ws.G), axis=1)
    d[d < 1e-12] = 1.0
    G_s = np.ascontiguousarray(np.asarray(ws.G) / d[:, None])
    h_s = hvec / d
    ws_s = _kernels.Workspace(p.h, p.g, G_s, h_s)
    scale_s = np.maximum(1.0, np.abs(h_s))

    n_cons = len(h_s)
    x = np.clip(-p.g / p.h, p.lo, p.hi)
    z = np.minimum(G_s @ x, h_s)
    y = np.zeros(n_cons)
    rho = 0.1
    total = 0
    best = None
    while total < _ADMM_MAX_ITER:
        x, z, y, pri, dua = ws_s.admm(x, z, y, _ADMM_SIGMA, rho,
                                      _ADMM_ALPHA, _ADMM_CHUNK)
        total += _ADMM_CHUNK
        sol = _polish(p, ws_s, x, y, h_s, scale_s, tol,
                      prior_iters + total, row_scale=d)
        if sol is not None:
            sol.used_fallback = True
            return sol
        if best is None or pri + dua < best:
            best = pri + dua
        if pri > 1e3 * tol and dua < 1e-8 and total > 5000:
            break  # stalled primal residual: likely infeasible
        if dua > 0 and pri > 0:
            ratio = np.sqrt(pri / dua)
            if ratio > 5 or ratio < 0.2:
                # clamp the per-update factor or rho oscillates between
                # extremes on badly scaled rows and never settles
                step = float(np.clip(ratio, 0.1, 10.0))
                rho = float(np.clip(rho * step, 1e-6, 1e6))

    # distinguish infeasible from plain iteration exhaustion
    cert = _box_certificate(p, 0.0)
    status = QpStatus.INFEASIBLE if cert else QpStatus.ITER_LIMIT
    mu_full = np.maximum(y, 0.0) / d
    sol = _make_solution(p, np.clip(x, p.lo, p.hi), mu_full, status,
                         prior_iters + total, True)
    sol.certificate = cert
    if status is QpStatus.ITER_LIMIT and sol.kkt_residual <= 10 * tol:
        sol.status = QpStatus.OPTIMAL   # iterate converged; polish just failed
    return sol


def _polish(p: QpProblem, ws, x, y, hvec, scale, tol, iters, row_scale=None):
    """Try to finish an ADMM iterate exactly via its apparent active set.

    ``row_scale`` holds the equilibration divisors when the workspace rows
    were normalized; duals must be divided by it to apply to the original
    rows.
    """
    r = ws.G @ x - hvec
    active = np.nonzero((r > -1e-4 * scale) | (y > 1e-6))[0]
    if len(active) > p.n:
        order = np.argsort(y[active])[::-1]
        active = active[order[:p.n]]
    W = sorted(int(i) for i in active)
    # prune rather than reject: at a degenerate vertex the dual-ordered
    # trim above routinely includes a few wrong rows
    for _ in range(len(W) + 1):
        x_p, mu = ws.eqp(np.asarray(W, dtype=np.intp), 0.0)
        if not np.all(np.isfinite(x_p)):
            x_p, mu = ws.eqp(np.asarray(W, dtype=np.intp), 1e-10)
            if not np.all(np.isfinite(x_p)):
                return None
        if len(W) and np.min(mu) < -_MULT_TOL:
            W.pop(int(np.argmin(mu)))
            continue
        break
    else:
        return None
    viol = ws.G @ x_p - hvec
    if np.max(viol / scale, initial=0.0) > tol:
        return None
    mu_full = np.zeros(len(hvec))
    if len(W):
        mu_full[np.asarray(W)] = np.maximum(mu, 0.0)
    if row_scale is not None:
        mu_full = mu_full / row_scale
    sol = _make_solution(p, x_p, mu_full, QpStatus.OPTIMAL, iters, True)
    if sol.kkt_residual > 10 * tol:
        return None
    return sol
