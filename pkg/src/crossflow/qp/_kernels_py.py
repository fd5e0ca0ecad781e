"""Pure-NumPy kernel: reference implementation of the solver hot loops.

Used when the compiled extension is unavailable or disabled via
``CROSSFLOW_PURE_PYTHON=1``. Same contract as ``_kernels_cy``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

BACKEND_NAME = "python"


class Workspace:
    """Per-solve workspace over the stacked constraints G x <= hvec."""

    def __init__(self, h: np.ndarray, g: np.ndarray,
                 G: np.ndarray, hvec: np.ndarray):
        self.h = h
        self.hinv = 1.0 / h
        self.g = g
        self.G = G
        self.hvec = hvec
        self._admm_factor = None
        self._admm_rho = None
        self._admm_sigma = None

    # -- equality-constrained subproblem --------------------------------

    def eqp(self, W: np.ndarray, reg: float = 0.0):
        """Minimize the objective subject to G[W] x = hvec[W].

        Returns (x, mu) with mu the multipliers of the active rows.
        """
        if len(W) == 0:
            return -self.hinv * self.g, np.zeros(0)
        Gw = self.G[W]
        hw = self.hvec[W]
        B = Gw * self.hinv          # k x n, rows scaled by H^-1
        S = B @ Gw.T
        if reg:
            S[np.diag_indices_from(S)] += reg
        rhs = -(hw + B @ self.g)
        try:
            mu = sla.cho_solve(sla.cho_factor(S), rhs)
        except np.linalg.LinAlgError:
            # degenerate active set; caller retries with regularization
            return np.full(len(self.g), np.nan), np.zeros(len(W))
        x = -self.hinv * (self.g + Gw.T @ mu)
        return x, mu

    # -- operator-splitting fallback -------------------------------------

    def admm(self, x, z, y, sigma: float, rho: float, alpha: float, n_iter: int):
        """Run ``n_iter`` splitting iterations; returns updated iterates
        plus (primal, dual) residual max-norms."""
        G, hvec, g = self.G, self.hvec, self.g
        if self._admm_rho != rho or self._admm_sigma != sigma:
            M = np.diag(self.h + sigma) + rho * (G.T @ G)
            self._admm_factor = sla.cho_factor(M)
            self._admm_rho, self._admm_sigma = rho, sigma
        fac = self._admm_factor
        for _ in range(n_iter):
            rhs = sigma * x - g + G.T @ (rho * z - y)
            x_t = sla.cho_solve(fac, rhs)
            z_t = G @ x_t
            x = alpha * x_t + (1.0 - alpha) * x
            z_rel = alpha * z_t + (1.0 - alpha) * z
            z = np.minimum(z_rel + y / rho, hvec)
            y = y + rho * (z_rel - z)
        Gx = G @ x
        pri = float(np.max(np.abs(Gx - z), initial=0.0))
        dua = float(np.max(np.abs(self.h * x + g + G.T @ y), initial=0.0))
        return x, z, y, pri, dua
