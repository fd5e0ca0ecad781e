# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel for the QP solver hot loops.

Same contract as ``_kernels_py``. Constraint rows are stored in CSR form
so the Schur complement of an active set assembles in O(nnz) instead of
O(k^2 n); the planner's rows carry at most two nonzeros each.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport NAN, fabs
from scipy.linalg.cython_lapack cimport dposv, dpotrf, dpotrs

cnp.import_array()

BACKEND_NAME = "compiled"


cdef class Workspace:
    cdef public object G            # dense rows, kept for the driver
    cdef double[::1] h, hinv, g, hvec
    cdef double[:, ::1] Gd
    cdef int n, m
    # CSR of G
    cdef int[::1] indptr, indices
    cdef double[::1] data
    # ADMM factor cache
    cdef double admm_rho, admm_sigma
    cdef double[::1, :] admm_fac
    cdef bint admm_ready

    def __init__(self, h, g, G, hvec):
        self.h = np.ascontiguousarray(h, dtype=np.float64)
        self.hinv = 1.0 / np.ascontiguousarray(h, dtype=np.float64)
        self.g = np.ascontiguousarray(g, dtype=np.float64)
        self.G = np.ascontiguousarray(G, dtype=np.float64)
        self.Gd = self.G
        self.hvec = np.ascontiguousarray(hvec, dtype=np.float64)
        self.n = self.Gd.shape[1]
        self.m = self.Gd.shape[0]

        mask = np.abs(G) > 0.0
        counts = mask.sum(axis=1).astype(np.int32)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        rows, cols = np.nonzero(mask)
        self.indices = cols.astype(np.int32)
        self.data = np.asarray(G)[rows, cols].astype(np.float64)
        self.admm_ready = False
        self.admm_rho = -1.0
        self.admm_sigma = -1.0

    # -- equality-constrained subproblem --------------------------------

    def eqp(self, W, double reg=0.0):
        cdef cnp.intp_t[::1] Wv = np.ascontiguousarray(W, dtype=np.intp)
        cdef int k = Wv.shape[0]
        cdef int n = self.n
        cdef int i, a, b, c, p, info, one = 1
        cdef double v, acc

        x_arr = np.empty(n, dtype=np.float64)
        cdef double[::1] x = x_arr
        if k == 0:
            for i in range(n):
                x[i] = -self.hinv[i] * self.g[i]
            return x_arr, np.zeros(0)

        S_arr = np.zeros((k, k), dtype=np.float64, order="F")
        cdef double[::1, :] S = S_arr
        rhs_arr = np.empty(k, dtype=np.float64)
        cdef double[::1] rhs = rhs_arr

        # column -> (active row position, value) adjacency for sparse assembly
        col_cnt_arr = np.zeros(n, dtype=np.int32)
        cdef int[::1] col_cnt = col_cnt_arr
        cdef int row, nnz_total = 0
        for a in range(k):
            row = <int> Wv[a]
            nnz_total += self.indptr[row + 1] - self.indptr[row]
            for p in range(self.indptr[row], self.indptr[row + 1]):
                col_cnt[self.indices[p]] += 1
        col_ptr_arr = np.zeros(n + 1, dtype=np.int32)
        cdef int[::1] col_ptr = col_ptr_arr
        for c in range(n):
            col_ptr[c + 1] = col_ptr[c] + col_cnt[c]
        col_row_arr = np.empty(nnz_total, dtype=np.int32)
        col_val_arr = np.empty(nnz_total, dtype=np.float64)
        cdef int[::1] col_row = col_row_arr
        cdef double[::1] col_val = col_val_arr
        fill_arr = np.zeros(n, dtype=np.int32)
        cdef int[::1] fill = fill_arr
        for a in range(k):
            row = <int> Wv[a]
            acc = 0.0
            for p in range(self.indptr[row], self.indptr[row + 1]):
                c = self.indices[p]
                v = self.data[p]
                col_row[col_ptr[c] + fill[c]] = a
                col_val[col_ptr[c] + fill[c]] = v
                fill[c] += 1
                acc += v * self.hinv[c] * self.g[c]
            rhs[a] = -(self.hvec[row] + acc)

        cdef int pa, pb
        cdef double hv
        for c in range(n):
            hv = self.hinv[c]
            for pa in range(col_ptr[c], col_ptr[c + 1]):
                a = col_row[pa]
                v = col_val[pa] * hv
                for pb in range(col_ptr[c], col_ptr[c + 1]):
                    b = col_row[pb]
                    if b >= a:
                        S[b, a] += v * col_val[pb]   # lower triangle
        if reg > 0.0:
            for a in range(k):
                S[a, a] += reg

        mu_arr = rhs_arr.copy()
        cdef double[::1] mu = mu_arr
        cdef char lo_c = b'L'
        dposv(&lo_c, &k, &one, &S[0, 0], &k, &mu[0], &k, &info)
        if info != 0:
            x_arr.fill(NAN)
            return x_arr, np.zeros(k)

        for i in range(n):
            x[i] = self.g[i]
        for a in range(k):
            row = <int> Wv[a]
            v = mu[a]
            for p in range(self.indptr[row], self.indptr[row + 1]):
                x[self.indices[p]] += self.data[p] * v
        for i in range(n):
            x[i] = -self.hinv[i] * x[i]
        return x_arr, mu_arr

    # -- operator-splitting fallback -------------------------------------

    cdef void _factor_admm(self, double sigma, double rho):
        cdef int n = self.n
        cdef int r, p1, p2, info
        M_arr = np.zeros((n, n), dtype=np.float64, order="F")
        cdef double[::1, :] M = M_arr
        cdef int i
        for i in range(n):
            M[i, i] = self.h[i] + sigma
        for r in range(self.m):
            for p1 in range(self.indptr[r], self.indptr[r + 1]):
                for p2 in range(self.indptr[r], self.indptr[r + 1]):
                    M[self.indices[p1], self.indices[p2]] += (
                        rho * self.data[p1] * self.data[p2])
        cdef char lo_c = b'L'
        dpotrf(&lo_c, &n, &M[0, 0], &n, &info)
        self.admm_fac = M
        self.admm_ready = info == 0
        self.admm_rho = rho
        self.admm_sigma = sigma

    def admm(self, x0, z0, y0, double sigma, double rho, double alpha,
             int n_iter):
        cdef int n = self.n, m = self.m
        cdef int it, i, r, p, info, one = 1
        x_arr = np.array(x0, dtype=np.float64)
        z_arr = np.array(z0, dtype=np.float64)
        y_arr = np.array(y0, dtype=np.float64)
        cdef double[::1] x = x_arr, z = z_arr, y = y_arr
        if self.admm_rho != rho or self.admm_sigma != sigma or not self.admm_ready:
            self._factor_admm(sigma, rho)
        if not self.admm_ready:
            return x_arr, z_arr, y_arr, np.inf, np.inf

        rhs_arr = np.empty(n, dtype=np.float64)
        zt_arr = np.empty(m, dtype=np.float64)
        cdef double[::1] rhs = rhs_arr, zt = zt_arr
        cdef double acc, zr
        cdef char lo_c = b'L'
        for it in range(n_iter):
            for i in range(n):
                rhs[i] = sigma * x[i] - self.g[i]
            for r in range(m):
                acc = rho * z[r] - y[r]
                for p in range(self.indptr[r], self.indptr[r + 1]):
                    rhs[self.indices[p]] += self.data[p] * acc
            dpotrs(&lo_c, &n, &one, &self.admm_fac[0, 0], &n, &rhs[0], &n, &info)
            for r in range(m):
                acc = 0.0
                for p in range(self.indptr[r], self.indptr[r + 1]):
                    acc += self.data[p] * rhs[self.indices[p]]
                zt[r] = acc
            for i in range(n):
                x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]
            for r in range(m):
                zr = alpha * zt[r] + (1.0 - alpha) * z[r]
                acc = zr + y[r] / rho
                if acc > self.hvec[r]:
                    acc = self.hvec[r]
                y[r] += rho * (zr - acc)
                z[r] = acc

        # residual max-norms
        cdef double pri = 0.0, dua = 0.0, gx
        grad_arr = np.empty(n, dtype=np.float64)
        cdef double[::1] grad = grad_arr
        for i in range(n):
            grad[i] = self.h[i] * x[i] + self.g[i]
        for r in range(m):
            gx = 0.0
            for p in range(self.indptr[r], self.indptr[r + 1]):
                gx += self.data[p] * x[self.indices[p]]
                grad[self.indices[p]] += self.data[p] * y[r]
            if fabs(gx - z[r]) > pri:
                pri = fabs(gx - z[r])
        for i in range(n):
            if fabs(grad[i]) > dua:
                dua = fabs(grad[i])
        return x_arr, z_arr, y_arr, pri, dua
