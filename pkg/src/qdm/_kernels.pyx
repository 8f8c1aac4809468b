# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: batch Levenberg-Marquardt and finite-segment Biot-Savart.

Same algorithms and status codes as ``qdm._kernels_py``. Pixels (points) are
distributed over OpenMP threads; each one is computed independently so the
output does not depend on the thread count.
"""
import numpy as np

from cython.parallel cimport parallel, prange
from libc.math cimport NAN, fabs, isfinite, sqrt
from libc.stdlib cimport free, malloc

NAME = "cython"

DEF STATUS_COST = 0
DEF STATUS_STEP = 1
DEF STATUS_MAXITER = 2
DEF STATUS_STALLED = 3
DEF STATUS_INVALID = 4
DEF LAMBDA_MAX = 1e16
DEF LAMBDA_MIN = 1e-16
DEF MU0_4PI = 1e-7


cdef double _cost(const double* y, const double* f, int F, const double* p,
                  const double* offs, int L, int G) noexcept nogil:
    cdef double total = 0.0, s, w2, u, S, r
    cdef int j, g, l, base
    for j in range(F):
        s = 0.0
        for g in range(G):
            base = 1 + 3 * g
            w2 = 0.25 * p[base + 1] * p[base + 1]
            S = 0.0
            for l in range(L):
                u = f[j] - (p[base] + offs[l])
                S = S + w2 / (u * u + w2)
            s = s + p[base + 2] * S
        r = y[j] - p[0] * (1.0 - s)
        total = total + r * r
    return total


cdef double _normal_equations(const double* y, const double* f, int F, const double* p,
                              const double* offs, int L, int G, int P,
                              double* A, double* grad, double* row) noexcept nogil:
    """Fill J^T J (lower triangle mirrored) and J^T r; return the cost."""
    cdef double total = 0.0, s, w, w2, u, inv, S, dS0, dSw, c, b, r
    cdef int j, g, l, base, a, k
    b = p[0]
    for a in range(P * P):
        A[a] = 0.0
    for a in range(P):
        grad[a] = 0.0
    for j in range(F):
        s = 0.0
        for g in range(G):
            base = 1 + 3 * g
            w = 0.5 * p[base + 1]
            w2 = w * w
            c = p[base + 2]
            S = 0.0
            dS0 = 0.0
            dSw = 0.0
            for l in range(L):
                u = f[j] - (p[base] + offs[l])
                inv = 1.0 / (u * u + w2)
                S = S + w2 * inv
                dS0 = dS0 + 2.0 * u * w2 * inv * inv
                dSw = dSw + w * u * u * inv * inv
            s = s + c * S
            row[base] = -b * c * dS0
            row[base + 1] = -b * c * dSw
            row[base + 2] = -b * S
        row[0] = 1.0 - s
        r = y[j] - b * (1.0 - s)
        total = total + r * r
        for a in range(P):
            grad[a] = grad[a] + row[a] * r
            for k in range(a + 1):
                A[a * P + k] = A[a * P + k] + row[a] * row[k]
    for a in range(P):
        for k in range(a + 1, P):
            A[a * P + k] = A[k * P + a]
    return total


cdef int _cholesky_solve(double* M, double* rhs, double* out, int P) noexcept nogil:
    """Solve M x = rhs in place (M overwritten by its Cholesky factor)."""
    cdef int i, j, k
    cdef double s
    for j in range(P):
        s = M[j * P + j]
        for k in range(j):
            s = s - M[j * P + k] * M[j * P + k]
        if not (s > 0.0):
            return 0
        M[j * P + j] = sqrt(s)
        for i in range(j + 1, P):
            s = M[i * P + j]
            for k in range(j):
                s = s - M[i * P + k] * M[j * P + k]
            M[i * P + j] = s / M[j * P + j]
    for i in range(P):
        s = rhs[i]
        for k in range(i):
            s = s - M[i * P + k] * out[k]
        out[i] = s / M[i * P + i]
    for i in range(P - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, P):
            s = s - M[k * P + i] * out[k]
        out[i] = s / M[i * P + i]
    return 1


cdef int _fit_one(const double* y, const double* f, int F, double* p, const double* scale,
                  const double* offs, int L, int G, int P, int max_iter, double cost_tol,
                  double param_tol, double lam0, double up, double down,
                  double* cost_out, int* iters_out, double* hist, double* work) noexcept nogil:
    cdef double* A = work
    cdef double* M = A + P * P
    cdef double* grad = M + P * P
    cdef double* delta = grad + P
    cdef double* p_try = delta + P
    cdef double* row = p_try + P
    cdef double* diag = row + P
    cdef int j, k, it, ok
    cdef double cost, c_try, lam = lam0, dmax, step, rel, t
    cdef int status = STATUS_MAXITER

    for j in range(F):
        if not isfinite(y[j]):
            return STATUS_INVALID
    for k in range(P):
        if not isfinite(p[k]):
            return STATUS_INVALID
    if not (p[0] > 0.0):
        return STATUS_INVALID

    cost = _normal_equations(y, f, F, p, offs, L, G, P, A, grad, row)
    if hist != NULL:
        hist[0] = cost
    iters_out[0] = 0
    for it in range(max_iter):
        dmax = 0.0
        for k in range(P):
            if A[k * P + k] > dmax:
                dmax = A[k * P + k]
        for k in range(P):
            diag[k] = A[k * P + k]
            if diag[k] < 1e-15 * dmax:
                diag[k] = 1e-15 * dmax
        for j in range(P * P):
            M[j] = A[j]
        for k in range(P):
            M[k * P + k] = M[k * P + k] + lam * diag[k]
        ok = _cholesky_solve(M, grad, delta, P)
        iters_out[0] = it + 1
        step = 0.0
        if ok:
            for k in range(P):
                p_try[k] = p[k] + delta[k]
                t = fabs(delta[k]) / scale[k]
                if t > step:
                    step = t
            c_try = _cost(y, f, F, p_try, offs, L, G)
        if ok and isfinite(c_try) and c_try <= cost:
            rel = (cost - c_try) / (cost if cost > 1e-300 else 1e-300)
            for k in range(P):
                p[k] = p_try[k]
            cost = c_try
            lam = lam * down
            if lam < LAMBDA_MIN:
                lam = LAMBDA_MIN
            if hist != NULL:
                hist[it + 1] = cost
            if rel < cost_tol or c_try == 0.0:
                status = STATUS_COST
                break
            if step < param_tol:
                status = STATUS_STEP
                break
            cost = _normal_equations(y, f, F, p, offs, L, G, P, A, grad, row)
        else:
            lam = lam * up
            if hist != NULL:
                hist[it + 1] = cost
            if ok and step < param_tol:
                status = STATUS_STEP
                break
            if lam > LAMBDA_MAX:
                status = STATUS_STALLED
                break
    cost_out[0] = cost
    return status


def lm_fit(spectra, freqs, p0, scales, offsets, int max_iter=200, double cost_tol=1e-10,
           double param_tol=1e-8, double lam0=1e-3, double up=10.0, double down=0.1,
           int workers=1, history=None):
    """Levenberg-Marquardt fit of every spectrum (row) independently.

    See ``qdm._kernels_py.lm_fit`` for the contract.
    """
    cdef double[:, ::1] y = np.ascontiguousarray(spectra, dtype=np.float64)
    cdef double[::1] f = np.ascontiguousarray(freqs, dtype=np.float64)
    p_arr = np.array(p0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] p = p_arr
    cdef double[:, ::1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef double[::1] offs = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    cdef int P = p.shape[1]
    cdef int F = f.shape[0]
    cdef int L = offs.shape[0]
    cdef int G = (P - 1) // 3
    cost_arr = np.full(n, np.nan)
    iters_arr = np.zeros(n, dtype=np.int32)
    status_arr = np.empty(n, dtype=np.int8)
    cdef double[::1] cost = cost_arr
    cdef int[::1] iters = iters_arr
    cdef signed char[::1] status = status_arr
    cdef double[:, ::1] hist
    cdef int use_hist = history is not None
    if use_hist:
        history[:] = np.nan
        hist = history
    else:
        hist = np.empty((1, 1))
    cdef Py_ssize_t i
    cdef int k, st
    cdef double* work
    cdef int nthreads = workers if workers > 0 else 1
    cdef Py_ssize_t worksize = 2 * P * P + 5 * P + 8
    if F == 0 or n == 0:
        return p_arr, cost_arr, iters_arr, status_arr

    with nogil, parallel(num_threads=nthreads):
        work = <double*> malloc(worksize * sizeof(double))
        for i in prange(n, schedule="dynamic", chunksize=4):
            st = _fit_one(&y[i, 0], &f[0], F, &p[i, 0], &sc[i, 0], &offs[0], L, G, P,
                          max_iter, cost_tol, param_tol, lam0, up, down,
                          &cost[i], &iters[i], &hist[i, 0] if use_hist else NULL, work)
            status[i] = st
            if st == STATUS_INVALID:
                for k in range(P):
                    p[i, k] = NAN
        free(work)
    return p_arr, cost_arr, iters_arr, status_arr


def biot_savart(points, seg_start, seg_end, currents, int workers=1):
    """Magnetic field (T) of straight line-current segments at points (m)."""
    cdef double[:, ::1] P = np.ascontiguousarray(np.reshape(points, (-1, 3)), dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(np.reshape(seg_start, (-1, 3)), dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(np.reshape(seg_end, (-1, 3)), dtype=np.float64)
    cdef double[::1] I = np.ascontiguousarray(np.reshape(currents, (-1,)), dtype=np.float64)
    out_arr = np.zeros((P.shape[0], 3))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = P.shape[0], ns = A.shape[0], i, s
    cdef double r1x, r1y, r1z, r2x, r2y, r2z, n1, n2, cx, cy, cz, cr2, dot, nn, q, fac
    cdef double bx, by, bz
    cdef int nthreads = workers if workers > 0 else 1
    if n == 0:
        return out_arr
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        bx = 0.0
        by = 0.0
        bz = 0.0
        for s in range(ns):
            if I[s] == 0.0:
                continue
            r1x = P[i, 0] - A[s, 0]
            r1y = P[i, 1] - A[s, 1]
            r1z = P[i, 2] - A[s, 2]
            r2x = P[i, 0] - B[s, 0]
            r2y = P[i, 1] - B[s, 1]
            r2z = P[i, 2] - B[s, 2]
            n1 = sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
            n2 = sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
            cx = r1y * r2z - r1z * r2y
            cy = r1z * r2x - r1x * r2z
            cz = r1x * r2y - r1y * r2x
            cr2 = cx * cx + cy * cy + cz * cz
            dot = r1x * r2x + r1y * r2y + r1z * r2z
            nn = n1 * n2
            if cr2 > 0.0 and nn > 0.0:
                if dot < 0.0:
                    q = cr2 / (nn - dot)
                else:
                    q = nn + dot
                fac = MU0_4PI * I[s] * (n1 + n2) / (nn * q)
                if isfinite(fac):
                    bx = bx + fac * cx
                    by = by + fac * cy
                    bz = bz + fac * cz
        out[i, 0] = bx
        out[i, 1] = by
        out[i, 2] = bz
    return out_arr
