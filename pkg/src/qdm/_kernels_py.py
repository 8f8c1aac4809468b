"""Pure numpy kernels, used when the compiled extension is unavailable.

Both kernels are deterministic per pixel (or per evaluation point): a result
depends only on that pixel's inputs, never on how pixels are grouped into
chunks or threads.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

NAME = "python"

MU0_4PI = 1e-7

STATUS_COST = 0
STATUS_STEP = 1
STATUS_MAXITER = 2
STATUS_STALLED = 3
STATUS_INVALID = 4

LAMBDA_MAX = 1e16
LAMBDA_MIN = 1e-16

_CHUNK = 128


def model_jacobian(freqs, p, offsets):
    """Multiplet model and its Jacobian.

    Parameters
    ----------
    freqs : ndarray, shape (F,)
    p : ndarray, shape (n, P)
        ``[baseline, center_0, fwhm_0, contrast_0, center_1, ...]``.
    offsets : ndarray, shape (L,)
        Line offsets from each group center; every group shares its width
        and contrast across these lines.

    Returns
    -------
    model : ndarray, shape (n, F)
    jac : ndarray, shape (n, F, P)
    """
    p = np.atleast_2d(p)
    n, P = p.shape
    b = p[:, 0]
    f0 = p[:, 1::3]
    w = 0.5 * p[:, 2::3]
    c = p[:, 3::3]
    w2 = (w * w)[:, :, None, None]
    u = freqs[None, None, None, :] - (f0[:, :, None] + offsets[None, None, :])[..., None]
    inv = 1.0 / (u * u + w2)
    lor = w2 * inv
    S = lor.sum(axis=2)                                             # (n, G, F)
    dS0 = (2.0 * u * w2 * inv * inv).sum(axis=2)
    dSw = (w[:, :, None, None] * u * u * inv * inv).sum(axis=2)
    dip = np.einsum("ng,ngf->nf", c, S)
    model = b[:, None] * (1.0 - dip)
    jac = np.empty((n, freqs.size, P))
    jac[:, :, 0] = 1.0 - dip
    bc = (b[:, None] * c)[:, :, None]
    jac[:, :, 1::3] = np.swapaxes(-bc * dS0, 1, 2)
    jac[:, :, 2::3] = np.swapaxes(-bc * dSw, 1, 2)
    jac[:, :, 3::3] = np.swapaxes(-b[:, None, None] * S, 1, 2)
    return model, jac


def model_only(freqs, p, offsets):
    p = np.atleast_2d(p)
    b = p[:, 0]
    f0 = p[:, 1::3]
    w2 = (0.25 * p[:, 2::3] ** 2)[:, :, None, None]
    c = p[:, 3::3]
    u = freqs[None, None, None, :] - (f0[:, :, None] + offsets[None, None, :])[..., None]
    S = (w2 / (u * u + w2)).sum(axis=2)
    return b[:, None] * (1.0 - np.einsum("ng,ngf->nf", c, S))


def _solve(M, g):
    try:
        return np.linalg.solve(M, g[..., None])[..., 0], np.ones(len(M), dtype=bool)
    except np.linalg.LinAlgError:
        out = np.zeros_like(g)
        ok = np.ones(len(M), dtype=bool)
        for i in range(len(M)):
            try:
                out[i] = np.linalg.solve(M[i], g[i])
            except np.linalg.LinAlgError:
                ok[i] = False
        return out, ok


def _fit_chunk(y, freqs, p0, scales, offsets, max_iter, cost_tol, param_tol, lam0,
               up, down, history):
    n, P = p0.shape
    p = p0.copy()
    cost = np.full(n, np.nan)
    iters = np.zeros(n, dtype=np.int32)
    status = np.full(n, -1, dtype=np.int8)
    lam = np.full(n, lam0)

    valid = np.all(np.isfinite(y), axis=1) & np.all(np.isfinite(p0), axis=1) & (p0[:, 0] > 0)
    status[~valid] = STATUS_INVALID
    p[~valid] = np.nan
    active = np.flatnonzero(valid)
    if active.size == 0:
        return p, cost, iters, status

    A = np.empty((n, P, P))
    g = np.empty((n, P))

    def refresh(idx):
        m, J = model_jacobian(freqs, p[idx], offsets)
        r = y[idx] - m
        cost[idx] = np.einsum("nf,nf->n", r, r)
        A[idx] = np.einsum("nfi,nfj->nij", J, J)
        g[idx] = np.einsum("nfi,nf->ni", J, r)

    refresh(active)
    if history is not None:
        history[active, 0] = cost[active]

    for it in range(max_iter):
        if active.size == 0:
            break
        Aa = A[active]
        diag = np.diagonal(Aa, axis1=1, axis2=2)
        dmax = diag.max(axis=1, keepdims=True)
        d = np.maximum(diag, 1e-15 * dmax)
        M = Aa + (lam[active][:, None] * d)[:, :, None] * np.eye(P)
        delta, ok = _solve(M, g[active])
        p_try = p[active] + delta
        m_try = model_only(freqs, p_try, offsets)
        r_try = y[active] - m_try
        c_try = np.einsum("nf,nf->n", r_try, r_try)
        iters[active] += 1
        step = np.max(np.abs(delta) / scales[active], axis=1)
        c_old = cost[active]
        accept = ok & np.isfinite(c_try) & (c_try <= c_old)

        done = np.zeros(active.size, dtype=bool)
        acc = active[accept]
        if acc.size:
            rel = (c_old[accept] - c_try[accept]) / np.maximum(c_old[accept], 1e-300)
            p[acc] = p_try[accept]
            cost[acc] = c_try[accept]
            lam[acc] = np.maximum(lam[acc] * down, LAMBDA_MIN)
            conv_cost = (rel < cost_tol) | (c_try[accept] == 0.0)
            conv_step = ~conv_cost & (step[accept] < param_tol)
            status[acc[conv_cost]] = STATUS_COST
            status[acc[conv_step]] = STATUS_STEP
            done[accept] = conv_cost | conv_step
        rej_mask = ~accept
        rej = active[rej_mask]
        if rej.size:
            lam[rej] = lam[rej] * up
            small = ok[rej_mask] & (step[rej_mask] < param_tol)
            stalled = ~small & (lam[rej] > LAMBDA_MAX)
            status[rej[small]] = STATUS_STEP
            status[rej[stalled]] = STATUS_STALLED
            done[rej_mask] = small | stalled
        if history is not None:
            history[active, it + 1] = cost[active]
        keep = active[~done]
        refresh_idx = keep[np.isin(keep, acc)]
        if refresh_idx.size:
            refresh(refresh_idx)
        active = keep

    status[active] = STATUS_MAXITER
    return p, cost, iters, status


def lm_fit(spectra, freqs, p0, scales, offsets, max_iter=200, cost_tol=1e-10,
           param_tol=1e-8, lam0=1e-3, up=10.0, down=0.1, workers=1, history=None):
    """Levenberg-Marquardt fit of every spectrum (row) independently.

    Returns
    -------
    p : ndarray, shape (n, P)
    cost : ndarray, shape (n,)
        Sum of squared residuals at ``p``.
    iters : ndarray of int32
    status : ndarray of int8
        0 relative cost change below tolerance, 1 step below tolerance,
        2 iteration limit, 3 damping overflow, 4 invalid input.
    """
    spectra = np.ascontiguousarray(spectra, dtype=np.float64)
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    p0 = np.ascontiguousarray(p0, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    n, P = p0.shape
    p = np.empty((n, P))
    cost = np.empty(n)
    iters = np.empty(n, dtype=np.int32)
    status = np.empty(n, dtype=np.int8)
    if history is not None:
        history[:] = np.nan

    def run(sl):
        h = None if history is None else history[sl]
        out = _fit_chunk(spectra[sl], freqs, p0[sl], scales[sl], offsets, max_iter,
                         cost_tol, param_tol, lam0, up, down, h)
        if h is not None:
            history[sl] = h
        p[sl], cost[sl], iters[sl], status[sl] = out

    chunks = [slice(i, min(i + _CHUNK, n)) for i in range(0, n, _CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, chunks))
    else:
        for sl in chunks:
            run(sl)
    return p, cost, iters, status


def biot_savart(points, seg_start, seg_end, currents, workers=1):
    """Magnetic field (T) of straight line-current segments at points (m).

    Uses the closed form for a finite segment,
    ``B = mu0 I / 4 pi * (r1 x r2) (|r1| + |r2|) / (|r1||r2| (|r1||r2| + r1.r2))``,
    with the denominator rearranged to avoid cancellation beside long
    segments.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    seg_start = np.asarray(seg_start, dtype=np.float64).reshape(-1, 3)
    seg_end = np.asarray(seg_end, dtype=np.float64).reshape(-1, 3)
    currents = np.asarray(currents, dtype=np.float64).reshape(-1)
    out = np.zeros_like(points)

    def run(sl):
        P = points[sl]
        acc = np.zeros_like(P)
        for a, b, current in zip(seg_start, seg_end, currents):
            if current == 0.0:
                continue
            r1 = P - a
            r2 = P - b
            n1 = np.sqrt(np.einsum("ij,ij->i", r1, r1))
            n2 = np.sqrt(np.einsum("ij,ij->i", r2, r2))
            cr = np.cross(r1, r2)
            cr2 = np.einsum("ij,ij->i", cr, cr)
            dot = np.einsum("ij,ij->i", r1, r2)
            nn = n1 * n2
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(dot < 0, cr2 / (nn - dot), nn + dot)
                fac = MU0_4PI * current * (n1 + n2) / (nn * q)
            fac = np.where((cr2 > 0) & (nn > 0) & np.isfinite(fac), fac, 0.0)
            acc += fac[:, None] * cr
        out[sl] = acc

    step = 8192
    chunks = [slice(i, min(i + step, len(points))) for i in range(0, len(points), step)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, chunks))
    else:
        for sl in chunks:
            run(sl)
    return out
