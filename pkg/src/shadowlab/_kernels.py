"""Compiled residual kernels for block-linear and glued flows."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .flow import BlockLinearField, Real1D


def block_table(field: BlockLinearField) -> np.ndarray:
    """Rows (kind, a, b, offset); kind 0 is a real block with rate a, 1 a spiral."""
    rows = []
    for k, b in zip(field.offsets, field.blocks):
        if isinstance(b, Real1D):
            rows.append((0.0, b.rate, 0.0, float(k)))
        else:
            rows.append((1.0, b.a, b.b, float(k)))
    return np.array(rows, dtype=float).reshape(-1, 4)


# Work rows used by the glued kernels; each row has length n.
_Y, _KY, _XQ, _XP, _BUF, _W, _EMB = range(7)
# Rows of the reference-vector matrix V.
_AQ, _AP, _CP, _UHAT = range(4)


@njit(cache=True)
def _propagate(tbl, t, W, src, dst):
    """W[dst] = exp(tA) W[src] for the block field ``tbl``."""
    for k in range(tbl.shape[0]):
        o = int(tbl[k, 3])
        g = math.exp(tbl[k, 1] * t)
        if tbl[k, 0] == 0.0:
            W[dst, o] = W[src, o] * g
        else:
            c = math.cos(tbl[k, 2] * t)
            s = math.sin(tbl[k, 2] * t)
            x1 = W[src, o]
            x2 = W[src, o + 1]
            W[dst, o] = g * (c * x1 - s * x2)
            W[dst, o + 1] = g * (s * x1 + c * x2)


@njit(cache=True)
def repar_values(t0, dt, slopes, k0, times):
    """h at ``times`` for slopes on the uniform grid t0 + k dt, with h(t0 + k0 dt) = 0.

    The first and last slopes extend beyond the grid.
    """
    m = slopes.size
    cum = np.empty(m + 1)
    cum[0] = 0.0
    for k in range(m):
        cum[k + 1] = cum[k] + slopes[k] * dt
    base = cum[k0]
    out = np.empty(times.size)
    for j in range(times.size):
        s = (times[j] - t0) / dt
        k = int(math.floor(s + 1e-9))
        if k < 0:
            k = 0
        if k > m - 1:
            k = m - 1
        out[j] = cum[k] - base + slopes[k] * (times[j] - (t0 + k * dt))
    return out


@njit(cache=True)
def _glued_work(y, base, p_only, V, B_q, K, B_p):
    """Work matrix holding y, K y, the Sigma_q point and the Sigma_p point (or ``base``
    as the P chart point when ``p_only``)."""
    n = V.shape[1]
    m = y.size
    W = np.zeros((7, n))
    if p_only:
        for i in range(n):
            W[_XQ, i] = V[_AQ, i]
            W[_XP, i] = base[i]
        return W
    for i in range(m):
        W[_Y, i] = y[i]
        acc = 0.0
        for j in range(m):
            acc += K[i, j] * y[j]
        W[_KY, i] = acc
    for i in range(n):
        aq = V[_AQ, i]
        ap = V[_AP, i]
        for j in range(m):
            aq += B_q[i, j] * W[_Y, j]
            ap += B_p[i, j] * W[_KY, j]
        W[_XQ, i] = aq
        W[_XP, i] = ap
    return W


@njit(cache=True)
def _glued_position(uj, p_only, W, V, B_q, Mp, qt, pt, speed_q, speed_p, tau, rq2, rp2):
    """Embedded position into W[_EMB] at time uj since the Sigma_q crossing (or, with
    ``p_only``, at time uj along the P chart orbit of W[_XP]).  Returns False outside
    the chart balls."""
    n = V.shape[1]
    m = B_q.shape[1]
    if p_only or uj >= tau:
        _propagate(pt, uj if p_only else uj - tau, W, _XP, _BUF)
        r2 = 0.0
        for i in range(n):
            r2 += W[_BUF, i] * W[_BUF, i]
        if not r2 <= rp2 * (1.0 + 1e-12):
            return False
        for i in range(n):
            W[_BUF, i] -= V[_AP, i]
        for i in range(n):
            acc = V[_CP, i]
            for j in range(n):
                acc += Mp[i, j] * W[_BUF, j]
            W[_EMB, i] = acc
    elif uj < 0.0:
        _propagate(qt, uj, W, _XQ, _EMB)
        r2 = 0.0
        for i in range(n):
            r2 += W[_EMB, i] * W[_EMB, i]
        if not r2 <= rq2 * (1.0 + 1e-12):
            return False
    else:
        ell = speed_q * uj + (speed_p - speed_q) * uj * uj / (2.0 * tau)
        lam = uj / tau
        for i in range(m):
            W[_W, i] = (1.0 - lam) * W[_Y, i] + lam * W[_KY, i]
        for i in range(n):
            acc = V[_AQ, i] + ell * V[_UHAT, i]
            for j in range(m):
                acc += B_q[i, j] * W[_W, j]
            W[_EMB, i] = acc
    return True


@njit(cache=True)
def _glued_orbit(u, W, V, B_q, Mp, qt, pt, speed_q, speed_p, tau, rq2, rp2, E):
    """Batched form of _glued_position for the transit orbit in W: E[j] = position at
    u[j].  Returns False as soon as a position leaves the chart balls.  The loop body is
    written out here because per-point helper calls dominate the cost otherwise."""
    n = V.shape[1]
    m = B_q.shape[1]
    for jj in range(u.size):
        uj = u[jj]
        if uj >= tau or uj < 0.0:
            tbl = pt if uj >= tau else qt
            src = _XP if uj >= tau else _XQ
            t = uj - tau if uj >= tau else uj
            for k in range(tbl.shape[0]):
                o = int(tbl[k, 3])
                g = math.exp(tbl[k, 1] * t)
                if tbl[k, 0] == 0.0:
                    E[jj, o] = W[src, o] * g
                else:
                    c = math.cos(tbl[k, 2] * t)
                    s = math.sin(tbl[k, 2] * t)
                    x1 = W[src, o]
                    x2 = W[src, o + 1]
                    E[jj, o] = g * (c * x1 - s * x2)
                    E[jj, o + 1] = g * (s * x1 + c * x2)
            r2 = 0.0
            for i in range(n):
                r2 += E[jj, i] * E[jj, i]
            if not r2 <= (rp2 if uj >= tau else rq2) * (1.0 + 1e-12):
                return False
            if uj >= tau:
                for i in range(n):
                    W[_BUF, i] = E[jj, i] - V[_AP, i]
                for i in range(n):
                    acc = V[_CP, i]
                    for j in range(n):
                        acc += Mp[i, j] * W[_BUF, j]
                    E[jj, i] = acc
        else:
            ell = speed_q * uj + (speed_p - speed_q) * uj * uj / (2.0 * tau)
            lam = uj / tau
            for i in range(m):
                W[_W, i] = (1.0 - lam) * W[_Y, i] + lam * W[_KY, i]
            for i in range(n):
                acc = V[_AQ, i] + ell * V[_UHAT, i]
                for j in range(m):
                    acc += B_q[i, j] * W[_W, j]
                E[jj, i] = acc
    return True


@njit(cache=True)
def glued_residual(y, u, G, qt, pt, V, B_q, K, B_p, Mp, speed_q, speed_p, tau, rq2, rp2, maxval):
    n = V.shape[1]
    W = _glued_work(y, y, False, V, B_q, K, B_p)
    E = np.empty((u.size, n))
    if not _glued_orbit(u, W, V, B_q, Mp, qt, pt, speed_q, speed_p, tau, rq2, rp2, E):
        return maxval
    worst = 0.0
    for jj in range(u.size):
        d2 = 0.0
        for i in range(n):
            diff = E[jj, i] - G[jj, i]
            d2 += diff * diff
        if not d2 <= 1e300:
            return maxval
        if d2 > worst:
            worst = d2
    return math.sqrt(worst)


@njit(cache=True)
def glued_first_fail(y, base, p_only, t_sec, H, G, eps, qt, pt, V, B_q, K, B_p, Mp, speed_q, speed_p, tau, rq2, rp2):
    """Per row h of H (values h(t_j)): some j with |phi(h(t_j)) - G_j| > eps, or -1
    when there is none.

    Chart exit counts as failure.  The orbit is the transit orbit of y shifted by
    t_sec, or the P chart orbit of ``base`` when ``p_only``.
    """
    n = V.shape[1]
    W = _glued_work(y, base, p_only, V, B_q, K, B_p)
    eps2 = eps * eps
    m = H.shape[1]
    out = np.full(H.shape[0], -1, dtype=np.int64)
    # recent failure indices are tried first, then a stride-8 pass, then every index
    n_hint = 16
    hints = np.full(n_hint, -1, dtype=np.int64)
    order = np.empty(n_hint + m + (m + 7) // 8, dtype=np.int64)
    for k in range(H.shape[0]):
        cnt = 0
        for i in range(n_hint):
            if hints[i] >= 0:
                order[cnt] = hints[i]
                cnt += 1
        for jj in range(0, m, 8):
            order[cnt] = jj
            cnt += 1
        for jj in range(m):
            order[cnt] = jj
            cnt += 1
        for q in range(cnt):
            col = order[q]
            ok = _glued_position(H[k, col] - t_sec, p_only, W, V, B_q, Mp, qt, pt, speed_q, speed_p, tau, rq2, rp2)
            failed = not ok
            if ok:
                d2 = 0.0
                for i in range(n):
                    diff = W[_EMB, i] - G[col, i]
                    d2 += diff * diff
                failed = not d2 <= eps2
            if failed:
                out[k] = col
                known = False
                for i in range(n_hint):
                    if hints[i] == col:
                        known = True
                if not known:
                    hints[k % n_hint] = col
                break
    return out


@njit(cache=True)
def linear_residual(p, u, G, tbl, maxval):
    n = p.size
    W = np.empty((2, n))
    W[0] = p
    worst = 0.0
    for jj in range(u.size):
        _propagate(tbl, u[jj], W, 0, 1)
        d2 = 0.0
        for i in range(n):
            diff = W[1, i] - G[jj, i]
            d2 += diff * diff
        if not d2 <= 1e300:
            return maxval
        if d2 > worst:
            worst = d2
    return math.sqrt(worst)


# -- search objectives and compiled Nelder-Mead ---------------------------


@njit(cache=True)
def _point_and_times(z, n_point, class_a, anchor, scale, grid_t0, dt, k0, m, times):
    p = anchor + scale * z[:n_point]
    slopes = np.ones(m)
    if class_a > 0:
        for k in range(m):
            v = z[n_point + k]
            if v < -1.0:
                v = -1.0
            elif v > 1.0:
                v = 1.0
            slopes[k] = 1.0 + class_a * v
    return p, repar_values(grid_t0, dt, slopes, k0, times)


@njit(cache=True)
def glued_objective(z, data):
    n_point, class_a, anchor, scale, grid_t0, dt, k0, m, times, G, args = data
    p, u = _point_and_times(z, n_point, class_a, anchor, scale, grid_t0, dt, k0, m, times)
    return glued_residual(p, u, G, *args)


@njit(cache=True)
def linear_objective(z, data):
    n_point, class_a, anchor, scale, grid_t0, dt, k0, m, times, G, args = data
    p, u = _point_and_times(z, n_point, class_a, anchor, scale, grid_t0, dt, k0, m, times)
    return linear_residual(p, u, G, *args)


@njit(cache=True)
def _clip(x, lo, hi):
    out = x.copy()
    for i in range(x.size):
        if out[i] < lo[i]:
            out[i] = lo[i]
        elif out[i] > hi[i]:
            out[i] = hi[i]
    return out


@njit(cache=True)
def nelder_mead(fn, data, sim0, lo, hi, maxfev, xatol, fatol, adaptive, target=-np.inf):
    """Bounded Nelder-Mead (trial points clipped to the box), same update rules as
    scipy's implementation.  Never evaluates more than ``maxfev`` points and stops once
    the best value is <= ``target``.

    Returns (best point, best value, evaluations used).
    """
    k = sim0.shape[1]
    if adaptive:
        rho, chi, psi, sigma = 1.0, 1.0 + 2.0 / k, 0.75 - 1.0 / (2.0 * k), 1.0 - 1.0 / k
    else:
        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5
    sim = np.empty_like(sim0)
    fsim = np.empty(k + 1)
    nfev = 0
    for j in range(k + 1):
        sim[j] = _clip(sim0[j], lo, hi)
    n_init = min(k + 1, maxfev)
    for j in range(n_init):
        fsim[j] = fn(sim[j], data)
    nfev = n_init
    if n_init < k + 1:
        best = int(np.argmin(fsim[:n_init]))
        return sim[best].copy(), fsim[best], nfev
    order = np.argsort(fsim, kind="mergesort")
    sim = sim[order]
    fsim = fsim[order]
    while nfev < maxfev and fsim[0] > target:
        xspread = 0.0
        fspread = 0.0
        for j in range(1, k + 1):
            fspread = max(fspread, abs(fsim[0] - fsim[j]))
            for i in range(k):
                xspread = max(xspread, abs(sim[j, i] - sim[0, i]))
        if xspread <= xatol and fspread <= fatol:
            break
        xbar = np.zeros(k)
        for j in range(k):
            xbar += sim[j]
        xbar /= k
        xr = _clip((1.0 + rho) * xbar - rho * sim[k], lo, hi)
        fxr = fn(xr, data)
        nfev += 1
        shrink = False
        if fxr < fsim[0]:
            if nfev >= maxfev:
                sim[k], fsim[k] = xr, fxr
            else:
                xe = _clip((1.0 + rho * chi) * xbar - rho * chi * sim[k], lo, hi)
                fxe = fn(xe, data)
                nfev += 1
                if fxe < fxr:
                    sim[k], fsim[k] = xe, fxe
                else:
                    sim[k], fsim[k] = xr, fxr
        elif fxr < fsim[k - 1]:
            sim[k], fsim[k] = xr, fxr
        elif nfev < maxfev:
            if fxr < fsim[k]:
                xc = _clip((1.0 + psi * rho) * xbar - psi * rho * sim[k], lo, hi)
                fxc = fn(xc, data)
                nfev += 1
                if fxc <= fxr:
                    sim[k], fsim[k] = xc, fxc
                else:
                    shrink = True
            else:
                xcc = _clip((1.0 - psi) * xbar + psi * sim[k], lo, hi)
                fxcc = fn(xcc, data)
                nfev += 1
                if fxcc < fsim[k]:
                    sim[k], fsim[k] = xcc, fxcc
                else:
                    shrink = True
            if shrink:
                for j in range(1, k + 1):
                    if nfev >= maxfev:
                        break
                    sim[j] = _clip(sim[0] + sigma * (sim[j] - sim[0]), lo, hi)
                    fsim[j] = fn(sim[j], data)
                    nfev += 1
        order = np.argsort(fsim, kind="mergesort")
        sim = sim[order]
        fsim = fsim[order]
    return sim[0].copy(), fsim[0], nfev
