"""Numerical certificates for the argument and ratio lemmas of expanding linear flows.

For x' = a x (line) or the expanding spiral with rate a and angular rate b, a candidate
(T, d0) is tested by an adversary that builds hypothesis-satisfying configurations
(d < d0, |x0| >= d, h in Rep(L d), |phi(t, x0) - phi(h(t), x1)| < L d on [0, T]) and
maximizes the deviation of x1 from x0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .repar import PiecewiseLinearRepar, rep_min_class

__all__ = [
    "SPIRAL",
    "LINE",
    "CertificationFailed",
    "ViolationRecord",
    "SpiralCertificate",
    "ValidationResult",
    "cert_estimate",
    "cert_validate",
    "cert_search",
    "deviation",
    "check_hypotheses",
]

SPIRAL = "spiral2d"
LINE = "line1d"
MARGIN = 1e-6
H_SEGMENTS = 32
BATCH = 4096
MAX_ESCALATIONS = 8


class CertificationFailed(RuntimeError):
    def __init__(self, message: str, worst: "ViolationRecord | None" = None):
        super().__init__(message)
        self.worst = worst


def _check_params(kind: str, a: float, b: float, eps: float, L: float):
    if kind not in (SPIRAL, LINE):
        raise ValueError(f"kind must be {SPIRAL!r} or {LINE!r}")
    if not a > 0:
        raise ValueError("the lemma needs an expanding rate a > 0")
    if kind == SPIRAL and b == 0:
        raise ValueError("spiral needs b != 0")
    if not eps > 0 or not L > 0:
        raise ValueError("eps and L must be positive")


def cert_estimate(kind: str, a: float, b: float, eps: float, L: float) -> tuple[float, float]:
    """Closed-form candidate: T = ln(8L / min(eps, 1)) / a + 1 and
    d0 = min(eps / (8 (|b| + 1) L T), 0.1); b counts as 0 for the line."""
    _check_params(kind, a, b, eps, L)
    bb = abs(b) if kind == SPIRAL else 0.0
    T = math.log(8.0 * L / min(eps, 1.0)) / a + 1.0
    d0 = min(eps / (8.0 * (bb + 1.0) * L * T), 0.1)
    return T, d0


# -- flows and metrics ----------------------------------------------------


def _flow(kind: str, a: float, b: float, t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    g = np.exp(a * t)
    if kind == LINE:
        return g[..., None] * x
    c, s = np.cos(b * t), np.sin(b * t)
    return np.stack([g * (c * x[..., 0] - s * x[..., 1]), g * (s * x[..., 0] + c * x[..., 1])], axis=-1)


def deviation(kind: str, x0, x1) -> float:
    """Arc distance on the circle between x0/|x0| and x1/|x1| (spiral), or |x1 - x0| / |x0| (line)."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if kind == LINE:
        return float(np.linalg.norm(x1 - x0) / np.linalg.norm(x0))
    cross = x0[0] * x1[1] - x0[1] * x1[0]
    dot = x0 @ x1
    return float(abs(math.atan2(cross, dot)))


def _grid(T: float, d0: float) -> np.ndarray:
    m = max(2, int(math.ceil(T / (d0 / 4.0))) + 1)
    return np.linspace(0.0, T, m)


def check_hypotheses(kind, a, b, L, T, d0, d, x0, x1, h: PiecewiseLinearRepar) -> tuple[bool, float]:
    """Hypotheses of the lemma on the d0/4 grid; returns (ok, residual)."""
    t = _grid(T, d0)
    res = float(np.linalg.norm(_flow(kind, a, b, t, x0) - _flow(kind, a, b, h(t), x1), axis=-1).max())
    ok = (
        0 < d < d0
        and np.linalg.norm(x0) >= d
        and rep_min_class(h) <= L * d + 1e-12
        and res <= L * d * (1.0 - MARGIN)
    )
    return bool(ok), res


# -- compiled adversary ---------------------------------------------------


@njit(cache=True)
def _trial(line, a, b, L, T, t, Et, Ct, St, slopes, seg, x0, dr, d, D, R):
    """One adversarial trial.  x1 = base + rho * delta where base matches x0 at t = T and
    phi(h(T), delta) = L d dr.  By linearity the admissible rho form an interval, cut out
    by one quadratic per grid time; both ends are tried.

    Returns (deviation, residual, x1_0, x1_1); deviation is -1 when nothing is admissible.
    """
    m = t.size
    nseg = slopes.size
    # h on the grid, with g_j = exp(a h_j) and (c_j, s_j) = rotation by b h_j, advanced
    # by a per-segment recurrence
    cum = 0.0
    k = 0
    j = 0
    hT = 0.0
    while j < m:
        kk = int(t[j] / seg)
        if kk > nseg - 1:
            kk = nseg - 1
        while k < kk:
            cum += slopes[k] * seg
            k += 1
        sl = slopes[k]
        hj = cum + sl * (t[j] - k * seg)
        g = math.exp(a * hj)
        c = math.cos(b * hj)
        s = math.sin(b * hj)
        # grid points inside this segment
        jend = j + 1
        while jend < m and min(int(t[jend] / seg), nseg - 1) == k:
            jend += 1
        if jend - j > 1:
            step = sl * (t[j + 1] - t[j])
            gs = math.exp(a * step)
            cs = math.cos(b * step)
            ss = math.sin(b * step)
        else:
            gs, cs, ss = 1.0, 1.0, 0.0
        for q in range(j, jend):
            if line:
                R[q, 0] = g
                R[q, 1] = 0.0
            else:
                R[q, 0] = g * c
                R[q, 1] = g * s
            if q + 1 < jend:
                g *= gs
                c, s = c * cs - s * ss, s * cs + c * ss
        hT = hj + sl * (t[jend - 1] - t[j])
        j = jend
    # base = phi(T - h(T), x0), delta = phi(-h(T), L d dr)
    gb = math.exp(a * (T - hT))
    gd = L * d * math.exp(-a * hT)
    if line:
        base0, base1 = gb * x0[0], 0.0
        del0, del1 = gd * dr[0], 0.0
    else:
        cb, sb = math.cos(b * (T - hT)), math.sin(b * (T - hT))
        base0 = gb * (cb * x0[0] - sb * x0[1])
        base1 = gb * (sb * x0[0] + cb * x0[1])
        cd, sd = math.cos(-b * hT), math.sin(-b * hT)
        del0 = gd * (cd * dr[0] - sd * dr[1])
        del1 = gd * (sd * dr[0] + cd * dr[1])
    c2 = (L * d * (1.0 - 2e-6)) ** 2
    lo = -1e300
    hi = 1e300
    for q in range(m):
        mc = R[q, 0]
        ms = R[q, 1]
        if line:
            p0, p1 = Et[q] * x0[0], 0.0
            r0, r1 = mc * del0, 0.0
            d0_ = mc * base0 - p0
            d1_ = 0.0
        else:
            p0 = Et[q] * (Ct[q] * x0[0] - St[q] * x0[1])
            p1 = Et[q] * (St[q] * x0[0] + Ct[q] * x0[1])
            r0 = mc * del0 - ms * del1
            r1 = ms * del0 + mc * del1
            d0_ = mc * base0 - ms * base1 - p0
            d1_ = ms * base0 + mc * base1 - p1
        D[q, 0] = d0_
        D[q, 1] = d1_
        R[q, 0] = r0
        R[q, 1] = r1
        A = r0 * r0 + r1 * r1
        B = 2.0 * (d0_ * r0 + d1_ * r1)
        C = d0_ * d0_ + d1_ * d1_ - c2
        if A <= 0.0:
            if C > 0.0:
                return -1.0, 0.0, 0.0, 0.0
            continue
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            return -1.0, 0.0, 0.0, 0.0
        sq = math.sqrt(disc)
        r_lo = (-B - sq) / (2.0 * A)
        r_hi = (-B + sq) / (2.0 * A)
        if r_lo > lo:
            lo = r_lo
        if r_hi < hi:
            hi = r_hi
        if lo > hi:
            return -1.0, 0.0, 0.0, 0.0
    best = -1.0
    out_res, out0, out1 = 0.0, 0.0, 0.0
    lim = L * d * (1.0 - 1e-6)
    for rho in (lo, hi):
        x10 = base0 + rho * del0
        x11 = base1 + rho * del1
        if line:
            dv = abs(x10 - x0[0]) / abs(x0[0])
        else:
            dv = abs(math.atan2(x0[0] * x11 - x0[1] * x10, x0[0] * x10 + x0[1] * x11))
        if dv <= best:
            continue
        worst = 0.0
        for q in range(m):
            e0 = D[q, 0] + rho * R[q, 0]
            e1 = D[q, 1] + rho * R[q, 1]
            v = e0 * e0 + e1 * e1
            if v > worst:
                worst = v
        res = math.sqrt(worst)
        if res <= lim:
            best, out_res, out0, out1 = dv, res, x10, x11
    return best, out_res, out0, out1


@njit(cache=True)
def _run_batch(line, a, b, L, T, t, ds, x0s, dirs, slopes, seg):
    n = ds.size
    m = t.size
    Et = np.exp(a * t)
    Ct = np.cos(b * t)
    St = np.sin(b * t)
    D = np.empty((m, 2))
    R = np.empty((m, 2))
    devs = np.full(n, -1.0)
    ress = np.zeros(n)
    x1s = np.zeros((n, 2))
    for k in range(n):
        dv, rs, y0, y1 = _trial(line, a, b, L, T, t, Et, Ct, St, slopes[k], seg, x0s[k], dirs[k], ds[k], D, R)
        devs[k] = dv
        ress[k] = rs
        x1s[k, 0] = y0
        x1s[k, 1] = y1
    return devs, ress, x1s


# -- records --------------------------------------------------------------


@dataclass
class ViolationRecord:
    x0: list
    x1: list
    h: dict
    d: float
    deviation: float
    residual: float
    trial: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ValidationResult:
    passed: bool
    worst: ViolationRecord | None
    admissible: int
    attempted: int
    violations: int


@dataclass
class SpiralCertificate:
    kind: str
    a: float
    b: float
    eps: float
    L: float
    T: float
    d0: float
    trials: int
    worst: float
    seed: int
    escalations: int = 0
    worst_record: ViolationRecord | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in ("kind", "a", "b", "eps", "L", "T", "d0", "trials", "worst", "seed", "escalations")}
        out["worst_record"] = None if self.worst_record is None else self.worst_record.to_json()
        return out


def _sample(kind, rng, n, L, T, d0):
    # d: half near d0, half log-uniform over three decades below it
    near = rng.random(n) < 0.5
    ds = np.where(near, d0 * rng.uniform(0.5, 1.0, n), d0 * np.exp(rng.uniform(math.log(1e-3), 0.0, n)))
    ds = np.minimum(ds, np.nextafter(d0, 0.0))
    # |x0| >= d, exactly d for most trials
    rad = np.where(rng.random(n) < 0.7, ds, ds * np.exp(rng.uniform(0.0, math.log(100.0), n)))
    x0s = np.zeros((n, 2))
    dirs = np.zeros((n, 2))
    if kind == LINE:
        sgn = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        x0s[:, 0] = sgn * rad
        dirs[:, 0] = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    else:
        ang = rng.uniform(0.0, 2 * math.pi, n)
        x0s[:, 0], x0s[:, 1] = rad * np.cos(ang), rad * np.sin(ang)
        # tangential perturbations mostly, random directions otherwise
        tang = rng.random(n) < 0.75
        sgn = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        phi_dir = np.where(tang, ang + sgn * math.pi / 2, rng.uniform(0.0, 2 * math.pi, n))
        dirs[:, 0], dirs[:, 1] = np.cos(phi_dir), np.sin(phi_dir)
    # h: random slopes in [1 - Ld, 1 + Ld] or a constant extreme slope
    a_cls = L * ds
    mode = rng.random(n)
    u = rng.uniform(-1.0, 1.0, (n, H_SEGMENTS))
    u[mode < 0.25] = 1.0
    u[(mode >= 0.25) & (mode < 0.5)] = -1.0
    slopes = 1.0 + a_cls[:, None] * u
    slopes = np.maximum(slopes, 1e-6)
    return ds, x0s, dirs, slopes


def _record(kind, x0, x1, slopes, seg, d, dev, res, trial) -> ViolationRecord:
    bp = seg * np.arange(slopes.size + 1)
    h = PiecewiseLinearRepar(bp, slopes)
    k = 1 if kind == LINE else 2
    return ViolationRecord(list(map(float, x0[:k])), list(map(float, x1[:k])), h.to_json(), float(d), float(dev), float(res), int(trial))


def _refine(kind, a, b, L, T, t, seg, ds, x0s, dirs, slopes, devs, idx, rounds: int = 2):
    """Coordinate refinement of the worst trials: push single slopes to the box ends."""
    line = kind == LINE
    for k in idx:
        d = ds[k]
        cur = slopes[k].copy()
        best = devs[k]
        best_x1, best_res = None, None
        for _ in range(rounds):
            improved = False
            for j in range(cur.size):
                for target in (1.0 - L * d, 1.0 + L * d):
                    if cur[j] == target:
                        continue
                    trial = cur.copy()
                    trial[j] = max(target, 1e-6)
                    dv, rs, x1 = _run_batch(line, a, b, L, T, t, ds[k : k + 1], x0s[k : k + 1], dirs[k : k + 1], trial[None, :], seg)
                    if dv[0] > best:
                        best, cur, best_x1, best_res, improved = dv[0], trial, x1[0], rs[0], True
            if not improved:
                break
        if best_x1 is not None:
            yield k, best, best_res, best_x1, cur


def cert_validate(
    kind: str, a: float, b: float, eps: float, L: float, T: float, d0: float, trials: int = 100_000, seed: int = 0, *, refine: int = 32
) -> ValidationResult:
    """Adversarial validation of (T, d0).  Passes iff every admissible trial has
    deviation < eps.  The returned worst record is the max by (deviation, -trial)."""
    _check_params(kind, a, b, eps, L)
    if not (T > 0 and d0 > 0):
        raise ValueError("T and d0 must be positive")
    rng = np.random.default_rng(seed)
    t = _grid(T, d0)
    seg = T / H_SEGMENTS
    line = kind == LINE
    worst: ViolationRecord | None = None
    admissible = attempted = violations = 0
    start = 0
    while admissible < trials:
        n = min(BATCH, max(64, 2 * (trials - admissible)))
        ds, x0s, dirs, slopes = _sample(kind, rng, n, L, T, d0)
        devs, ress, x1s = _run_batch(line, a, b, L, T, t, ds, x0s, dirs, slopes, seg)
        if refine:
            order = np.argsort(-devs, kind="stable")[: min(refine, n)]
            for k, dv, rs, x1, sl in _refine(kind, a, b, L, T, t, seg, ds, x0s, dirs, slopes, devs, order):
                devs[k], ress[k], x1s[k], slopes[k] = dv, rs, x1, sl
        ok = np.flatnonzero(devs >= 0)
        need = trials - admissible
        ok = ok[:need]
        attempted += int(ok[-1]) + 1 if ok.size and ok.size == need else n
        admissible += ok.size
        violations += int(np.sum(devs[ok] >= eps))
        if ok.size:
            j = ok[np.argmax(devs[ok])]  # argmax keeps the first (lowest trial index) on ties
            if worst is None or devs[j] > worst.deviation:
                worst = _record(kind, x0s[j], x1s[j], slopes[j], seg, ds[j], devs[j], ress[j], start + int(j))
        start += n
        if attempted > 50 * trials + 10 * BATCH:
            break
    return ValidationResult(violations == 0 and admissible >= trials, worst, admissible, attempted, violations)


def cert_search(kind: str, a: float, b: float, eps: float, L: float, trials: int = 100_000, seed: int = 0) -> SpiralCertificate:
    """Validate the closed-form candidate; on failure double T and halve d0 (at most 8 times)."""
    T, d0 = cert_estimate(kind, a, b, eps, L)
    last = None
    for esc in range(MAX_ESCALATIONS + 1):
        res = cert_validate(kind, a, b, eps, L, T, d0, trials, seed)
        last = res
        if res.passed:
            return SpiralCertificate(kind, a, b if kind == SPIRAL else 0.0, eps, L, T, d0, res.admissible, res.worst.deviation, seed, esc, res.worst)
        T, d0 = 2.0 * T, 0.5 * d0
    raise CertificationFailed(f"no certificate after {MAX_ESCALATIONS} escalations", last.worst if last else None)
