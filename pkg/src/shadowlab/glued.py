"""Glued model flow: two linear hyperbolic charts joined by a linear transit map.

Coordinates
-----------
* Q chart: ``(xi, eta)`` with the unstable blocks of q first, then the stable ones.
* P chart: ``(y, z)`` with the stable blocks of p first, then the unstable ones.
* Transit: an orbit that crosses ``Sigma_q`` at ``a_q + B_q y`` spends the time
  ``tau`` in transit and lands on ``Sigma_p`` at ``a_p + B_p K y``.  While in
  transit its section offset is ``E(u) y`` with ``E(u) = (1 - u/tau) I + (u/tau) K``.

All three pieces are placed in one ambient frame (the Q chart frame), so that
distances between points of different charts are continuous along orbits.  The
P chart enters that frame through a rigid motion sending ``a_p`` to the end of
the transit tube and ``v_p`` to the transit direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .flow import BlockLinearField, OutOfDomain, Spiral2D, evolve_block

__all__ = [
    "HyperbolicPointSpec",
    "GluedHeteroclinicSystem",
    "ChartPoint",
    "GluedFlow",
    "evolve_glued",
    "section_basis",
]

Q, TRANSIT, P = "Q", "TRANSIT", "P"

_SECTION_TOL = 1e-12


@dataclass(frozen=True)
class HyperbolicPointSpec:
    stable: BlockLinearField
    unstable: BlockLinearField
    role: str

    def field(self) -> BlockLinearField:
        # chart coordinate order: q lists unstable first, p lists stable first
        if self.role == "Q":
            return BlockLinearField(self.unstable.blocks + self.stable.blocks)
        return BlockLinearField(self.stable.blocks + self.unstable.blocks)

    @property
    def n(self) -> int:
        return self.stable.dim + self.unstable.dim


@dataclass(frozen=True, eq=False)
class ChartPoint:
    """A point of the glued model.

    For ``chart == "TRANSIT"`` the ``coords`` are the Q-chart coordinates of the
    point where the orbit crossed ``Sigma_q`` and ``transit_s`` the time elapsed
    since that crossing.
    """

    chart: str
    coords: np.ndarray
    transit_s: float | None = None

    def __post_init__(self):
        if self.chart not in (Q, TRANSIT, P):
            raise ValueError(f"unknown chart {self.chart!r}")
        if (self.transit_s is not None) != (self.chart == TRANSIT):
            raise ValueError("transit_s must be given exactly for TRANSIT points")
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChartPoint):
            return NotImplemented
        return (
            self.chart == other.chart
            and self.transit_s == other.transit_s
            and np.array_equal(self.coords, other.coords)
        )

    __hash__ = object.__hash__

    def to_json(self) -> dict:
        out = {"chart": self.chart, "coords": self.coords.tolist()}
        if self.transit_s is not None:
            out["transit_s"] = float(self.transit_s)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ChartPoint":
        return cls(obj["chart"], np.asarray(obj["coords"], dtype=float), obj.get("transit_s"))


def section_basis(dim: int, idx: list[int], v: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the hyperplane of span{e_i : i in idx} orthogonal to v.

    Gram-Schmidt over the coordinate vectors, skipping the one most aligned with v,
    so the result is deterministic.
    """
    vhat = v / np.linalg.norm(v)
    drop = max(idx, key=lambda i: (abs(vhat[i]), -i))
    basis = [vhat]
    for i in idx:
        if i == drop:
            continue
        e = np.zeros(dim)
        e[i] = 1.0
        for b in basis:
            e = e - (b @ e) * b
        basis.append(e / np.linalg.norm(e))
    return np.array(basis[1:]).T.reshape(dim, len(idx) - 1)


def _coord_basis(dim: int, idx: list[int]) -> np.ndarray:
    out = np.zeros((dim, len(idx)))
    for col, i in enumerate(idx):
        out[i, col] = 1.0
    return out


@dataclass
class GluedHeteroclinicSystem:
    """Validated glued model; construct through :func:`shadowlab.hetero.build_glued_system`."""

    p_spec: HyperbolicPointSpec
    q_spec: HyperbolicPointSpec
    K: np.ndarray
    tau: float
    a_q: np.ndarray
    a_p: np.ndarray
    q_radius: float = 1.0
    p_radius: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.a_q = np.asarray(self.a_q, dtype=float)
        self.a_p = np.asarray(self.a_p, dtype=float)
        self.q_field = self.q_spec.field()
        self.p_field = self.p_spec.field()
        n = self.n
        self.q_unstable_idx = list(range(self.q_spec.unstable.dim))
        self.q_stable_idx = list(range(self.q_spec.unstable.dim, n))
        self.p_stable_idx = list(range(self.p_spec.stable.dim))
        self.p_unstable_idx = list(range(self.p_spec.stable.dim, n))
        self.A_q = self.q_field.matrix()
        self.A_p = self.p_field.matrix()
        self.v_q = self.A_q @ self.a_q
        self.v_p = self.A_p @ self.a_p
        # Sigma~_q (v_q-orthogonal hyperplane of U_q) then S_q; likewise on the p side
        self.sig_q = section_basis(n, self.q_unstable_idx, self.v_q) if np.any(self.v_q) else np.zeros((n, 0))
        self.sig_p = section_basis(n, self.p_stable_idx, self.v_p) if np.any(self.v_p) else np.zeros((n, 0))
        self.B_q = np.hstack([self.sig_q, _coord_basis(n, self.q_stable_idx)])
        self.B_p = np.hstack([self.sig_p, _coord_basis(n, self.p_unstable_idx)])
        self.speed_q = float(np.linalg.norm(self.v_q))
        self.speed_p = float(np.linalg.norm(self.v_p))
        self.u_hat = self.v_q / self.speed_q if self.speed_q > 0 else np.zeros(n)
        self.vp_hat = self.v_p / self.speed_p if self.speed_p > 0 else np.zeros(n)
        self.K_inv = np.linalg.inv(self.K) if self.K.size else self.K
        # K as a map of Q-chart tangent vectors on Sigma_q to P-chart vectors on Sigma_p
        self.K_amb = self.B_p @ self.K @ self.B_q.T

    @property
    def n(self) -> int:
        return self.q_spec.n

    @property
    def dim(self) -> int:
        return self.n

    # -- transit geometry -------------------------------------------------

    def interp(self, u) -> np.ndarray:
        """E(u) for scalar or array u (returns (..., n-1, n-1))."""
        u = np.asarray(u, dtype=float)[..., None, None]
        eye = np.eye(self.K.shape[0])
        return (1.0 - u / self.tau) * eye + (u / self.tau) * self.K

    def transit_length(self, u):
        u = np.asarray(u, dtype=float)
        return self.speed_q * u + (self.speed_p - self.speed_q) * u * u / (2.0 * self.tau)

    def section_coords_q(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.a_q) @ self.B_q

    def section_coords_p(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x) - self.a_p) @ self.B_p) @ self.K_inv.T

    def sigma_q_point(self, y: np.ndarray) -> np.ndarray:
        return self.a_q + np.asarray(y) @ self.B_q.T

    def sigma_p_point(self, y: np.ndarray) -> np.ndarray:
        return self.a_p + (np.asarray(y) @ self.K.T) @ self.B_p.T

    # -- ambient embedding ------------------------------------------------

    def embed_q(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def embed_transit(self, y, u) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        ey = (1.0 - u / self.tau)[..., None] * y + (u / self.tau)[..., None] * (y @ self.K.T)
        return self.a_q + self.transit_length(u)[..., None] * self.u_hat + ey @ self.B_q.T

    def embed_p(self, x) -> np.ndarray:
        dx = np.asarray(x, dtype=float) - self.a_p
        along = dx @ self.vp_hat
        return (
            self.a_q
            + self.transit_length(self.tau) * self.u_hat
            + along[..., None] * self.u_hat
            + (dx @ self.B_p) @ self.B_q.T
        )

    def embed(self, cp: ChartPoint) -> np.ndarray:
        if cp.chart == Q:
            return self.embed_q(cp.coords)
        if cp.chart == P:
            return self.embed_p(cp.coords)
        return self.embed_transit(self.section_coords_q(cp.coords), np.asarray(cp.transit_s))

    # -- domain tests -----------------------------------------------------

    def q_side(self, x) -> np.ndarray:
        """<x - a_q, v_q>; nonpositive on the Q side of Sigma_q."""
        return (np.asarray(x) - self.a_q) @ self.v_q

    def p_side(self, x) -> np.ndarray:
        """<x - a_p, v_p>; nonnegative on the P side of Sigma_p."""
        return (np.asarray(x) - self.a_p) @ self.v_p

    def in_q_domain(self, x) -> bool:
        scale = _SECTION_TOL * max(1.0, self.speed_q)
        return bool(np.linalg.norm(x) <= self.q_radius and self.q_side(x) <= scale)

    def in_p_domain(self, x) -> bool:
        scale = _SECTION_TOL * max(1.0, self.speed_p)
        return bool(np.linalg.norm(x) <= self.p_radius and self.p_side(x) >= -scale)


# -- linear-flow exit and crossing times -----------------------------------


def exit_time(field: BlockLinearField, x: np.ndarray, radius: float, direction: float) -> float:
    """First time (in the given direction, returned with sign) the orbit leaves the ball.

    |phi(t, x)|^2 is a sum of exponentials, hence convex in t, so the set of
    in-ball times is an interval.
    """
    w, r = field.norm_sq_coeffs(x)
    r = direction * r
    n0 = float(w.sum())
    r2 = radius * radius
    if n0 > r2 * (1 + 1e-12):
        return 0.0
    if not np.any((w > 0) & (r > 0)):
        return direction * math.inf

    def excess(s):
        return float(np.sum(w * np.exp(2 * r * s))) - r2

    hi = 1.0
    while excess(hi) <= 0:
        hi *= 2.0
        if hi > 1e6:
            return direction * math.inf
    lo = 0.0
    if excess(lo) >= 0:
        return 0.0
    return direction * brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15)


def _scan_root(fn, t_end: float, step: float):
    """First sign change of fn from <0 to >=0 on [0, t_end] (t_end may be negative)."""
    if t_end == 0:
        return None
    sgn = 1.0 if t_end > 0 else -1.0
    span = abs(t_end)
    m = max(2, int(math.ceil(span / step)) + 1)
    grid = sgn * np.linspace(0.0, span, m)
    vals = fn(grid)
    hits = np.flatnonzero(vals >= 0)
    if hits.size == 0:
        return None
    k = int(hits[0])
    if k == 0:
        return 0.0
    a, b = grid[k - 1], grid[k]
    return float(brentq(lambda s: float(fn(np.array([s]))[0]), min(a, b), max(a, b), xtol=1e-15, rtol=1e-15))


def _scan_step(field: BlockLinearField) -> float:
    fast = max([abs(b.b) for b in field.blocks if isinstance(b, Spiral2D)] + [abs(r) for r in field.real_parts] + [1.0])
    return min(0.05, 0.25 / fast)


# -- orbit descriptors ----------------------------------------------------


@dataclass
class _Orbit:
    """An orbit of the glued model, parametrized by flow time s (s=0 at the base point)."""

    kind: str  # "transit", "Q" or "P"
    s_lo: float
    s_hi: float
    y: np.ndarray | None = None  # section coordinates (transit orbits)
    t_sec: float = 0.0  # flow time of the Sigma_q crossing
    base: np.ndarray | None = None  # chart coordinates at s=0 (chart-confined orbits)


def _orbit_of(sys: GluedHeteroclinicSystem, cp: ChartPoint) -> _Orbit:
    if cp.chart == TRANSIT:
        if not (0.0 <= cp.transit_s <= sys.tau):
            raise ValueError("transit_s must lie in [0, tau]")
        y = sys.section_coords_q(cp.coords)
        return _transit_orbit(sys, y, -float(cp.transit_s))
    x = cp.coords
    if cp.chart == Q:
        if not sys.in_q_domain(x):
            raise OutOfDomain("point is outside the Q chart", 0.0)
        t_out = exit_time(sys.q_field, x, sys.q_radius, +1.0)
        t_back = exit_time(sys.q_field, x, sys.q_radius, -1.0)
        if abs(sys.q_side(x)) <= _SECTION_TOL * max(1.0, sys.speed_q):
            return _transit_orbit(sys, sys.section_coords_q(x), 0.0)
        horizon = t_out if math.isfinite(t_out) else 0.0
        fn = lambda s: (sys.q_field.propagate(s, x) - sys.a_q) @ sys.v_q
        hit = _scan_root(fn, horizon, _scan_step(sys.q_field)) if horizon > 0 else None
        if hit is None:
            return _Orbit("Q", t_back, t_out, base=x.copy())
        z = sys.q_field.propagate(hit, x)
        orb = _transit_orbit(sys, sys.section_coords_q(z), hit)
        orb.s_lo = t_back
        return orb
    if not sys.in_p_domain(x):
        raise OutOfDomain("point is outside the P chart", 0.0)
    t_out = exit_time(sys.p_field, x, sys.p_radius, +1.0)
    t_back = exit_time(sys.p_field, x, sys.p_radius, -1.0)
    if abs(sys.p_side(x)) <= _SECTION_TOL * max(1.0, sys.speed_p):
        orb = _transit_orbit(sys, sys.section_coords_p(x), -sys.tau)
        orb.s_hi = t_out
        return orb
    horizon = t_back if math.isfinite(t_back) else 0.0
    fn = lambda s: -((sys.p_field.propagate(s, x) - sys.a_p) @ sys.v_p)
    hit = _scan_root(fn, horizon, _scan_step(sys.p_field)) if horizon < 0 else None
    if hit is None:
        return _Orbit("P", t_back, t_out, base=x.copy())
    z = sys.p_field.propagate(hit, x)
    orb = _transit_orbit(sys, sys.section_coords_p(z), hit - sys.tau)
    orb.s_hi = t_out
    return orb


def _transit_orbit(sys: GluedHeteroclinicSystem, y: np.ndarray, t_sec: float) -> _Orbit:
    sq = sys.sigma_q_point(y)
    sp = sys.sigma_p_point(y)
    if np.linalg.norm(sq) <= sys.q_radius:
        lo = t_sec + exit_time(sys.q_field, sq, sys.q_radius, -1.0)
    else:
        lo = t_sec
    if np.linalg.norm(sp) <= sys.p_radius:
        hi = t_sec + sys.tau + exit_time(sys.p_field, sp, sys.p_radius, +1.0)
    else:
        hi = t_sec + sys.tau
    return _Orbit("transit", lo, hi, y=np.asarray(y, dtype=float), t_sec=t_sec)


def section_orbit_positions(sys: GluedHeteroclinicSystem, y, u, valid=None) -> np.ndarray:
    """Embedded positions of the transit orbit(s) through section offset(s) ``y`` at
    times ``u`` since the Sigma_q crossing.  Broadcasts ``y`` (..., n-1) against ``u`` (...).
    Times outside the chart balls give NaN rows.
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(y.shape[:-1], u.shape)
    y = np.broadcast_to(y, shape + y.shape[-1:])
    u = np.broadcast_to(u, shape)
    out = np.empty(shape + (sys.n,))
    back = u < 0
    fwd = u >= sys.tau
    mid = ~(back | fwd)
    if np.any(back):
        pts = sys.q_field.propagate(u[back], sys.sigma_q_point(y[back]))
        bad = np.einsum("...i,...i->...", pts, pts) > sys.q_radius**2 * (1 + 1e-12)
        pts[bad] = np.nan
        out[back] = pts
    if np.any(mid):
        out[mid] = sys.embed_transit(y[mid], u[mid])
    if np.any(fwd):
        pts = sys.p_field.propagate(u[fwd] - sys.tau, sys.sigma_p_point(y[fwd]))
        bad = np.einsum("...i,...i->...", pts, pts) > sys.p_radius**2 * (1 + 1e-12)
        emb = sys.embed_p(pts)
        emb[bad] = np.nan
        out[fwd] = emb
    return out


def _orbit_positions(sys: GluedHeteroclinicSystem, orb: _Orbit, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if orb.kind == "transit":
        out = section_orbit_positions(sys, orb.y, s - orb.t_sec)
    elif orb.kind == "Q":
        out = sys.q_field.propagate(s, orb.base)
    else:
        out = sys.embed_p(sys.p_field.propagate(s, orb.base))
    slack = 1e-12 * (1.0 + np.abs(s))
    outside = (s < orb.s_lo - slack) | (s > orb.s_hi + slack)
    out = np.array(out, dtype=float)
    out[outside] = np.nan
    return out


def evolve_glued(sys: GluedHeteroclinicSystem, t: float, x: ChartPoint) -> ChartPoint:
    """Flow a chart point for time ``t``; raises :class:`OutOfDomain` on chart exit."""
    orb = _orbit_of(sys, x)
    t = float(t)
    slack = 1e-12 * (1.0 + abs(t))
    if t < orb.s_lo - slack or t > orb.s_hi + slack:
        exit_at = orb.s_lo if t < orb.s_lo else orb.s_hi
        raise OutOfDomain(f"trajectory leaves the charts at flow time {exit_at:.6g}", exit_at)
    if orb.kind == "Q":
        return ChartPoint(Q, evolve_block(sys.q_field, t, orb.base))
    if orb.kind == "P":
        return ChartPoint(P, evolve_block(sys.p_field, t, orb.base))
    u = t - orb.t_sec
    if u < 0:
        if x.chart == Q:
            return ChartPoint(Q, evolve_block(sys.q_field, t, x.coords))
        return ChartPoint(Q, evolve_block(sys.q_field, u, sys.sigma_q_point(orb.y)))
    if u < sys.tau:
        return ChartPoint(TRANSIT, sys.sigma_q_point(orb.y), u)
    if x.chart == P:
        return ChartPoint(P, evolve_block(sys.p_field, t, x.coords))
    return ChartPoint(P, evolve_block(sys.p_field, u - sys.tau, sys.sigma_p_point(orb.y)))


class GluedFlow:
    """Flow adapter over a glued system; states are :class:`ChartPoint`."""

    def __init__(self, sys: GluedHeteroclinicSystem):
        self.sys = sys
        self.dim = sys.n

    def evolve(self, t: float, x: ChartPoint) -> ChartPoint:
        return evolve_glued(self.sys, t, x)

    def embed(self, x: ChartPoint) -> np.ndarray:
        return self.sys.embed(x)

    def orbit(self, x: ChartPoint, times) -> np.ndarray:
        try:
            orb = _orbit_of(self.sys, x)
        except OutOfDomain:
            return np.full(np.shape(times) + (self.dim,), np.nan)
        return _orbit_positions(self.sys, orb, np.asarray(times, dtype=float))

    def section_orbit(self, y, u) -> np.ndarray:
        return section_orbit_positions(self.sys, y, u)
