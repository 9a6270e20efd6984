"""Sampled pseudotrajectories, their defect, and the two counterexample constructions."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .flow import OutOfDomain
from .glued import P, Q, TRANSIT, ChartPoint, GluedFlow, GluedHeteroclinicSystem, evolve_glued

__all__ = [
    "SampledPseudotrajectory",
    "DefectEstimate",
    "ChartRadiusError",
    "pseudo_eval",
    "pseudo_from_orbit",
    "pseudo_defect",
    "pseudo_glued",
    "pseudo_jump",
    "REFINE",
]

REFINE = 8
_NODE_TOL = 1e-12


class ChartRadiusError(ValueError):
    pass


@dataclass
class SampledPseudotrajectory:
    """g(t) = phi(t - t_i, x_i) on [t_i, t_{i+1}); nodes re-anchor the flow."""

    t0: float
    dt: float
    nodes: list
    flow: Any = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.dt <= 0.5):
            raise ValueError("dt must lie in (0, 0.5]")
        if len(self.nodes) < 2:
            raise ValueError("need at least two nodes")
        self._probe_cache: dict = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.nodes))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.nodes) - 1)

    @property
    def window(self) -> tuple[float, float]:
        return (self.t0, self.t_end)

    def node_index(self, t: float) -> int:
        k = int(math.floor((t - self.t0) / self.dt + 1e-9))
        return min(max(k, 0), len(self.nodes) - 1)

    def probe_times(self, refine: int = REFINE, window=None) -> np.ndarray:
        lo, hi = self.window if window is None else window
        step = self.dt / refine
        k0 = int(math.ceil((lo - self.t0) / step - 1e-9))
        k1 = int(math.floor((hi - self.t0) / step + 1e-9))
        return self.t0 + step * np.arange(k0, k1 + 1)

    def probe(self, times) -> np.ndarray:
        """Embedded values of g at the given times (vectorized per segment)."""
        times = np.asarray(times, dtype=float)
        key = (times.tobytes(),)
        hit = self._probe_cache.get(key)
        if hit is not None:
            return hit
        if times.size and (times.min() < self.t0 - _NODE_TOL or times.max() > self.t_end + _NODE_TOL):
            raise ValueError("probe time outside the pseudotrajectory window")
        seg = np.minimum(np.floor((times - self.t0) / self.dt + 1e-9).astype(int), len(self.nodes) - 1)
        seg = np.maximum(seg, 0)
        out = np.empty(times.shape + (self.flow.dim,))
        for i in np.unique(seg):
            mask = seg == i
            out[mask] = self.flow.orbit(self.nodes[i], times[mask] - (self.t0 + i * self.dt))
        if len(self._probe_cache) < 8:
            self._probe_cache[key] = out
        return out

    def to_json(self) -> dict:
        return {"t0": self.t0, "dt": self.dt, "nodes": [_node_json(x) for x in self.nodes]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n = self.flow.dim
        w.writerow(["t"] + [f"x{k}" for k in range(n)])
        for t, x in zip(self.times, self.nodes):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in self.flow.embed(x)])
        return buf.getvalue()

    @classmethod
    def from_json(cls, obj, flow) -> "SampledPseudotrajectory":
        if isinstance(obj, str):
            obj = json.loads(obj)
        nodes = [ChartPoint.from_json(x) if isinstance(x, dict) else np.asarray(x, dtype=float) for x in obj["nodes"]]
        return cls(float(obj["t0"]), float(obj["dt"]), nodes, flow)


def _node_json(x):
    return x.to_json() if isinstance(x, ChartPoint) else np.asarray(x, dtype=float).tolist()


def pseudo_eval(g: SampledPseudotrajectory, t: float):
    if t < g.t0 - _NODE_TOL or t > g.t_end + _NODE_TOL:
        raise ValueError(f"t={t} outside the window [{g.t0}, {g.t_end}]")
    k = int(round((t - g.t0) / g.dt))
    if 0 <= k < len(g.nodes) and g.t0 + k * g.dt == t:
        return g.nodes[k]
    i = g.node_index(t)
    return g.flow.evolve(t - (g.t0 + i * g.dt), g.nodes[i])


def pseudo_from_orbit(flow, x0, window: tuple[float, float], dt: float, noise: float = 0.0, seed=None):
    """Nodes phi(t_i, x0) on a grid through ``window`` plus uniform noise per coordinate."""
    if not (0 < dt <= 0.5):
        raise ValueError("dt must lie in (0, 0.5]")
    lo, hi = window
    m = int(round((hi - lo) / dt))
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(m + 1):
        x = flow.evolve(lo + i * dt, x0)
        if noise:
            if isinstance(x, ChartPoint):
                raise TypeError("noise is only supported for array-valued flows")
            x = x + rng.uniform(-noise, noise, size=np.shape(x))
        nodes.append(x)
    return SampledPseudotrajectory(lo, dt, nodes, flow)


class DefectEstimate(NamedTuple):
    d_hat: float
    resolution: float


def pseudo_defect(flow, g: SampledPseudotrajectory, refine: int = REFINE) -> DefectEstimate:
    """Grid supremum of |g(s + t) - phi(t, g(s))| over |t| < 1 and s in the window.

    The grid step is ``g.dt / refine`` in both s and t.  Raises OutOfDomain when a
    probe orbit leaves the domain.
    """
    if g.t_end - g.t0 < 1:
        raise ValueError("window must have length at least 1")
    step = g.dt / refine
    times = g.probe_times(refine)
    G = g.probe(times)
    kmax = int(math.ceil(1.0 / step)) - 1
    offsets = step * np.arange(-kmax, kmax + 1)
    worst = 0.0
    for j, s in enumerate(times):
        lo = max(0, j - kmax)
        hi = min(len(times) - 1, j + kmax)
        offs = offsets[(lo - j) + kmax : (hi - j) + kmax + 1]
        x = pseudo_eval(g, s)
        traj = flow.orbit(x, offs)
        if np.isnan(traj).any():
            bad = offs[np.isnan(traj).any(axis=-1)][0]
            raise OutOfDomain(f"probe orbit from t={s:.6g} leaves the domain at offset {bad:.6g}", float(bad))
        gap = np.linalg.norm(traj - G[lo : hi + 1], axis=-1).max()
        worst = max(worst, float(gap))
    return DefectEstimate(worst, step)


# -- counterexample constructions -----------------------------------------


def _grid_steps(length: float, dt: float, what: str) -> int:
    k = int(round(length / dt))
    if abs(k * dt - length) > 1e-9 * max(1.0, length):
        raise ValueError(f"{what} = {length} is not a multiple of dt = {dt}")
    return k


def pseudo_glued(sys: GluedHeteroclinicSystem, d: float, frame=None, *, t_back=None, t_fwd=None, dt=None):
    """Three-piece pseudotrajectory with jumps d*e_q at t = 0 and d*e_p at t = tau.

    The last branch is anchored as phi(t - tau, a_p + d e_p) so that g(tau) = a_p + d e_p.
    """
    from .hetero import default_frame

    if d < 0:
        raise ValueError("d must be nonnegative")
    frame = default_frame(sys) if frame is None else frame
    t_back = float(sys.meta.get("t_back", 4.0) if t_back is None else t_back)
    t_fwd = float(sys.meta.get("t_fwd", 4.0) if t_fwd is None else t_fwd)
    dt = float(sys.meta.get("dt", 0.25) if dt is None else dt)
    nb = _grid_steps(t_back, dt, "t_back")
    nt = _grid_steps(sys.tau, dt, "tau")
    nf = _grid_steps(t_fwd, dt, "t_fwd")

    start_q = sys.a_q + d * frame.e_q
    start_p = sys.a_p + d * frame.e_p
    margin = float(sys.meta.get("L_max", 5.0)) * float(sys.meta.get("C1", 1.0)) * d
    # orbit norms are convex in t, so the window endpoints bound the whole branch
    far_q = sys.q_field.propagate(-t_back, start_q)
    far_p = sys.p_field.propagate(t_fwd, start_p)
    for label, pt, rad in (
        ("backward branch start", far_q, sys.q_radius),
        ("backward branch end", start_q, sys.q_radius),
        ("forward branch start", start_p, sys.p_radius),
        ("forward branch end", far_p, sys.p_radius),
    ):
        if np.linalg.norm(pt) + margin > rad:
            raise ChartRadiusError(
                f"{label}: |x| + margin = {np.linalg.norm(pt) + margin:.4g} exceeds chart radius {rad}"
            )

    nodes = []
    for i in range(nb + nt + nf + 1):
        k = i - nb
        t = k * dt
        if k < 0:
            nodes.append(ChartPoint(Q, sys.q_field.propagate(t, start_q)))
        elif k < nt:
            nodes.append(ChartPoint(TRANSIT, sys.a_q.copy(), t))
        else:
            nodes.append(ChartPoint(P, sys.p_field.propagate(t - sys.tau, start_p)))
    g = SampledPseudotrajectory(-nb * dt, dt, nodes, GluedFlow(sys))
    g.meta.update({"kind": "glued", "d": d, "t_back": t_back, "t_fwd": t_fwd})
    return g


def pseudo_jump(
    sys2: GluedHeteroclinicSystem,
    r,
    alpha,
    tau0: float,
    tau1: float,
    dt: float = 0.25,
    *,
    t_back: float | None = None,
    t_fwd: float = 0.0,
):
    """phi(t, r) for t < tau0 and phi(t - tau0 - tau1, alpha) from tau0 on.

    ``r`` and ``alpha`` are P-chart points: r on the connecting orbit, alpha on the
    local unstable manifold of p.  The node at tau0 carries the second branch.
    """
    r = np.asarray(r, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(np.abs(alpha[sys2.p_stable_idx]) > 1e-12):
        raise ValueError("alpha must lie on the local unstable manifold of p")
    if np.any(np.abs(r[sys2.p_unstable_idx]) > 1e-12):
        raise ValueError("r must lie on the local stable manifold of p")
    if t_back is None:
        t_back = 2.0 * (tau0 + tau1)
    nb = _grid_steps(t_back, dt, "t_back")
    n0 = _grid_steps(tau0, dt, "tau0")
    n1 = _grid_steps(tau1, dt, "tau1")
    nf = _grid_steps(t_fwd, dt, "t_fwd")
    r_cp = ChartPoint(P, r)
    a_cp = ChartPoint(P, alpha)
    nodes = []
    for i in range(nb + n0 + n1 + nf + 1):
        k = i - nb
        t = k * dt
        try:
            if k < n0:
                nodes.append(evolve_glued(sys2, t, r_cp))
            else:
                nodes.append(evolve_glued(sys2, t - tau0 - tau1, a_cp))
        except OutOfDomain as exc:
            raise ChartRadiusError(f"node at t={t} leaves the charts: {exc}") from exc
    g = SampledPseudotrajectory(-nb * dt, dt, nodes, GluedFlow(sys2))
    g.meta.update({"kind": "jump", "tau0": tau0, "tau1": tau1, "r": r.tolist(), "alpha": alpha.tolist()})
    return g
