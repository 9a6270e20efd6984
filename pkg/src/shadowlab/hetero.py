"""Glued heteroclinic model systems: construction, projectors, transversality and the
sign obstruction for Lipschitz shadowing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import subspace_angles
from scipy.optimize import brentq

from .flow import BlockLinearField, OutOfDomain, Real1D
from .glued import (
    Q,
    ChartPoint,
    GluedHeteroclinicSystem,
    HyperbolicPointSpec,
    evolve_glued,
    section_orbit_positions,
)
from .repar import PiecewiseLinearRepar, rep_eval

__all__ = [
    "SPECTRAL_GAP",
    "FixtureError",
    "TransversalSystem",
    "NoActiveBlock",
    "UnsupportedFrameCase",
    "ObstructionFrame",
    "ObstructionReport",
    "build_glued_system",
    "system_from_json",
    "system_to_json",
    "load_fixture",
    "fixture_path",
    "projections",
    "poincare",
    "tangent_spaces",
    "transversality",
    "transversality_oracle",
    "select_obstruction_frame",
    "probe_frame",
    "default_frame",
    "obstruction_report",
    "measure_c3",
]

SPECTRAL_GAP = 0.05
RANK_TOL = 1e-10


class FixtureError(ValueError):
    pass


class TransversalSystem(ValueError):
    pass


class NoActiveBlock(ValueError):
    pass


class UnsupportedFrameCase(ValueError):
    pass


# -- construction ---------------------------------------------------------


def _check_point_spec(spec: HyperbolicPointSpec):
    for b in spec.stable.blocks:
        rate = b.rate if isinstance(b, Real1D) else b.a
        if rate > -SPECTRAL_GAP:
            raise FixtureError(f"{spec.role}: stable rate {rate} violates the gap (must be <= -{SPECTRAL_GAP})")
    for b in spec.unstable.blocks:
        rate = b.rate if isinstance(b, Real1D) else b.a
        if rate < SPECTRAL_GAP:
            raise FixtureError(f"{spec.role}: unstable rate {rate} violates the gap (must be >= {SPECTRAL_GAP})")


def build_glued_system(
    p_spec: HyperbolicPointSpec,
    q_spec: HyperbolicPointSpec,
    K,
    tau: float,
    a_q,
    chart_radius=1.0,
    a_p=None,
    meta: dict | None = None,
) -> GluedHeteroclinicSystem:
    """Validate and assemble a glued system.

    ``a_p`` defaults to the point of the first stable coordinate axis of p at the
    distance |a_q| from p.
    """
    _check_point_spec(p_spec)
    _check_point_spec(q_spec)
    n = q_spec.n
    if p_spec.n != n:
        raise FixtureError(f"dimension mismatch: p has {p_spec.n}, q has {q_spec.n}")
    if q_spec.unstable.dim == 0 or p_spec.stable.dim == 0:
        raise FixtureError("q needs an unstable direction and p a stable one")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (n - 1, n - 1):
        raise FixtureError(f"K must be {(n - 1, n - 1)}, got {K.shape}")
    if not tau > 0:
        raise FixtureError("tau must be positive")
    a_q = np.asarray(a_q, dtype=float)
    if a_q.shape != (n,):
        raise FixtureError("a_q has the wrong dimension")
    if np.any(np.abs(a_q[q_spec.unstable.dim :]) > 0):
        raise FixtureError("a_q must lie on the unstable subspace of q")
    if a_p is None:
        a_p = np.zeros(n)
        a_p[0] = np.linalg.norm(a_q)
    a_p = np.asarray(a_p, dtype=float)
    if np.any(np.abs(a_p[p_spec.stable.dim :]) > 0):
        raise FixtureError("a_p must lie on the stable subspace of p")
    if isinstance(chart_radius, (list, tuple)):
        q_rad, p_rad = map(float, chart_radius)
    elif isinstance(chart_radius, dict):
        q_rad, p_rad = float(chart_radius["q"]), float(chart_radius["p"])
    else:
        q_rad = p_rad = float(chart_radius)
    if abs(np.linalg.det(K)) < 1e-12:
        raise FixtureError("K is singular")
    # transit interpolant must stay invertible
    us = np.linspace(0.0, 1.0, 1001)
    eye = np.eye(n - 1)
    dets = [np.linalg.det((1 - u) * eye + u * K) for u in us]
    if n > 1 and (min(dets) <= 0 or min(abs(x) for x in dets) < 1e-9):
        raise FixtureError("transit interpolant E(s) becomes singular on [0, tau]")
    sys = GluedHeteroclinicSystem(p_spec, q_spec, K, float(tau), a_q, a_p, q_rad, p_rad, dict(meta or {}))
    if not np.any(sys.v_q) or not np.any(sys.v_p):
        raise FixtureError("v_q and v_p must be nonzero")
    if np.linalg.norm(a_q) >= q_rad or np.linalg.norm(a_p) >= p_rad:
        raise FixtureError("a_q and a_p must lie inside their chart balls")
    return sys


def _spec_from_json(obj: dict, role: str) -> HyperbolicPointSpec:
    return HyperbolicPointSpec(
        BlockLinearField.from_json(obj.get("stable", [])),
        BlockLinearField.from_json(obj.get("unstable", [])),
        role,
    )


def system_from_json(obj) -> GluedHeteroclinicSystem:
    """Fixture schema: n, p{stable, unstable}, q{...}, a_q, tau, K, chart_radius.

    Optional keys: a_p, name, window{back, fwd}, dt, C1, C3, L_max, expect.
    """
    if isinstance(obj, (str, Path)):
        obj = json.loads(Path(obj).read_text())
    try:
        p_spec = _spec_from_json(obj["p"], "P")
        q_spec = _spec_from_json(obj["q"], "Q")
        n = int(obj["n"])
        if p_spec.n != n or q_spec.n != n:
            raise FixtureError(f"declared n={n} does not match block dimensions")
        meta = {k: obj[k] for k in ("name", "dt", "C1", "C3", "L_max", "expect", "notes") if k in obj}
        if "window" in obj:
            meta["t_back"] = float(obj["window"]["back"])
            meta["t_fwd"] = float(obj["window"]["fwd"])
        if "jump" in obj:
            meta["jump"] = obj["jump"]
        return build_glued_system(
            p_spec,
            q_spec,
            obj["K"],
            float(obj["tau"]),
            obj["a_q"],
            obj.get("chart_radius", 1.0),
            obj.get("a_p"),
            meta,
        )
    except KeyError as exc:
        raise FixtureError(f"missing fixture key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FixtureError):
            raise
        raise FixtureError(str(exc)) from exc


def system_to_json(sys: GluedHeteroclinicSystem) -> dict:
    out = {
        "n": sys.n,
        "p": {"stable": sys.p_spec.stable.to_json(), "unstable": sys.p_spec.unstable.to_json()},
        "q": {"stable": sys.q_spec.stable.to_json(), "unstable": sys.q_spec.unstable.to_json()},
        "a_q": sys.a_q.tolist(),
        "a_p": sys.a_p.tolist(),
        "tau": sys.tau,
        "K": sys.K.tolist(),
        "chart_radius": {"q": sys.q_radius, "p": sys.p_radius},
    }
    meta = dict(sys.meta)
    if "t_back" in meta:
        out["window"] = {"back": meta.pop("t_back"), "fwd": meta.pop("t_fwd")}
    out.update(meta)
    return out


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("shadowlab") / "fixtures" / f"{name}.json"))


def load_fixture(name: str) -> GluedHeteroclinicSystem:
    return system_from_json(fixture_path(name))


# -- projectors and the Poincare map --------------------------------------


def _block_slices(field: BlockLinearField, offset: int) -> list[list[int]]:
    return [list(range(offset + k, offset + k + b.dim)) for k, b in zip(field.offsets, field.blocks)]


def _selector(n: int, idx) -> np.ndarray:
    m = np.zeros((n, n))
    m[idx, idx] = 1.0
    return m


def projections(sys: GluedHeteroclinicSystem) -> dict:
    """Coordinate selectors onto the blocks S_q^(j) (Q chart) and U_p^(i) (P chart)."""
    n = sys.n
    q_blocks = _block_slices(sys.q_spec.stable, sys.q_spec.unstable.dim)
    p_blocks = _block_slices(sys.p_spec.unstable, sys.p_spec.stable.dim)
    Pi_q_j = [_selector(n, b) for b in q_blocks]
    Pi_p_i = [_selector(n, b) for b in p_blocks]
    return {
        "Pi_q_j": Pi_q_j,
        "Pi_q": sum(Pi_q_j, np.zeros((n, n))),
        "Pi_p_i": Pi_p_i,
        "Pi_p": sum(Pi_p_i, np.zeros((n, n))),
        "q_blocks": q_blocks,
        "p_blocks": p_blocks,
    }


def poincare(sys: GluedHeteroclinicSystem, x) -> np.ndarray:
    """Sigma_q -> Sigma_p, x -> a_p + K (x - a_q), in Q and P chart coordinates."""
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x) > sys.q_radius:
        raise OutOfDomain("point is outside the Q chart", 0.0)
    if abs(sys.q_side(x)) > 1e-9 * max(1.0, np.linalg.norm(x)):
        raise ValueError("point is not on Sigma_q")
    out = sys.a_p + sys.K_amb @ (x - sys.a_q)
    if np.linalg.norm(out) > sys.p_radius:
        raise OutOfDomain("image is outside the P chart", sys.tau)
    return out


def _orth(m: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    if m.size == 0:
        return np.zeros((m.shape[0], 0))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0:
        return np.zeros((m.shape[0], 0))
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return u[:, :rank]


def tangent_spaces(sys: GluedHeteroclinicSystem) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases (P chart coordinates at a_p) of T W^u(q) and T W^s(p)."""
    t_wu = _orth(np.column_stack([sys.K_amb @ sys.sig_q, sys.v_p]))
    t_ws = _orth(np.column_stack([sys.sig_p, sys.v_p]))
    return t_wu, t_ws


def transversality(sys: GluedHeteroclinicSystem) -> dict:
    t_wu, t_ws = tangent_spaces(sys)
    rank = _orth(np.hstack([t_wu, t_ws])).shape[1]
    defect = sys.n - rank
    return {
        "verdict": "transversal" if defect == 0 else "nontransversal",
        "defect_dim": int(defect),
        "dim_Wu_q": int(t_wu.shape[1]),
        "dim_Ws_p": int(t_ws.shape[1]),
    }


def transversality_oracle(sys: GluedHeteroclinicSystem, h: float = 1e-6) -> dict:
    """Independent check: tangent vectors by finite differences of the glued flow and
    the sum dimension through principal angles, dim(A + B) = dim A + dim B - dim(A n B).
    """
    base = ChartPoint(Q, sys.a_q.copy())
    img0 = evolve_glued(sys, sys.tau, base)
    cols = []
    for b in sys.sig_q.T:
        plus = evolve_glued(sys, sys.tau, ChartPoint(Q, sys.a_q + h * b))
        minus = evolve_glued(sys, sys.tau, ChartPoint(Q, sys.a_q - h * b))
        cols.append((plus.coords - minus.coords) / (2 * h))
    fwd = evolve_glued(sys, h, img0).coords
    flow_dir = (fwd - img0.coords) / h
    wu = np.column_stack(cols + [flow_dir])
    # stable directions at a_p: perturbations whose forward images contract toward p
    ws_cols = [flow_dir]
    for k in range(sys.n):
        e = np.zeros(sys.n)
        e[k] = 1.0
        x = img0.coords + h * e
        later = sys.p_field.propagate(8.0, x) - sys.p_field.propagate(8.0, img0.coords)
        if np.linalg.norm(later) < h * math.exp(-8.0 * SPECTRAL_GAP / 2):
            ws_cols.append(e - (e @ sys.vp_hat) * sys.vp_hat)
    ws = np.column_stack(ws_cols)
    qa, _ = np.linalg.qr(wu)
    qb, _ = np.linalg.qr(ws)
    ra = int(np.linalg.matrix_rank(wu, tol=1e-6))
    rb = int(np.linalg.matrix_rank(ws, tol=1e-6))
    qa, qb = qa[:, :ra], qb[:, :rb]
    angles = subspace_angles(qa, qb)
    inter = int(np.sum(angles < 1e-5))
    total = ra + rb - inter
    return {
        "verdict": "transversal" if total == sys.n else "nontransversal",
        "defect_dim": sys.n - total,
        "dim_Wu_q": ra,
        "dim_Ws_p": rb,
    }


# -- obstruction frame ----------------------------------------------------


@dataclass
class ObstructionFrame:
    i: int
    e_p: np.ndarray  # P chart coordinates
    proj_ep: np.ndarray
    e_q: np.ndarray  # Q chart coordinates
    active_j: list[int]
    kind: str = "obstruction"

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "e_p": self.e_p.tolist(),
            "e_q": self.e_q.tolist(),
            "active_j": list(self.active_j),
            "kind": self.kind,
        }


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    return -v if nz.size and v[nz[0]] < 0 else v


def select_obstruction_frame(sys: GluedHeteroclinicSystem) -> ObstructionFrame:
    if transversality(sys)["verdict"] == "transversal":
        raise TransversalSystem("system is transversal; no obstruction frame exists")
    pr = projections(sys)
    image = sys.K_amb @ sys.sig_q  # K Sigma~_q, P chart coordinates
    chosen = None
    for i, (Pi, blk) in enumerate(zip(pr["Pi_p_i"], pr["p_blocks"])):
        img = _orth(Pi @ image)
        if img.shape[1] < len(blk):
            chosen = (i, Pi, blk, img)
            break
    if chosen is None:
        raise UnsupportedFrameCase("no unstable block of p is deficient in Pi_p^(i) K Sigma~_q")
    i, Pi, blk, img = chosen
    n = sys.n
    if len(blk) == 1 and img.shape[1] == 0:
        e_p = np.zeros(n)
        e_p[blk[0]] = 1.0
    elif len(blk) == 2 and img.shape[1] == 1:
        line = img[:, 0]
        e_p = np.zeros(n)
        e_p[blk[0]], e_p[blk[1]] = -line[blk[1]], line[blk[0]]
        e_p = _sign_fix(e_p / np.linalg.norm(e_p))
    else:
        raise UnsupportedFrameCase(
            f"block {i}: dim U_p^(i) = {len(blk)} with dim Pi_p^(i) K Sigma~_q = {img.shape[1]} is not handled"
        )
    functional = e_p @ sys.K_amb  # Pi_p^{e_p} K as a row acting on Q chart vectors
    scale = max(1.0, np.abs(sys.K).max())
    comps, active = [], []
    for j, blk_q in enumerate(pr["q_blocks"]):
        c = functional[blk_q]
        if np.linalg.norm(c) > 1e-12 * scale:
            active.append(j)
            comps.append((blk_q, -c / np.linalg.norm(c)))
    if not active:
        raise NoActiveBlock("Pi_p^{e_p} K S_q = {0}: the system violates the nondegeneracy relation")
    e_q = np.zeros(n)
    for blk_q, u in comps:
        e_q[blk_q] = u / math.sqrt(len(active))
    e_p = e_p + 0.0
    e_q = e_q + 0.0
    return ObstructionFrame(i, e_p, np.outer(e_p, e_p), e_q, active)


def probe_frame(sys: GluedHeteroclinicSystem) -> ObstructionFrame:
    """Jump directions for systems without an obstruction frame (first coordinate of S_q
    and of U_p); used to build comparison pseudotrajectories on transversal systems."""
    n = sys.n
    e_p = np.zeros(n)
    e_q = np.zeros(n)
    if sys.p_unstable_idx:
        e_p[sys.p_unstable_idx[0]] = 1.0
    else:
        e_p[sys.p_stable_idx[-1]] = 1.0
    if sys.q_stable_idx:
        e_q[sys.q_stable_idx[0]] = 1.0
    else:
        e_q[sys.q_unstable_idx[-1]] = 1.0
    return ObstructionFrame(0, e_p, np.outer(e_p, e_p), e_q, [], kind="probe")


def default_frame(sys: GluedHeteroclinicSystem) -> ObstructionFrame:
    cached = sys.meta.get("_frame")
    if cached is not None:
        return cached
    if transversality(sys)["verdict"] == "transversal":
        frame = probe_frame(sys)
    else:
        frame = select_obstruction_frame(sys)
    sys.meta["_frame"] = frame
    return frame


# -- obstruction report ---------------------------------------------------


@dataclass
class ObstructionReport:
    w: float
    v: float
    r_back: float
    r_fwd: float
    windows: tuple
    verdict: str
    w_blocks: list = field(default_factory=list)
    identity_gap: float = 0.0
    H_star: float = 0.0
    threshold: float = 0.0

    def to_json(self) -> dict:
        return {
            "w": self.w,
            "v": self.v,
            "r_back": self.r_back,
            "r_fwd": self.r_fwd,
            "windows": [list(w) for w in self.windows],
            "verdict": self.verdict,
            "w_blocks": list(self.w_blocks),
            "identity_gap": self.identity_gap,
            "H_star": self.H_star,
            "threshold": self.threshold,
        }


def _probe_step(g) -> float:
    return g.dt / 8


def obstruction_report(
    sys: GluedHeteroclinicSystem,
    frame: ObstructionFrame,
    omega_q,
    h: PiecewiseLinearRepar,
    d: float,
    L: float,
    T=None,
    *,
    g=None,
    C3: float | None = None,
    n_shift: int = 41,
) -> ObstructionReport:
    """Residuals of the candidate (omega_q, h) on the two windows and the sign bookkeeping.

    ``omega_q`` is a Q-chart point of Sigma_q.  The backward window is [-T_b, 0) and the
    forward one [tau, tau + T_f]; on the forward window the trajectory is re-anchored at
    omega_p = K omega_q and a time shift |H| <= C3 d is optimized.
    """
    from .pseudo import pseudo_glued

    omega_q = np.asarray(omega_q, dtype=float)
    if abs(sys.q_side(omega_q)) > 1e-9:
        raise ValueError("omega_q must lie on Sigma_q")
    if g is None:
        g = pseudo_glued(sys, d, frame)
    if T is None:
        t_b, t_f = g.meta.get("t_back", 4.0), g.meta.get("t_fwd", 4.0)
    elif np.ndim(T) == 0:
        t_b = t_f = float(T)
    else:
        t_b, t_f = map(float, T)
    C3 = float(sys.meta.get("C3", 1.0) if C3 is None else C3)
    y = sys.section_coords_q(omega_q)

    tb = g.probe_times(8, (-t_b, 0.0))
    tb = tb[tb < -1e-12]
    tf = g.probe_times(8, (sys.tau, sys.tau + t_f))
    Gb, Gf = g.probe(tb), g.probe(tf)

    back = section_orbit_positions(sys, y, rep_eval(h, tb))
    r_back = _sup_dist(back, Gb)

    h_tau = rep_eval(h, sys.tau)
    shifts = np.linspace(-C3 * d, C3 * d, n_shift) if C3 * d > 0 else np.zeros(1)
    best, H_star = math.inf, 0.0
    rel = rep_eval(h, tf) - h_tau
    for H in shifts:
        fwd = section_orbit_positions(sys, y, sys.tau + rel + H)
        r = _sup_dist(fwd, Gf)
        if r < best:
            best, H_star = r, float(H)
    r_fwd = best

    pr = projections(sys)
    dq = omega_q - sys.a_q
    functional = frame.e_p @ sys.K_amb
    w_blocks = [float(functional @ (Pj @ dq)) for Pj in pr["Pi_q_j"]]
    w = float(functional @ (pr["Pi_q"] @ dq))
    omega_p = sys.a_p + sys.K_amb @ dq
    Pi_i = pr["Pi_p_i"][frame.i] if pr["Pi_p_i"] else np.eye(sys.n)
    v = float(frame.e_p @ (Pi_i @ (omega_p - sys.a_p)))
    gap = abs(w - float(functional @ dq))

    thr = L * d
    if r_back > thr:
        verdict = "BackViolated"
    elif r_fwd > thr:
        verdict = "FwdViolated"
    else:
        verdict = "SignContradiction"
    return ObstructionReport(w, v, r_back, r_fwd, ((-t_b, 0.0), (sys.tau, sys.tau + t_f)), verdict, w_blocks, gap, H_star, thr)


def _sup_dist(a: np.ndarray, b: np.ndarray) -> float:
    dist = np.linalg.norm(a - b, axis=-1)
    if np.isnan(dist).any():
        return math.inf
    return float(dist.max()) if dist.size else 0.0


def measure_c3(sys: GluedHeteroclinicSystem, frame: ObstructionFrame, L_max: float, C1: float, samples: int = 2000, seed=0) -> float:
    """Largest time shift (per unit d) needed to bring a point of the ball
    B(L_max C1 d, a_p + d e_p) onto Sigma_p, measured by flowing sample points."""
    rng = np.random.default_rng(seed)
    d = 1e-3
    center = sys.a_p + d * frame.e_p
    radius = L_max * C1 * d
    dirs = rng.normal(size=(samples, sys.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = center + radius * dirs
    worst = 0.0
    for x in pts:

        def crossing(s, x=x):
            return float((sys.p_field.propagate(s, x) - sys.a_p) @ sys.v_p)

        # near a_p the P flow moves along v_p; fall back to the linear estimate
        if crossing(-1.0) * crossing(1.0) < 0:
            s = brentq(crossing, -1.0, 1.0, xtol=1e-15)
        else:
            s = float(sys.p_side(x)) / sys.speed_p**2
        worst = max(worst, abs(s))
    return worst / d
