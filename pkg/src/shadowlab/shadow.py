"""Shadowing feasibility as box-constrained minimax search, Lipschitz sweeps, and the
brute-force feasibility check for the saddle-connection configuration."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import minimize

from . import _kernels as kern
from .flow import LinearFlow
from .glued import P, Q, TRANSIT, ChartPoint, GluedFlow, GluedHeteroclinicSystem
from .pseudo import SampledPseudotrajectory, pseudo_glued
from .repar import PiecewiseLinearRepar, rep_eval, rep_in_class

__all__ = [
    "MAX_RESIDUAL",
    "ShadowingResult",
    "SweepRow",
    "SweepTable",
    "InvalidEpsilon",
    "NoSubsetCertificate",
    "residual",
    "shadow_search",
    "lipschitz_sweep",
    "default_workers",
    "auto_epsilon",
    "check_epsilon",
    "nosubset_feasibility",
]

MAX_RESIDUAL = 1e6
REFINE = 8
SWEEP_COLUMNS = ["L", "d", "best_eps", "ratio", "class_a", "verdict", "obstruction_verdict"]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SHADOWLAB_WORKERS", "1")))
    except ValueError:
        return 1


# -- residual evaluation --------------------------------------------------


def _glued_args(sys: GluedHeteroclinicSystem) -> tuple:
    Mp = np.outer(sys.u_hat, sys.vp_hat) + sys.B_q @ sys.B_p.T
    cp = sys.a_q + float(sys.transit_length(sys.tau)) * sys.u_hat
    V = np.vstack([sys.a_q, sys.a_p, cp, sys.u_hat])
    c = np.ascontiguousarray
    return (
        kern.block_table(sys.q_field), kern.block_table(sys.p_field), c(V, dtype=float),
        c(sys.B_q, dtype=float), c(sys.K, dtype=float), c(sys.B_p, dtype=float), c(Mp, dtype=float),
        float(sys.speed_q), float(sys.speed_p), float(sys.tau), float(sys.q_radius**2), float(sys.p_radius**2),
        MAX_RESIDUAL,
    )


def _on_sigma_q(sys: GluedHeteroclinicSystem, p) -> np.ndarray | None:
    """Section coordinates when ``p`` is a point of Sigma_q, else None."""
    if isinstance(p, ChartPoint):
        if p.chart == TRANSIT and p.transit_s == 0:
            return sys.section_coords_q(p.coords)
        if p.chart == Q and abs(sys.q_side(p.coords)) <= 1e-12 * max(1.0, sys.speed_q):
            return sys.section_coords_q(p.coords)
        return None
    return np.asarray(p, dtype=float)


def _window_probes(g: SampledPseudotrajectory, window) -> np.ndarray:
    lo, hi = g.window if window is None else window
    if lo < g.t0 - 1e-12 or hi > g.t_end + 1e-12:
        raise ValueError("window exceeds the pseudotrajectory")
    return g.probe_times(REFINE, (lo, hi))


def residual(flow, g: SampledPseudotrajectory, p, h: PiecewiseLinearRepar, window=None) -> float:
    """Probe-grid sup of |phi(h(t), p) - g(t)| (step g.dt/8); MAX_RESIDUAL on domain exit.

    For glued flows ``p`` may be given by its section coordinates (an (n-1)-vector) or
    as a chart point on Sigma_q.
    """
    times = _window_probes(g, window)
    G = np.ascontiguousarray(g.probe(times))
    u = np.ascontiguousarray(rep_eval(h, times), dtype=float)
    if isinstance(flow, GluedFlow):
        y = _on_sigma_q(flow.sys, p)
        if y is not None and y.shape == (flow.sys.n - 1,):
            return float(kern.glued_residual(np.ascontiguousarray(y, dtype=float), u, G, *_glued_args(flow.sys)))
        pos = flow.orbit(p, u)
    elif isinstance(flow, LinearFlow):
        return float(kern.linear_residual(np.asarray(p, dtype=float), u, G, kern.block_table(flow.field), MAX_RESIDUAL))
    else:
        pos = flow.orbit(p, u)
    dist = np.linalg.norm(pos - G, axis=-1)
    if dist.size == 0:
        return 0.0
    if np.isnan(dist).any():
        return MAX_RESIDUAL
    return float(min(dist.max(), MAX_RESIDUAL))


# -- search problem -------------------------------------------------------


@dataclass
class _Problem:
    """Residual as a function of scaled variables z = (point offsets, slope offsets)."""

    kind: str
    times: np.ndarray
    G: np.ndarray
    grid_t0: float
    dt: float
    m: int
    k0: int
    class_a: float
    anchor: np.ndarray
    scale: float
    args: tuple
    flow: Any = None

    @property
    def n_point(self) -> int:
        return self.anchor.size

    @property
    def n_slopes(self) -> int:
        return self.m if self.class_a > 0 else 0

    def split(self, z: np.ndarray):
        p = self.anchor + self.scale * z[: self.n_point]
        if self.n_slopes:
            slopes = 1.0 + self.class_a * np.clip(z[self.n_point :], -1.0, 1.0)
        else:
            slopes = np.ones(self.m)
        return p, slopes

    def value(self, z: np.ndarray) -> float:
        p, slopes = self.split(z)
        u = kern.repar_values(self.grid_t0, self.dt, slopes, self.k0, self.times)
        if self.kind == "glued":
            return kern.glued_residual(p, u, self.G, *self.args)
        if self.kind == "linear":
            return kern.linear_residual(p, u, self.G, *self.args)
        pos = self.flow.orbit(p, u)
        dist = np.linalg.norm(pos - self.G, axis=-1)
        if np.isnan(dist).any():
            return MAX_RESIDUAL
        return float(min(dist.max(), MAX_RESIDUAL))

    def repar(self, slopes: np.ndarray) -> PiecewiseLinearRepar:
        bp = self.grid_t0 + self.dt * np.arange(self.m + 1)
        bp[self.k0] = 0.0
        return PiecewiseLinearRepar(bp, slopes)

    def bounds(self):
        return [(None, None)] * self.n_point + [(-1.0, 1.0)] * self.n_slopes

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([np.full(self.n_point, -np.inf), -np.ones(self.n_slopes)])
        return lo, -lo

    def compiled(self):
        """(objective, data) for the compiled search loop, or None for generic flows."""
        if self.kind == "generic":
            return None
        fn = kern.glued_objective if self.kind == "glued" else kern.linear_objective
        data = (
            self.n_point, self.class_a, np.ascontiguousarray(self.anchor, dtype=float), float(self.scale),
            float(self.grid_t0), float(self.dt), int(self.k0), int(self.m), self.times, self.G, self.args,
        )
        return fn, data


def _build_problem(flow, g: SampledPseudotrajectory, window, class_a: float, scale=None) -> _Problem:
    lo, hi = g.window if window is None else window
    if not (lo <= 0.0 <= hi):
        raise ValueError("the search window must contain t = 0")
    times = _window_probes(g, (lo, hi))
    G = np.ascontiguousarray(g.probe(times))
    # slope grid: the pseudotrajectory's node grid through the window
    k_lo = int(math.floor((lo - g.t0) / g.dt + 1e-9))
    k_hi = int(math.ceil((hi - g.t0) / g.dt - 1e-9))
    grid_t0 = g.t0 + k_lo * g.dt
    m = max(1, k_hi - k_lo)
    k0 = int(round(-grid_t0 / g.dt))
    if abs(grid_t0 + k0 * g.dt) > 1e-9:
        raise ValueError("t = 0 must be a node of the pseudotrajectory")
    if isinstance(flow, GluedFlow):
        sys = flow.sys
        anchor = np.zeros(sys.n - 1)
        kind, args = "glued", _glued_args(sys)
        default_scale = float(g.meta.get("d", 0.0)) or 1e-3
    else:
        anchor = np.asarray(flow.embed(g.nodes[int(round(-g.t0 / g.dt))]), dtype=float)
        if isinstance(flow, LinearFlow):
            kind, args = "linear", (kern.block_table(flow.field), MAX_RESIDUAL)
        else:
            kind, args = "generic", ()
        default_scale = 0.0
    prob = _Problem(kind, times, G, grid_t0, g.dt, m, k0, float(class_a), anchor.copy(), 1.0, args, flow)
    if scale is None:
        scale = default_scale
        if scale <= 0:
            z0 = np.zeros(prob.n_point + prob.n_slopes)
            scale = max(prob.value(z0), 1e-9)
    prob.scale = float(scale)
    return prob


@dataclass
class ShadowingResult:
    best_eps: float
    p_star: Any
    h_star: PiecewiseLinearRepar
    class_a: float
    feasible_at: float | None
    starts: int
    budget: int
    seed: int
    evaluations: int = 0
    start_index: int = 0
    y_star: np.ndarray | None = None

    def to_json(self) -> dict:
        p = self.p_star.to_json() if isinstance(self.p_star, ChartPoint) else np.asarray(self.p_star).tolist()
        return {
            "best_eps": self.best_eps,
            "p_star": p,
            "y_star": None if self.y_star is None else self.y_star.tolist(),
            "h_star": self.h_star.to_json(),
            "class_a": self.class_a,
            "feasible_at": self.feasible_at,
            "starts": self.starts,
            "budget": self.budget,
            "seed": self.seed,
            "evaluations": self.evaluations,
            "start_index": self.start_index,
        }


def _anchor_starts(flow, g, prob: _Problem) -> list[np.ndarray]:
    """Deterministic informed starts (scaled point offsets, identity slopes)."""
    out = [np.zeros(prob.n_point)]
    if prob.kind == "glued":
        from .hetero import default_frame

        sys = flow.sys
        d = float(g.meta.get("d", 0.0))
        if d > 0:
            frame = default_frame(sys)
            yq = sys.section_coords_q(sys.a_q + d * frame.e_q)
            yp = sys.section_coords_p(sys.a_p + d * frame.e_p)
            out += [yq / prob.scale, yp / prob.scale, 0.5 * (yq + yp) / prob.scale]
            # least-squares compromise fitting both jump targets in section coordinates
            A = np.vstack([sys.B_q, sys.B_p @ sys.K])
            b = np.concatenate([d * frame.e_q, d * frame.e_p])
            ls = np.linalg.lstsq(A, b, rcond=None)[0]
            out.append(ls / prob.scale)
    return out


def _simplex(z0: np.ndarray, prob: _Problem, rng: np.random.Generator, step: float) -> np.ndarray:
    k = z0.size
    sim = np.tile(z0, (k + 1, 1))
    for i in range(k):
        if i < prob.n_point:
            sim[i + 1, i] += step * (1.0 if rng.random() < 0.5 else -1.0)
        else:
            delta = 0.5 * step
            sim[i + 1, i] = z0[i] + delta if z0[i] + delta <= 1.0 else z0[i] - delta
    return sim


def _run_start(prob: _Problem, z0: np.ndarray, budget: int, seed, idx: int, target: float | None):
    """Nelder-Mead with restarts from the incumbent until the budget is spent or a
    restart stops improving."""
    rng = np.random.default_rng([int(seed), int(idx)])
    best_z = np.array(z0, dtype=float)
    best_f = prob.value(best_z)
    used = 1
    if best_z.size == 0:
        return best_f, best_z, used
    step = 1.0
    bounds = prob.bounds()
    lo, hi = prob.box()
    compiled = prob.compiled()
    adaptive = best_z.size > 4
    while used < budget:
        if target is not None and best_f <= target:
            break
        sim = _simplex(best_z, prob, rng, step)
        if compiled is not None:
            fn, data = compiled
            z, f, nfev = kern.nelder_mead(
                fn, data, sim, lo, hi, budget - used, 1e-5, 1e-8 * prob.scale, adaptive, -np.inf if target is None else target
            )
            used += int(nfev)
        else:
            res = minimize(
                prob.value,
                best_z,
                method="Nelder-Mead",
                bounds=bounds,
                options={
                    "maxfev": budget - used,
                    "initial_simplex": sim,
                    "adaptive": adaptive,
                    "xatol": 1e-5,
                    "fatol": 1e-8 * prob.scale,
                },
            )
            used += int(res.nfev)
            z = np.clip(res.x, lo, hi)
            f = prob.value(z)
            used += 1
        improved = f < best_f - 1e-9 * max(best_f, prob.scale)
        if f < best_f:
            best_f, best_z = f, z
        if not improved:
            if step < 0.05:
                break
            step *= 0.25
    return best_f, best_z, used


def _run_batch(payload):
    prob, jobs, budget, seed, target = payload
    return [(idx,) + _run_start(prob, z0, budget, seed, idx, target) for idx, z0 in jobs]


def shadow_search(
    flow,
    g: SampledPseudotrajectory,
    window=None,
    class_a: float = 0.0,
    starts: int = 16,
    budget: int = 2000,
    seed: int = 0,
    *,
    workers: int | None = None,
    warm_start: list | None = None,
    target: float | None = None,
    scale: float | None = None,
) -> ShadowingResult:
    """Multi-start derivative-free minimization of the residual.

    The point ranges over Sigma_q (section coordinates) for glued flows and over R^n
    otherwise; the slopes of h on the pseudotrajectory's node grid are boxed to
    [1 - class_a, 1 + class_a].  ``budget`` counts residual evaluations per start.
    ``warm_start`` takes (point, h) pairs used as the first starts.
    """
    if starts < 1:
        raise ValueError("need at least one start")
    if budget < 1:
        raise ValueError("budget must be positive")
    if class_a < 0:
        raise ValueError("class_a must be nonnegative")
    prob = _build_problem(flow, g, window, class_a, scale)
    dim = prob.n_point + prob.n_slopes
    rng = np.random.default_rng([int(seed), 2**31 - 1])

    z_list: list[np.ndarray] = []
    for p, h in warm_start or []:
        zp = _warm_point(flow, prob, p)
        zs = _warm_slopes(prob, h)
        z_list.append(np.concatenate([zp, zs]))
    for zp in _anchor_starts(flow, g, prob):
        z_list.append(np.concatenate([zp, np.zeros(prob.n_slopes)]))
    while len(z_list) < starts:
        zp = rng.normal(scale=2.0, size=prob.n_point)
        zs = rng.uniform(-1.0, 1.0, size=prob.n_slopes)
        z_list.append(np.concatenate([zp, zs]))
    z_list = [np.asarray(z, dtype=float).reshape(dim) for z in z_list[:starts]]
    jobs = list(enumerate(z_list))

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) == 1:
        results = _run_batch((prob, jobs, budget, seed, target))
    else:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_run_batch, [(prob, c, budget, seed, target) for c in chunks if c])
            results = [r for part in parts for r in part]
    results.sort(key=lambda r: (r[1], r[0]))
    idx, _, z_best, _ = results[0]
    total = int(sum(r[3] for r in results))

    p_best, slopes = prob.split(z_best)
    h_star = prob.repar(slopes)
    if prob.kind == "glued":
        y_star = p_best
        p_star = ChartPoint(TRANSIT, flow.sys.sigma_q_point(y_star), 0.0)
        best = residual(flow, g, y_star, h_star, (prob.times[0], prob.times[-1]))
    else:
        y_star = None
        p_star = p_best
        best = residual(flow, g, p_star, h_star, (prob.times[0], prob.times[-1]))
    feasible = target if (target is not None and best <= target) else None
    return ShadowingResult(best, p_star, h_star, class_a, feasible, starts, budget, seed, total, idx, y_star)


def _warm_point(flow, prob: _Problem, p) -> np.ndarray:
    if prob.kind == "glued":
        y = _on_sigma_q(flow.sys, p)
        if y is None:
            raise ValueError("warm start point must lie on Sigma_q")
        return (np.asarray(y) - prob.anchor) / prob.scale
    return (np.asarray(flow.embed(p), dtype=float) - prob.anchor) / prob.scale


def _warm_slopes(prob: _Problem, h: PiecewiseLinearRepar | None) -> np.ndarray:
    if prob.n_slopes == 0:
        return np.zeros(0)
    if h is None:
        return np.zeros(prob.n_slopes)
    mids = prob.grid_t0 + prob.dt * (np.arange(prob.m) + 0.5)
    eps = 1e-6 * prob.dt
    s = (rep_eval(h, mids + eps) - rep_eval(h, mids - eps)) / (2 * eps)
    return np.clip((s - 1.0) / prob.class_a, -1.0, 1.0)


# -- Lipschitz sweep ------------------------------------------------------


@dataclass
class SweepRow:
    L: float
    d: float
    best_eps: float
    ratio: float
    class_a: float
    verdict: str
    obstruction_verdict: str
    result: ShadowingResult | None = field(default=None, repr=False)
    report: Any = field(default=None, repr=False)
    defect: float | None = None


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r.L), repr(r.d), repr(r.best_eps), repr(r.ratio), repr(r.class_a), r.verdict, r.obstruction_verdict])
        return buf.getvalue()

    def to_json(self) -> list[dict]:
        out = []
        for r in self.rows:
            row = {c: getattr(r, c) for c in SWEEP_COLUMNS}
            row["defect"] = r.defect
            if r.result is not None:
                row["search"] = r.result.to_json()
            if r.report is not None:
                row["obstruction"] = r.report.to_json()
            out.append(row)
        return out


def lipschitz_sweep(
    sys: GluedHeteroclinicSystem,
    L_list,
    d_list,
    starts: int = 64,
    budget: int = 20000,
    seed: int = 0,
    *,
    workers: int | None = None,
    measure_defect: bool = False,
    early_stop: bool = True,
) -> SweepTable:
    """One pseudo_glued + shadow_search per (L, d) cell with class_a = L d.

    For nontransversal systems the best candidate is passed through obstruction_report.
    With ``early_stop`` the search of a cell stops as soon as some start reaches L d
    (the verdict is then settled as LipOK).
    """
    from .hetero import default_frame, obstruction_report, transversality
    from .pseudo import pseudo_defect

    nontrans = transversality(sys)["verdict"] == "nontransversal"
    frame = default_frame(sys)
    table = SweepTable()
    for L in L_list:
        for d in d_list:
            g = pseudo_glued(sys, d, frame)
            flow = g.flow
            a = L * d
            res = shadow_search(flow, g, None, a, starts, budget, seed, workers=workers, target=a if early_stop else None)
            if not rep_in_class(res.h_star, a):
                raise AssertionError("search returned a reparametrization outside its class")
            verdict = "LipOK" if res.best_eps <= a else "LipFail"
            rep, ob = None, "NotApplicable"
            if nontrans:
                rep = obstruction_report(sys, frame, res.p_star.coords, res.h_star, d, L, g=g)
                ob = rep.verdict
            defect = pseudo_defect(flow, g).d_hat if measure_defect else None
            table.rows.append(SweepRow(float(L), float(d), res.best_eps, res.best_eps / d, a, verdict, ob, res, rep, defect))
    return table


# -- saddle connection: no oriented shadowing -----------------------------


class InvalidEpsilon(ValueError):
    pass


def _wu_distance_escape(sys2: GluedHeteroclinicSystem, r: np.ndarray, probes: int = 64) -> float:
    """Smallest, over probe points off W^u(q) near r, of the largest distance their
    backward orbits reach from the local unstable subspace of q before leaving the chart."""
    worst = math.inf
    offs = np.geomspace(1e-4, 0.5, probes)
    u_idx = sys2.p_unstable_idx
    for k, o in enumerate(offs):
        x = r.copy()
        x[u_idx[k % len(u_idx)]] += o if k % 2 == 0 else -o
        if not sys2.in_p_domain(x):
            continue
        orb = GluedFlow(sys2)
        s = -np.linspace(0.0, 200.0, 40001)
        pos = orb.orbit(ChartPoint(P, x), s)
        ok = ~np.isnan(pos).any(axis=1)
        pos = pos[ok]
        # Q chart part of the backward orbit: distance to U_q is the S_q norm
        q_part = pos[np.einsum("ij,j->i", pos - sys2.a_q, sys2.v_q) <= 0]
        if q_part.size == 0:
            continue
        reach = float(np.linalg.norm(q_part[:, sys2.q_stable_idx], axis=1).max())
        worst = min(worst, reach)
    return worst


def auto_epsilon(sys2: GluedHeteroclinicSystem, r, alpha) -> tuple[float, dict]:
    """Half of the largest eps meeting both conditions, with the measured bounds."""
    r = np.asarray(r, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    cond1 = float(np.linalg.norm(alpha[sys2.p_unstable_idx]))
    cond2 = _wu_distance_escape(sys2, r)
    bounds = {"dist_alpha_Ws_loc": cond1, "backward_escape": cond2}
    return 0.5 * min(cond1, cond2), bounds


def check_epsilon(sys2: GluedHeteroclinicSystem, r, alpha, eps: float) -> dict:
    if not eps > 0:
        raise InvalidEpsilon("eps must be positive")
    _, bounds = auto_epsilon(sys2, r, alpha)
    if not bounds["dist_alpha_Ws_loc"] > eps:
        raise InvalidEpsilon(
            f"condition 1 violated: dist(alpha, W^s_loc(p)) = {bounds['dist_alpha_Ws_loc']:.6g} is not > eps = {eps:.6g}"
        )
    if not bounds["backward_escape"] > eps:
        raise InvalidEpsilon(
            f"condition 2 violated: backward orbits off W^u(q) only reach distance {bounds['backward_escape']:.6g} from W^u_loc(q), not > eps = {eps:.6g}"
        )
    return bounds


@dataclass
class NoSubsetCertificate:
    feasible: bool
    eps: float
    n_points: int
    n_h: int
    fail_time: np.ndarray  # per grid point: latest first-failure time over h
    on_wu: np.ndarray
    matches_dichotomy: np.ndarray
    grid: np.ndarray
    witness: dict | None = None
    eps_bounds: dict = field(default_factory=dict)

    @property
    def all_match(self) -> bool:
        return bool(self.matches_dichotomy.all())

    def to_json(self) -> dict:
        back = ~self.on_wu
        return {
            "feasible": self.feasible,
            "eps": self.eps,
            "n_points": self.n_points,
            "n_h": self.n_h,
            "n_on_wu": int(self.on_wu.sum()),
            "n_off_wu": int(back.sum()),
            "all_match_dichotomy": self.all_match,
            "max_backward_fail_time": float(self.fail_time[back].max()) if back.any() else None,
            "min_backward_fail_time": float(self.fail_time[back].min()) if back.any() else None,
            "wu_fail_times": sorted(set(np.round(self.fail_time[self.on_wu], 12).tolist())),
            "witness": self.witness,
            "eps_bounds": self.eps_bounds,
        }


def _monotone_samples(n: int, window, grid: float, seed) -> list[PiecewiseLinearRepar]:
    """Identity plus random piecewise-linear h with log-uniform slopes in [1/2, 2]."""
    rng = np.random.default_rng(seed)
    lo, hi = window
    k_lo = int(math.floor(lo / grid))
    k_hi = int(math.ceil(hi / grid))
    bp = np.arange(k_lo, k_hi + 1) * grid
    out = [PiecewiseLinearRepar([0.0], [1.0])]
    while len(out) < n:
        sl = np.exp(rng.uniform(math.log(0.5), math.log(2.0), size=bp.size - 1))
        out.append(PiecewiseLinearRepar(bp, sl))
    return out[:n]


def _descriptors(sys2: GluedHeteroclinicSystem, pts: np.ndarray, horizon: float = 40.0, step: float = 0.05):
    """Vectorized orbit descriptors for P-chart points.

    Returns (p_only, y, t_sec): orbits that cross Sigma_p backward inside the P ball are
    transit orbits, position(s) = section_orbit_positions(y, s - t_sec); the others stay
    in the P chart.
    """
    pf = sys2.p_field
    n_pts = len(pts)
    s_grid = -np.arange(0.0, horizon + step, step)
    side = np.empty((s_grid.size, n_pts))
    rad = np.empty((s_grid.size, n_pts))
    for k, sv in enumerate(s_grid):
        z = pf.propagate(sv, pts)
        side[k] = (z - sys2.a_p) @ sys2.v_p
        rad[k] = np.einsum("ij,ij->i", z, z)
    tol = 1e-12 * max(1.0, sys2.speed_p)
    crossed = side < -tol
    outside = rad > sys2.p_radius**2 * (1 + 1e-12)
    big = s_grid.size
    k_cross = np.where(crossed.any(axis=0), np.argmax(crossed, axis=0), big)
    k_out = np.where(outside.any(axis=0), np.argmax(outside, axis=0), big)
    on_section = np.abs(side[0]) <= tol
    transit = (k_cross < k_out) | on_section
    y = np.zeros((n_pts, sys2.n - 1))
    t_sec = np.zeros(n_pts)
    idx = np.flatnonzero(transit & ~on_section)
    # bisection on [s_{k}, s_{k-1}] where the side function changes sign
    hi = s_grid[k_cross[idx] - 1].copy()
    lo = s_grid[k_cross[idx]].copy()
    x = pts[idx]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = np.einsum("ij,j->i", pf.propagate(mid, x) - sys2.a_p, sys2.v_p)
        go_lo = val >= 0
        hi = np.where(go_lo, mid, hi)
        lo = np.where(go_lo, lo, mid)
    s_star = 0.5 * (lo + hi)
    z = pf.propagate(s_star, x)
    y[idx] = sys2.section_coords_p(z)
    t_sec[idx] = s_star - sys2.tau
    j = np.flatnonzero(on_section)
    y[j] = sys2.section_coords_p(pts[j])
    t_sec[j] = -sys2.tau
    return ~transit, y, t_sec


def nosubset_feasibility(
    sys2: GluedHeteroclinicSystem,
    g: SampledPseudotrajectory,
    eps: float | str = "auto",
    x_grid: int | np.ndarray = 200,
    h_grid: int | list = 1000,
    *,
    seed: int = 0,
) -> NoSubsetCertificate:
    """Brute force over grid points x (P chart, around r = g(0)) and monotone h for a fit
    dist(g(t), phi(h(t), x)) <= eps on the whole window.

    Points on W^u(q) are checked at t = tau0 + tau1; the others are scanned backward from
    t = 0 (then forward if needed).  Leaving the charts counts as failure.  The certificate stores, per point, the latest time
    (over h) at which the inequality first fails.
    """
    r = np.asarray(g.meta["r"], dtype=float)
    alpha = np.asarray(g.meta["alpha"], dtype=float)
    T_jump = float(g.meta["tau0"] + g.meta["tau1"])
    if eps == "auto":
        eps, bounds = auto_epsilon(sys2, r, alpha)
    else:
        eps = float(eps)
        bounds = check_epsilon(sys2, r, alpha, eps)

    if isinstance(x_grid, (int, np.integer)):
        n_side = int(x_grid)
        # half-width: 2 eps, limited by the distance from r to Sigma_p and to p
        margin = min(abs(float(sys2.p_side(r))) / sys2.speed_p, float(np.linalg.norm(r[sys2.p_stable_idx])))
        hw = min(2.0 * eps, margin)
        offs = hw * (np.arange(n_side) - n_side // 2) / (n_side // 2)
        s_idx, u_idx = sys2.p_stable_idx[0], sys2.p_unstable_idx[0]
        gx, gy = np.meshgrid(offs, offs, indexing="ij")
        pts = np.tile(r, (gx.size, 1))
        pts[:, s_idx] += gx.ravel()
        pts[:, u_idx] += gy.ravel()
    else:
        pts = np.asarray(x_grid, dtype=float)
    hs = _monotone_samples(int(h_grid), g.window, g.dt, seed) if isinstance(h_grid, (int, np.integer)) else list(h_grid)
    n_h = len(hs)

    p_only, ys, tsec = _descriptors(sys2, pts)
    # W^u(q) membership: transit orbit whose section coordinates have no S_q part
    m_sig = len(sys2.q_unstable_idx) - 1
    on_wu = ~p_only & (np.abs(ys[:, m_sig:]).max(axis=1, initial=0.0) <= 1e-12)

    times_back = g.probe_times(REFINE, (g.t0, 0.0))[::-1].copy()
    times_fwd = g.probe_times(REFINE, (0.0, g.t_end))
    G_back = np.ascontiguousarray(g.probe(times_back[::-1])[::-1])
    G_fwd = np.ascontiguousarray(g.probe(times_fwd))
    G_T = np.ascontiguousarray(g.probe(np.array([T_jump])))
    H_back = np.ascontiguousarray(np.stack([rep_eval(h, times_back) for h in hs]))  # (n_h, m)
    H_fwd = np.ascontiguousarray(np.stack([rep_eval(h, times_fwd) for h in hs]))
    H_T = np.ascontiguousarray(np.array([[rep_eval(h, T_jump)] for h in hs]))
    args = _glued_args(sys2)[:-1]

    fail_time = np.empty(len(pts))
    match = np.zeros(len(pts), dtype=bool)
    witness = None

    def first_fail(k, H, Gm):
        return kern.glued_first_fail(
            np.ascontiguousarray(ys[k]), np.ascontiguousarray(pts[k]), bool(p_only[k]), float(tsec[k]), H, Gm, eps, *args
        )

    for k in range(len(pts)):
        if on_wu[k] and np.all(first_fail(k, H_T, G_T) == 0):
            fail_time[k] = T_jump
            match[k] = True
            continue
        fb = first_fail(k, H_back, G_back)
        if np.all(fb >= 0):
            fail_time[k] = float(times_back[fb].max())
            match[k] = not on_wu[k]
            continue
        rest = np.flatnonzero(fb < 0)
        ff = first_fail(k, np.ascontiguousarray(H_fwd[rest]), G_fwd)
        if np.any(ff < 0):
            j = int(rest[np.flatnonzero(ff < 0)[0]])
            witness = {"x": pts[k].tolist(), "h": hs[j].to_json()}
            fail_time[k] = math.nan
            break
        fail_time[k] = float(times_fwd[ff].max())
        match[k] = False
    n_done = len(pts) if witness is None else k + 1
    return NoSubsetCertificate(
        witness is not None,
        float(eps),
        n_done,
        n_h,
        fail_time[:n_done],
        on_wu[:n_done],
        match[:n_done],
        pts[:n_done],
        witness,
        bounds,
    )
