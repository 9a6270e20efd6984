from __future__ import annotations

import numpy as np
import pytest

from shadowlab.flow import BlockLinearField, LinearFlow, Real1D
from shadowlab.glued import Q, ChartPoint, GluedFlow
from shadowlab.hetero import load_fixture
from shadowlab.pseudo import SampledPseudotrajectory, pseudo_from_orbit, pseudo_glued, pseudo_jump
from shadowlab.repar import identity, rep_in_class, rep_random
from shadowlab.shadow import (
    MAX_RESIDUAL,
    SWEEP_COLUMNS,
    InvalidEpsilon,
    SweepTable,
    auto_epsilon,
    lipschitz_sweep,
    nosubset_feasibility,
    residual,
    shadow_search,
)


def zero_flow():
    return LinearFlow(BlockLinearField([Real1D(0.0)]))


def jump(delta=0.1):
    nodes = [np.array([0.0])] * 3 + [np.array([delta])] * 3
    return SampledPseudotrajectory(-1.0, 0.5, nodes, zero_flow())


def test_residual_exact_orbit():
    f = LinearFlow(BlockLinearField([Real1D(-1.0), Real1D(0.5)]))
    x = np.array([1.0, 0.2])
    g = pseudo_from_orbit(f, x, (-2.0, 2.0), 0.25)
    assert residual(f, g, x, identity()) <= 1e-12
    # shifting the point by v costs at least |v| at t = 0
    assert residual(f, g, x + np.array([0.0, 1e-3]), identity()) >= 1e-3


def test_residual_jump():
    g = jump()
    assert residual(g.flow, g, np.zeros(1), identity()) == pytest.approx(0.1, abs=1e-15)
    assert residual(g.flow, g, np.array([0.05]), identity()) == pytest.approx(0.05, abs=1e-15)
    # reparametrization does not move points of a zero field
    assert residual(g.flow, g, np.array([0.05]), rep_random(0.5, (-1, 2), 0.5, 1)) == pytest.approx(0.05, abs=1e-15)


def test_residual_window():
    g = jump()
    assert residual(g.flow, g, np.zeros(1), identity(), window=(-1.0, 0.4)) == 0.0
    with pytest.raises(ValueError):
        residual(g.flow, g, np.zeros(1), identity(), window=(-2.0, 0.0))


def test_residual_glued_forms_agree():
    sys = load_fixture("ntrans3d")
    flow = GluedFlow(sys)
    g = pseudo_glued(sys, 1e-2)
    rng = np.random.default_rng(2)
    h = rep_random(0.05, g.window, g.dt, 3)
    for _ in range(5):
        y = 1e-2 * rng.normal(size=sys.n - 1)
        a = residual(flow, g, y, h)
        b = residual(flow, g, ChartPoint(Q, sys.sigma_q_point(y)), h)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-13)


def test_residual_exact_glued_orbit():
    sys = load_fixture("ntrans3d")
    g = pseudo_glued(sys, 0.0)
    assert residual(g.flow, g, np.zeros(sys.n - 1), identity()) <= 1e-9


def test_residual_domain_exit_is_capped():
    sys = load_fixture("ntrans3d")
    g = pseudo_glued(sys, 1e-2)
    y = np.zeros(sys.n - 1)
    y[-1] = 0.5
    assert residual(g.flow, g, y, identity()) == MAX_RESIDUAL


def test_search_exact_orbit():
    f = LinearFlow(BlockLinearField([Real1D(-1.0), Real1D(0.5)]))
    x = np.array([1.0, 0.2])
    g = pseudo_from_orbit(f, x, (-2.0, 2.0), 0.25)
    res = shadow_search(f, g, None, 0.0, starts=2, budget=400, seed=0)
    assert res.best_eps <= 1e-6


def test_search_zero_field_jump_midpoint():
    g = jump()
    res = shadow_search(g.flow, g, None, 0.2, starts=4, budget=500, seed=1)
    assert res.best_eps == pytest.approx(0.05, abs=1e-6)
    assert rep_in_class(res.h_star, 0.2)


def test_search_errors():
    g = jump()
    with pytest.raises(ValueError):
        shadow_search(g.flow, g, starts=0)
    with pytest.raises(ValueError):
        shadow_search(g.flow, g, budget=0)
    with pytest.raises(ValueError):
        shadow_search(g.flow, g, class_a=-0.1)


def test_search_deterministic_across_workers():
    sys = load_fixture("ntrans3d")
    g = pseudo_glued(sys, 1e-2)
    kw = dict(class_a=0.02, starts=4, budget=150, seed=5)
    a = shadow_search(g.flow, g, **kw, workers=1)
    b = shadow_search(g.flow, g, **kw, workers=1)
    c = shadow_search(g.flow, g, **kw, workers=2)
    assert a.to_json() == b.to_json()
    assert a.best_eps == c.best_eps and a.start_index == c.start_index


def test_search_monotone_in_class():
    sys = load_fixture("ntrans3d")
    g = pseudo_glued(sys, 1e-2)
    small = shadow_search(g.flow, g, None, 0.01, starts=2, budget=300, seed=0)
    big = shadow_search(g.flow, g, None, 0.05, starts=2, budget=300, seed=0, warm_start=[(small.p_star, small.h_star)])
    assert big.best_eps <= small.best_eps + 1e-12


def test_sweep_small():
    sys = load_fixture("ntrans3d")
    table = lipschitz_sweep(sys, [1.0], [1e-2], starts=2, budget=200, measure_defect=True)
    assert len(table.rows) == 1
    row = table.rows[0]
    assert row.class_a == pytest.approx(1e-2)
    assert row.verdict in {"LipOK", "LipFail"}
    assert row.obstruction_verdict in {"BackViolated", "FwdViolated", "SignContradiction"}
    assert row.defect > 0
    lines = table.to_csv().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS) and len(lines) == 2
    assert table.to_json()[0]["search"]["class_a"] == row.class_a


def test_sweep_transversal_has_no_obstruction():
    sys = load_fixture("trans3d")
    table = lipschitz_sweep(sys, [1.0], [1e-2], starts=1, budget=100)
    assert table.rows[0].obstruction_verdict == "NotApplicable"


def test_sweep_empty():
    table = lipschitz_sweep(load_fixture("ntrans3d"), [], [1e-2])
    assert table.rows == [] and table.to_csv() == ",".join(SWEEP_COLUMNS) + "\n"
    assert SweepTable().to_json() == []


@pytest.fixture(scope="module")
def sconn():
    sys2 = load_fixture("sconn2d")
    jp = sys2.meta["jump"]
    return sys2, pseudo_jump(sys2, jp["r"], jp["alpha"], 2.0, 2.0, 0.25)


def test_auto_epsilon(sconn):
    sys2, g = sconn
    eps, bounds = auto_epsilon(sys2, g.meta["r"], g.meta["alpha"])
    assert eps == pytest.approx(0.5 * min(bounds.values()))
    assert bounds["dist_alpha_Ws_loc"] == pytest.approx(0.5)


def test_nosubset_small_grid(sconn):
    sys2, g = sconn
    cert = nosubset_feasibility(sys2, g, "auto", x_grid=8, h_grid=6, seed=0)
    assert not cert.feasible and cert.witness is None
    assert cert.n_points == 64 and cert.n_h == 6
    assert cert.all_match
    js = cert.to_json()
    assert js["n_on_wu"] + js["n_off_wu"] == 64


def test_nosubset_invalid_eps(sconn):
    sys2, g = sconn
    with pytest.raises(InvalidEpsilon):
        nosubset_feasibility(sys2, g, 10.0, x_grid=4, h_grid=2)
    with pytest.raises(InvalidEpsilon):
        nosubset_feasibility(sys2, g, -1.0, x_grid=4, h_grid=2)
