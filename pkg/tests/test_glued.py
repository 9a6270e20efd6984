from __future__ import annotations

import numpy as np
import pytest

from shadowlab.flow import OutOfDomain, evolve_block
from shadowlab.glued import P, Q, TRANSIT, ChartPoint, GluedFlow, evolve_glued
from shadowlab.hetero import default_frame, load_fixture, poincare

FIXTURES = ["ntrans3d", "ntrans4d", "trans3d", "sconn2d"]


@pytest.fixture(scope="module", params=FIXTURES)
def system(request):
    return load_fixture(request.param)


def test_chart_point_validation():
    with pytest.raises(ValueError):
        ChartPoint("X", [0.0])
    with pytest.raises(ValueError):
        ChartPoint(TRANSIT, [0.0])
    with pytest.raises(ValueError):
        ChartPoint(Q, [0.0], 0.5)
    cp = ChartPoint(TRANSIT, [0.5, 0.0], 0.25)
    assert ChartPoint.from_json(cp.to_json()) == cp
    assert ChartPoint(TRANSIT, [0.5, 0.0], 0.5) != cp


def test_a_q_reaches_a_p(system):
    out = evolve_glued(system, system.tau, ChartPoint(Q, system.a_q))
    assert out.chart == P
    np.testing.assert_allclose(out.coords, system.a_p, atol=1e-14)


def test_frame_offset_maps_through_K():
    sys = load_fixture("ntrans3d")
    fr = default_frame(sys)
    d = 1e-3
    out = evolve_glued(sys, sys.tau, ChartPoint(Q, sys.a_q + d * fr.e_q))
    np.testing.assert_allclose(out.coords, sys.a_p + d * sys.K_amb @ fr.e_q, atol=1e-12)


def test_q_chart_matches_block_flow(system, rng):
    # points strictly on the Q side stay in the Q chart under backward flow
    for _ in range(20):
        x = system.a_q + 0.05 * rng.normal(size=system.n)
        x = x - max(0.0, float(system.q_side(x)) + 1e-3) * system.v_q / system.speed_q**2
        if np.linalg.norm(x) >= system.q_radius:
            continue
        t = -float(rng.uniform(0.0, 0.5))
        try:
            out = evolve_glued(system, t, ChartPoint(Q, x))
        except OutOfDomain:
            continue
        assert out.chart == Q
        assert np.array_equal(out.coords, evolve_block(system.q_field, t, x))


def test_time_reversal(system, rng):
    checked = 0
    for _ in range(40):
        y = 0.05 * rng.normal(size=system.n - 1)
        x = ChartPoint(Q, system.sigma_q_point(y))
        t = float(rng.uniform(-1.0, 3.0))
        try:
            fwd = evolve_glued(system, t, x)
            back = evolve_glued(system, -t, fwd)
        except OutOfDomain:
            continue
        np.testing.assert_allclose(system.embed(back), system.embed(x), atol=1e-9)
        checked += 1
    assert checked > 5


def test_backward_exit_on_stable_direction():
    sys = load_fixture("ntrans3d")
    x = sys.a_q.copy()
    x[sys.q_stable_idx[0]] = 0.1
    with pytest.raises(OutOfDomain) as exc:
        evolve_glued(sys, -50.0, ChartPoint(Q, x))
    t_exit = exc.value.time
    assert t_exit is not None and -50.0 < t_exit < 0
    inside = evolve_glued(sys, 0.999 * t_exit, ChartPoint(Q, x))
    assert np.linalg.norm(inside.coords) <= sys.q_radius


def test_poincare_agrees_with_flow(system, rng):
    for _ in range(100):
        y = 0.02 * rng.normal(size=system.n - 1)
        x = system.sigma_q_point(y)
        out = evolve_glued(system, system.tau, ChartPoint(Q, x))
        np.testing.assert_allclose(poincare(system, x), out.coords, atol=1e-12)


def test_embedding_is_continuous_across_sections(system, rng):
    flow = GluedFlow(system)
    y = 0.02 * rng.normal(size=system.n - 1)
    x = ChartPoint(Q, system.sigma_q_point(y))
    eps = 1e-7
    pts = flow.orbit(x, np.array([-eps, 0.0, eps, system.tau - eps, system.tau, system.tau + eps]))
    assert np.linalg.norm(pts[0] - pts[1]) < 1e-5 and np.linalg.norm(pts[2] - pts[1]) < 1e-5
    assert np.linalg.norm(pts[3] - pts[4]) < 1e-5 and np.linalg.norm(pts[5] - pts[4]) < 1e-5


def test_transit_pushes_basis_through_K(system):
    # finite differences through the flow reproduce K_amb on Sigma_q directions
    h = 1e-6
    for k in range(system.n - 1):
        x = system.sigma_q_point(h * np.eye(system.n - 1)[k])
        out = evolve_glued(system, system.tau, ChartPoint(Q, x)).coords
        np.testing.assert_allclose((out - system.a_p) / h, system.K_amb @ system.B_q[:, k], atol=1e-10)
