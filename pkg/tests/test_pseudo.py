from __future__ import annotations

import json
import math

import numpy as np
import pytest

from shadowlab.flow import BlockLinearField, LinearFlow, Real1D
from shadowlab.glued import ChartPoint, GluedFlow, Q
from shadowlab.hetero import default_frame, load_fixture
from shadowlab.pseudo import (
    ChartRadiusError,
    SampledPseudotrajectory,
    pseudo_defect,
    pseudo_eval,
    pseudo_from_orbit,
    pseudo_glued,
    pseudo_jump,
)

# fine-grid (factor 64) oracle values of defect / d, frozen in the fixture files
C1_ORACLE = {"ntrans3d": 2.6971, "ntrans4d": 2.0028, "trans3d": 2.6971}


def zero_flow(n=1):
    return LinearFlow(BlockLinearField([Real1D(0.0)] * n))


def jump_pseudo(delta=0.1):
    nodes = [np.array([0.0])] * 3 + [np.array([delta])] * 3
    return SampledPseudotrajectory(-1.0, 0.5, nodes, zero_flow())


def test_eval_exact_at_nodes():
    f = LinearFlow(BlockLinearField([Real1D(1.0)]))
    g = pseudo_from_orbit(f, np.array([1.0]), (-1.0, 1.0), 0.25, noise=0.1, seed=3)
    for t, x in zip(g.times, g.nodes):
        assert pseudo_eval(g, float(t)) is x


def test_eval_semantics():
    g = jump_pseudo()
    assert pseudo_eval(g, 0.3)[0] == 0.0
    f = LinearFlow(BlockLinearField([Real1D(1.0)]))
    g = SampledPseudotrajectory(0.0, 0.5, [np.array([2.0]), np.array([5.0])], f)
    assert pseudo_eval(g, 0.2)[0] == pytest.approx(2.0 * math.exp(0.2))
    with pytest.raises(ValueError):
        pseudo_eval(g, 0.6)


def test_invalid_dt():
    with pytest.raises(ValueError):
        SampledPseudotrajectory(0.0, 0.75, [np.zeros(1)] * 3, zero_flow())
    with pytest.raises(ValueError):
        pseudo_from_orbit(zero_flow(), np.zeros(1), (0, 1), 0.6)


def test_exact_orbit_defect_zero():
    f = LinearFlow(BlockLinearField([Real1D(-1.0), Real1D(0.5)]))
    g = pseudo_from_orbit(f, np.array([1.0, 0.2]), (-2.0, 2.0), 0.25)
    assert pseudo_defect(f, g).d_hat <= 1e-9


def test_jump_defect_equals_jump():
    g = jump_pseudo(0.1)
    est = pseudo_defect(g.flow, g)
    assert est.d_hat == pytest.approx(0.1, abs=1e-15)
    assert est.resolution == pytest.approx(0.5 / 8)


def test_zero_field_noise_bound():
    rng = np.random.default_rng(0)
    for seed in range(5):
        delta = float(rng.uniform(0.01, 0.1))
        g = pseudo_from_orbit(zero_flow(), np.zeros(1), (-2, 2), 0.5, noise=delta, seed=seed)
        # brute-force oracle: a probe pair with |t| < 1 can start inside segment i and
        # end in segment i + 2 (dt = 0.5)
        nodes = np.array(g.nodes)
        brute = max(
            np.linalg.norm(nodes[i] - nodes[j]) for i in range(len(nodes)) for j in range(len(nodes)) if abs(i - j) <= 2
        )
        d_hat = pseudo_defect(g.flow, g).d_hat
        assert d_hat == pytest.approx(brute, abs=1e-15)
        assert d_hat <= 2 * delta


def test_noise_reproducible():
    f = zero_flow(3)
    a = pseudo_from_orbit(f, np.zeros(3), (0, 2), 0.5, noise=0.1, seed=11)
    b = pseudo_from_orbit(f, np.zeros(3), (0, 2), 0.5, noise=0.1, seed=11)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_json_and_csv():
    sys = load_fixture("ntrans3d")
    g = pseudo_glued(sys, 1e-3)
    h = SampledPseudotrajectory.from_json(json.dumps(g.to_json()), g.flow)
    assert h.t0 == g.t0 and h.dt == g.dt and len(h) == len(g)
    np.testing.assert_array_equal(h.probe(g.times), g.probe(g.times))
    rows = g.to_csv().strip().splitlines()
    assert rows[0] == "t,x0,x1,x2" and len(rows) == len(g) + 1


@pytest.mark.parametrize("name", ["ntrans3d", "ntrans4d"])
def test_glued_structure(name):
    sys = load_fixture(name)
    fr = default_frame(sys)
    d = 1e-2
    g = pseudo_glued(sys, d)
    # g(tau) = a_p + d e_p
    k_tau = g.node_index(sys.tau)
    assert g.nodes[k_tau].chart == "P"
    np.testing.assert_array_equal(g.nodes[k_tau].coords, sys.a_p + d * fr.e_p)
    # the jump at 0 has size d
    left = g.flow.orbit(g.nodes[k_tau - int(sys.tau / g.dt) - 1], np.array([g.dt]))[0]
    right = g.probe(np.array([0.0]))[0]
    assert np.linalg.norm(left - right) == pytest.approx(d, rel=1e-12)


@pytest.mark.parametrize("name", ["ntrans3d", "ntrans4d"])
def test_glued_zero_d_is_orbit(name):
    sys = load_fixture(name)
    g = pseudo_glued(sys, 0.0)
    assert pseudo_defect(g.flow, g).d_hat <= 1e-9


@pytest.mark.parametrize("name", ["ntrans3d", "ntrans4d", "trans3d"])
def test_glued_defect_scales_linearly(name):
    sys = load_fixture(name)
    ratios = [pseudo_defect(pseudo_glued(sys, d).flow, pseudo_glued(sys, d)).d_hat / d for d in (1e-2, 1e-3, 1e-4)]
    assert max(ratios) / min(ratios) <= 1.05
    assert max(ratios) <= sys.meta["C1"]
    # frozen constant: the oracle value rounded up
    assert C1_ORACLE[name] <= sys.meta["C1"] <= 1.01 * C1_ORACLE[name]


def test_glued_window_must_fit():
    sys = load_fixture("ntrans3d")
    with pytest.raises(ChartRadiusError):
        pseudo_glued(sys, 1e-3, t_back=20.0)
    with pytest.raises(ValueError):
        pseudo_glued(sys, -1.0)


def test_jump_anchor_and_defect_decay():
    sys2 = load_fixture("sconn2d")
    jp = sys2.meta["jump"]
    defects = []
    for tau in (2.0, 4.0, 8.0, 16.0):
        g = pseudo_jump(sys2, jp["r"], jp["alpha"], tau, tau, 0.25)
        assert np.array_equal(g.nodes[-1].coords, jp["alpha"])
        assert g.t_end == 2 * tau
        defects.append(pseudo_defect(g.flow, g).d_hat)
    assert all(b <= a for a, b in zip(defects, defects[1:]))
    assert defects[2] <= 2e-3


def test_jump_preconditions():
    sys2 = load_fixture("sconn2d")
    with pytest.raises(ValueError):
        pseudo_jump(sys2, [0.25, 0.1], [0.0, 0.5], 8, 8)
    with pytest.raises(ValueError):
        pseudo_jump(sys2, [0.25, 0.0], [0.1, 0.5], 8, 8)


def test_exact_glued_orbit_defect():
    sys = load_fixture("ntrans3d")
    g = pseudo_from_orbit(GluedFlow(sys), ChartPoint(Q, sys.a_q), (-4.0, 9.0), 0.5)
    assert pseudo_defect(g.flow, g).d_hat <= 1e-9
