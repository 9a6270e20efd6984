from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowlab.flow import (
    BlockLinearField,
    DimensionError,
    LinearFlow,
    NonFiniteField,
    Real1D,
    RK4Flow,
    Spiral2D,
    StepBudgetExceeded,
    VectorFieldFn,
    block_from_json,
    evolve_block,
    evolve_rk4,
)

from conftest import random_field


def test_zero_field_is_identity():
    f = BlockLinearField([Real1D(0.0), Real1D(0.0)])
    assert np.array_equal(evolve_block(f, 5.0, [1.0, 2.0]), [1.0, 2.0])


def test_real_block_closed_form():
    f = BlockLinearField([Real1D(1.0)])
    assert evolve_block(f, 1.0, [1.0])[0] == pytest.approx(math.e, rel=1e-15)


def test_quarter_turn():
    f = BlockLinearField([Spiral2D(0.0, math.pi / 2)])
    np.testing.assert_allclose(evolve_block(f, 1.0, [1.0, 0.0]), [0.0, 1.0], atol=1e-15)


def test_dimension_mismatch():
    f = BlockLinearField([Real1D(1.0), Spiral2D(1.0, 1.0)])
    with pytest.raises(DimensionError):
        evolve_block(f, 1.0, [1.0, 2.0])


def test_block_json_roundtrip():
    f = BlockLinearField([Real1D(-1.0), Spiral2D(0.5, 2.0)])
    g = BlockLinearField.from_json(f.to_json())
    assert g == f
    with pytest.raises(ValueError):
        block_from_json({"type": "spiral", "a": 1.0, "b": 0.0})
    with pytest.raises(ValueError):
        block_from_json({"type": "jordan"})


def test_matrix_matches_flow_derivative():
    f = BlockLinearField([Real1D(-0.3), Spiral2D(0.7, -1.9)])
    x = np.array([0.4, -1.0, 2.0])
    h = 1e-6
    fd = (evolve_block(f, h, x) - evolve_block(f, -h, x)) / (2 * h)
    np.testing.assert_allclose(fd, f.matrix() @ x, rtol=1e-8)
    assert f.spectral_radius() == pytest.approx(math.hypot(0.7, 1.9))


def test_group_law_1000():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        f = random_field(rng)
        x = rng.uniform(-10, 10, f.dim)
        s, t = rng.uniform(-5, 5, 2)
        lhs = evolve_block(f, s + t, x)
        rhs = evolve_block(f, s, evolve_block(f, t, x))
        rmax = max(abs(r) for r in f.real_parts)
        bound = 1e-10 * (1 + np.linalg.norm(x) * math.exp(rmax * abs(s + t)) * math.exp(rmax * (abs(s) + abs(t) - abs(s + t))))
        assert np.linalg.norm(lhs - rhs) <= bound


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(-3, 3),
    b=st.floats(0.01, 3),
    t=st.floats(-2, 2),
    x=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
)
def test_spiral_norm_growth(a, b, t, x):
    f = BlockLinearField([Spiral2D(a, b)])
    y = evolve_block(f, t, np.array(x))
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x) * math.exp(a * t), rel=1e-12, abs=1e-300)


def test_propagate_vectorized_matches_scalar(rng):
    f = random_field(rng)
    x = rng.normal(size=f.dim)
    ts = np.linspace(-2, 2, 9)
    out = f.propagate(ts, x)
    for t, row in zip(ts, out):
        np.testing.assert_allclose(row, evolve_block(f, t, x), rtol=1e-14, atol=1e-14)


def test_rk4_exp():
    vf = VectorFieldFn(lambda x: x, 1)
    assert evolve_rk4(vf, 1.0, [1.0], 1e-3)[0] == pytest.approx(math.e, abs=1e-9)


def test_rk4_t_zero_exact(rng):
    vf = VectorFieldFn(lambda x: np.sin(x) * 3.0, 3)
    x = rng.normal(size=3)
    assert np.array_equal(evolve_rk4(vf, 0.0, x), x)


def test_rk4_spiral():
    f = BlockLinearField([Spiral2D(1.0, 1.0)])
    y = evolve_rk4(f.as_vector_field(), 2.0, [1.0, 0.0], 1e-3)
    ref = evolve_block(f, 2.0, [1.0, 0.0])
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) < 1e-8


def test_rk4_shortened_last_step():
    vf = VectorFieldFn(lambda x: -x, 1)
    # 0.0105 is not a multiple of the step; the last step is shortened
    y = evolve_rk4(vf, 0.0105, [1.0], 1e-3)
    assert y[0] == pytest.approx(math.exp(-0.0105), abs=1e-14)
    y = evolve_rk4(vf, -0.0105, [1.0], 1e-3)
    assert y[0] == pytest.approx(math.exp(0.0105), abs=1e-14)


def test_rk4_errors():
    vf = VectorFieldFn(lambda x: x * x, 1)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteField):
        evolve_rk4(vf, 5.0, [10.0], 1e-2)
    with pytest.raises(StepBudgetExceeded):
        evolve_rk4(VectorFieldFn(lambda x: -x, 1), 10.0, [1.0], 1e-3, max_steps=100)
    with pytest.raises(ValueError):
        evolve_rk4(VectorFieldFn(lambda x: -x, 1), 1.0, [1.0], 0.0)


def test_rk4_batched_matches_scalar(rng):
    f = BlockLinearField([Spiral2D(-0.5, 2.0), Real1D(0.3)])
    vf = f.as_vector_field()
    batch = VectorFieldFn(lambda X: X @ f.matrix().T, 3)
    ts = np.array([0.0, 0.37, -1.2, 2.0])
    X = rng.normal(size=(4, 3))
    Y = evolve_rk4(batch, ts, X)
    for t, x, y in zip(ts, X, Y):
        np.testing.assert_allclose(y, evolve_rk4(vf, t, x), rtol=1e-13, atol=1e-14)


def test_rk4_deterministic(rng):
    vf = VectorFieldFn(lambda x: np.array([x[1], -np.sin(x[0])]), 2)
    a = evolve_rk4(vf, 3.3, [1.0, 0.0])
    b = evolve_rk4(vf, 3.3, [1.0, 0.0])
    assert np.array_equal(a, b)


def test_flow_adapters(rng):
    f = BlockLinearField([Real1D(-1.0), Spiral2D(0.2, 1.0)])
    x = rng.normal(size=3)
    lin = LinearFlow(f)
    rk = RK4Flow(f.as_vector_field())
    ts = np.array([-1.0, -0.25, 0.0, 0.5, 1.5])
    np.testing.assert_allclose(rk.orbit(x, ts), lin.orbit(x, ts), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(rk.evolve(0.7, x), lin.evolve(0.7, x), rtol=1e-9)
