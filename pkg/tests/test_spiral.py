from __future__ import annotations

import math

import numpy as np
import pytest

from shadowlab.repar import PiecewiseLinearRepar, identity
from shadowlab.spiral import (
    LINE,
    SPIRAL,
    CertificationFailed,
    SpiralCertificate,
    cert_estimate,
    cert_search,
    cert_validate,
    check_hypotheses,
    deviation,
)


def test_estimate_values():
    T, d0 = cert_estimate(SPIRAL, 1.0, 1.0, math.pi / 4, 2.0)
    assert T == pytest.approx(math.log(64 / math.pi) + 1.0, rel=1e-15)
    assert T == pytest.approx(4.01415, abs=1e-5)
    assert d0 == pytest.approx(0.0061143, abs=1e-7)
    T, d0 = cert_estimate(LINE, 1.0, 0.5, 1.0, 1.0)
    assert T == pytest.approx(math.log(8) + 1.0)
    assert d0 == pytest.approx(1 / (8 * T))
    # eps is capped at 1 inside the log
    assert cert_estimate(LINE, 1.0, 0.0, 3.0, 1.0)[0] == pytest.approx(math.log(8) + 1.0)


def test_estimate_monotone():
    base = cert_estimate(SPIRAL, 1.0, 1.0, 0.5, 2.0)
    smaller_eps = cert_estimate(SPIRAL, 1.0, 1.0, 0.25, 2.0)
    faster = cert_estimate(SPIRAL, 2.0, 1.0, 0.5, 2.0)
    assert smaller_eps[0] > base[0] and smaller_eps[1] < base[1]
    assert faster[0] < base[0]
    assert cert_estimate(SPIRAL, 1.0, 3.0, 0.5, 2.0)[1] < base[1]


def test_parameter_errors():
    with pytest.raises(ValueError):
        cert_estimate(SPIRAL, -1.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        cert_estimate(SPIRAL, 0.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        cert_estimate(SPIRAL, 1.0, 0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        cert_estimate(SPIRAL, 1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        cert_estimate("torus", 1.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        cert_validate(LINE, 1.0, 0.0, 0.5, 1.0, -1.0, 0.1, trials=10)


def test_deviation_metric():
    assert deviation(SPIRAL, [1.0, 0.0], [0.0, 2.0]) == pytest.approx(math.pi / 2)
    assert deviation(SPIRAL, [1.0, 0.0], [-1.0, 1e-300]) == pytest.approx(math.pi)
    assert deviation(LINE, [2.0], [3.0]) == 0.5
    rng = np.random.default_rng(0)
    for _ in range(50):
        x0, x1 = rng.normal(size=2), rng.normal(size=2)
        c = float(rng.uniform(0.1, 10))
        assert deviation(SPIRAL, c * x0, c * x1) == pytest.approx(deviation(SPIRAL, x0, x1), abs=1e-14)
        assert deviation(SPIRAL, x0, x1) == pytest.approx(deviation(SPIRAL, x1, x0), abs=1e-14)


def test_identity_trial_is_admissible_with_zero_deviation():
    T, d0 = cert_estimate(SPIRAL, 1.0, 1.0, math.pi / 4, 2.0)
    x0 = np.array([0.5 * d0, 0.0])
    ok, res = check_hypotheses(SPIRAL, 1.0, 1.0, 2.0, T, d0, 0.5 * d0, x0, x0, identity())
    assert ok and res == 0.0
    assert deviation(SPIRAL, x0, x0) == 0.0


def test_hypotheses_reject_out_of_class():
    T, d0 = cert_estimate(LINE, 1.0, 0.0, 1.0, 1.0)
    d = 0.5 * d0
    x0 = np.array([d])
    h = PiecewiseLinearRepar([0.0], [1.0 + 3.0 * d])
    assert not check_hypotheses(LINE, 1.0, 0.0, 1.0, T, d0, d, x0, x0, h)[0]
    # d must be below d0 and |x0| at least d
    assert not check_hypotheses(LINE, 1.0, 0.0, 1.0, T, d0, d0, np.array([d0]), np.array([d0]), identity())[0]
    assert not check_hypotheses(LINE, 1.0, 0.0, 1.0, T, d0, d, np.array([0.5 * d]), np.array([0.5 * d]), identity())[0]


@pytest.mark.parametrize("kind,a,b,eps,L", [(LINE, 1.0, 0.0, 0.5, 1.0), (SPIRAL, 1.0, 1.0, math.pi / 4, 2.0)])
def test_validate_worst_record_is_admissible(kind, a, b, eps, L):
    T, d0 = cert_estimate(kind, a, b, eps, L)
    res = cert_validate(kind, a, b, eps, L, T, d0, trials=2000, seed=3)
    assert res.passed and res.admissible == 2000 and res.violations == 0
    w = res.worst
    h = PiecewiseLinearRepar.from_json(w.h)
    ok, resid = check_hypotheses(kind, a, b, L, T, d0, w.d, np.array(w.x0), np.array(w.x1), h)
    assert ok
    assert resid == pytest.approx(w.residual, rel=1e-6)
    assert deviation(kind, w.x0, w.x1) == pytest.approx(w.deviation, rel=1e-9, abs=1e-12)
    # the adversary is not trivial
    assert w.deviation > 0.01


def test_validate_deterministic():
    T, d0 = cert_estimate(LINE, 1.0, 0.0, 0.5, 1.0)
    a = cert_validate(LINE, 1.0, 0.0, 0.5, 1.0, T, d0, trials=500, seed=9)
    b = cert_validate(LINE, 1.0, 0.0, 0.5, 1.0, T, d0, trials=500, seed=9)
    assert a == b


def test_broken_candidate_fails():
    res = cert_validate(SPIRAL, 1.0, 1.0, math.pi / 4, 2.0, 0.1, 0.1, trials=500, seed=0)
    assert not res.passed and res.violations > 0
    assert res.worst.deviation >= math.pi / 4


def test_search_line():
    cert = cert_search(LINE, 1.0, 0.0, 0.5, 1.0, trials=1000, seed=1)
    assert isinstance(cert, SpiralCertificate)
    assert cert.escalations == 0 and cert.worst < 0.5
    js = cert.to_json()
    assert js["kind"] == LINE and js["trials"] == 1000 and js["worst_record"]["trial"] >= 0


def test_search_gives_up(monkeypatch):
    import shadowlab.spiral as sp

    monkeypatch.setattr(sp, "MAX_ESCALATIONS", 0)
    monkeypatch.setattr(sp, "cert_estimate", lambda *args: (0.1, 0.1))
    with pytest.raises(CertificationFailed) as exc:
        sp.cert_search(SPIRAL, 1.0, 1.0, math.pi / 4, 2.0, trials=200)
    assert exc.value.worst.deviation >= math.pi / 4
