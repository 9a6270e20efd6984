"""Certified (T, d0) for a planar spiral source.

The closed-form candidate is validated by an adversary that builds trajectories meeting
the hypotheses and measures their angular deviation.  A deliberately short T fails.
"""

from __future__ import annotations

import math

from shadowlab.spiral import SPIRAL, cert_estimate, cert_search, cert_validate

a, b, eps, L = 1.0, 1.0, math.pi / 4, 2.0
T, d0 = cert_estimate(SPIRAL, a, b, eps, L)
print(f"candidate T = {T:.5f}, d0 = {d0:.6f}")

cert = cert_search(SPIRAL, a, b, eps, L, trials=20_000, seed=7)
print(f"validated on {cert.trials} trials: worst deviation {cert.worst:.4f} rad < eps = {eps:.4f}")

broken = cert_validate(SPIRAL, a, b, eps, L, 0.1, 0.1, trials=5_000, seed=7)
w = broken.worst
print(f"\nT = 0.1 fails: {broken.violations} violations, worst deviation {w.deviation:.3f} rad")
print(f"  witness x0 = {w.x0}, x1 = {w.x1}, d = {w.d:.3g}")
