"""Linear block flows, RK4, and reparametrization classes.

A block-diagonal linear field is integrated in closed form; RK4 is checked against it.
Then a random reparametrization is built and its distortion class measured.
"""

from __future__ import annotations

import numpy as np

from shadowlab.flow import BlockLinearField, Real1D, Spiral2D, evolve_block, evolve_rk4
from shadowlab.repar import rep_compose, rep_invert, rep_min_class, rep_random

field = BlockLinearField([Real1D(-1.0), Spiral2D(0.2, 2.0)])
x = np.array([1.0, 0.5, 0.0])
exact = evolve_block(field, 3.0, x)
approx = evolve_rk4(field.as_vector_field(), 3.0, x, 1e-3)
print("closed form :", exact)
print("RK4         :", approx)
print("relative err:", np.linalg.norm(approx - exact) / np.linalg.norm(exact))

h1 = rep_random(0.3, (-5, 5), 0.5, seed=1)
h2 = rep_random(0.2, (-5, 5), 0.5, seed=2)
a1, a2 = rep_min_class(h1), rep_min_class(h2)
print(f"\nclass of h1 = {a1:.4f}, class of h2 = {a2:.4f}")
print(f"class of h1 o h2 = {rep_min_class(rep_compose(h1, h2)):.4f} <= {a1 + a2 + a1 * a2:.4f}")
print(f"class of h1^-1   = {rep_min_class(rep_invert(h1)):.4f} <= {a1 / (1 - a1):.4f}")
