"""No oriented shadowing across a planar saddle connection.

A pseudotrajectory follows W^u(q) and jumps off the connection.  Every candidate point on
a grid around the jump, under every sampled reparametrization, eventually leaves the
eps-tube: points on W^u(q) miss the jump target, the others escape backward.
"""

from __future__ import annotations

from shadowlab.hetero import load_fixture
from shadowlab.pseudo import pseudo_jump
from shadowlab.shadow import nosubset_feasibility

sys2 = load_fixture("sconn2d")
jp = sys2.meta["jump"]
g = pseudo_jump(sys2, jp["r"], jp["alpha"], 2.0, 2.0, 0.25)
cert = nosubset_feasibility(sys2, g, "auto", x_grid=40, h_grid=50, seed=0)
js = cert.to_json()
print(f"eps = {cert.eps:.4f} (bounds {cert.eps_bounds})")
print(f"feasible: {cert.feasible}")
print(f"{js['n_on_wu']} grid points on W^u(q) fail at t = {js['wu_fail_times']}")
print(
    f"{js['n_off_wu']} others fail at or before t = 0, "
    f"failure times in [{js['min_backward_fail_time']:.3f}, {js['max_backward_fail_time']:.3f}]"
)
print(f"every point matches the dichotomy: {cert.all_match}")
