"""Lipschitz shadowing fails near a nontransversal heteroclinic connection.

A glued system connects a saddle q to a spiral saddle p.  The pseudotrajectory jumps by d
at the transit; the best shadowing candidate found stays far above L d, and the
obstruction frame explains why.  Budgets here are small; the acceptance run uses 64
starts with 2e4 evaluations each.
"""

from __future__ import annotations

from shadowlab.hetero import default_frame, load_fixture, transversality
from shadowlab.pseudo import pseudo_defect, pseudo_glued
from shadowlab.shadow import lipschitz_sweep

for name in ("ntrans3d", "trans3d"):
    sys = load_fixture(name)
    print(f"== {name}: {transversality(sys)}")
    g = pseudo_glued(sys, 1e-2, default_frame(sys))
    print(f"defect of the d = 1e-2 pseudotrajectory: {pseudo_defect(g.flow, g).d_hat:.4g}")
    table = lipschitz_sweep(sys, [5.0], [1e-2], starts=8, budget=2000, seed=0)
    for r in table.rows:
        print(f"L = {r.L:g}, d = {r.d:g}: best_eps = {r.best_eps:.4g} vs L d = {r.class_a:.4g} -> {r.verdict} ({r.obstruction_verdict})")
    print()
