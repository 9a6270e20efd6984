"""Numerical laboratory for pseudotrajectory shadowing in flows."""

from __future__ import annotations

__version__ = "0.1.0"

from .flow import (
    BlockLinearField,
    DimensionError,
    LinearFlow,
    NonFiniteField,
    OutOfDomain,
    Real1D,
    RK4Flow,
    Spiral2D,
    StepBudgetExceeded,
    VectorFieldFn,
    evolve_block,
    evolve_rk4,
)
from .glued import ChartPoint, GluedFlow, GluedHeteroclinicSystem, HyperbolicPointSpec, evolve_glued
from .repar import (
    PiecewiseLinearRepar,
    identity,
    rep_compose,
    rep_eval,
    rep_in_class,
    rep_invert,
    rep_min_class,
    rep_random,
)
from .pseudo import (
    SampledPseudotrajectory,
    pseudo_defect,
    pseudo_eval,
    pseudo_from_orbit,
    pseudo_glued,
    pseudo_jump,
)
from .hetero import (
    build_glued_system,
    load_fixture,
    obstruction_report,
    poincare,
    projections,
    select_obstruction_frame,
    tangent_spaces,
    transversality,
)
from .shadow import (
    NoSubsetCertificate,
    ShadowingResult,
    SweepTable,
    lipschitz_sweep,
    nosubset_feasibility,
    residual,
    shadow_search,
)
from .spiral import SpiralCertificate, cert_estimate, cert_search, cert_validate
