"""Piecewise-linear reparametrizations of the time axis and the classes Rep(a)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PiecewiseLinearRepar",
    "identity",
    "rep_eval",
    "rep_min_class",
    "rep_in_class",
    "rep_compose",
    "rep_invert",
    "rep_random",
    "MIN_SLOPE",
]

MIN_SLOPE = 1e-6
CLASS_TOL = 1e-12


@dataclass(frozen=True)
class PiecewiseLinearRepar:
    """Increasing piecewise-linear h with h(0) = 0.

    ``slopes[k]`` applies on ``[breakpoints[k], breakpoints[k+1]]``; the first and
    last slopes extend to -inf and +inf.  A single breakpoint (which must be 0)
    carries a single slope: a straight line through the origin.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray

    def __init__(self, breakpoints, slopes):
        bp = np.array(breakpoints, dtype=float).ravel()
        sl = np.array(slopes, dtype=float).ravel()
        if bp.size == 0 or not np.any(bp == 0.0):
            raise ValueError("breakpoints must contain 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if sl.size != max(1, bp.size - 1):
            raise ValueError(f"expected {max(1, bp.size - 1)} slopes, got {sl.size}")
        if np.any(~np.isfinite(sl)) or np.any(sl <= 0):
            raise ValueError("slopes must be positive and finite")
        bp.setflags(write=False)
        sl.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "_values", self._cumulative())

    def _cumulative(self) -> np.ndarray:
        bp, sl = self.breakpoints, self.slopes
        if bp.size == 1:
            return np.zeros(1)
        inc = np.diff(bp) * sl
        vals = np.concatenate([[0.0], np.cumsum(inc)])
        k0 = int(np.flatnonzero(bp == 0.0)[0])
        vals = vals - vals[k0]
        vals[k0] = 0.0
        vals.setflags(write=False)
        return vals

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __call__(self, t):
        return rep_eval(self, t)

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "slopes": self.slopes.tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj) -> "PiecewiseLinearRepar":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(obj["breakpoints"], obj["slopes"])

    @classmethod
    def line(cls, slope: float = 1.0) -> "PiecewiseLinearRepar":
        return cls([0.0], [slope])


def identity() -> PiecewiseLinearRepar:
    return PiecewiseLinearRepar.line(1.0)


def rep_eval(h: PiecewiseLinearRepar, t):
    t_arr = np.asarray(t, dtype=float)
    bp, vals, sl = h.breakpoints, h.values, h.slopes
    out = np.interp(t_arr, bp, vals)
    lo = t_arr < bp[0]
    hi = t_arr > bp[-1]
    out = np.where(lo, vals[0] + sl[0] * (t_arr - bp[0]), out)
    out = np.where(hi, vals[-1] + sl[-1] * (t_arr - bp[-1]), out)
    out = np.where(t_arr == 0.0, 0.0, out)
    return float(out) if np.ndim(t) == 0 else out


def rep_min_class(h: PiecewiseLinearRepar) -> float:
    # every chord slope is a convex combination of segment slopes
    return float(np.max(np.abs(h.slopes - 1.0)))


def rep_in_class(h: PiecewiseLinearRepar, a: float) -> bool:
    return rep_min_class(h) <= a + CLASS_TOL


def _slope_at(h: PiecewiseLinearRepar, t: np.ndarray) -> np.ndarray:
    """Slope of the segment containing each t (t away from breakpoints)."""
    if h.breakpoints.size == 1:
        return np.full(np.shape(t), h.slopes[0])
    k = np.searchsorted(h.breakpoints, t, side="right") - 1
    k = np.clip(k, 0, h.slopes.size - 1)
    return h.slopes[k]


def _from_points(bp: np.ndarray, slopes: np.ndarray) -> PiecewiseLinearRepar:
    if bp.size == 1:
        return PiecewiseLinearRepar(bp, slopes[:1])
    return PiecewiseLinearRepar(bp, slopes)


def rep_compose(h1: PiecewiseLinearRepar, h2: PiecewiseLinearRepar) -> PiecewiseLinearRepar:
    """t -> h1(h2(t))."""
    inv2 = rep_invert(h2)
    bp = np.union1d(h2.breakpoints, rep_eval(inv2, h1.breakpoints))
    bp = np.union1d(bp, [0.0])
    bp = _dedupe(bp)
    if bp.size == 1:
        return PiecewiseLinearRepar([0.0], [h1.slopes[0] * h2.slopes[0]])
    mid = 0.5 * (bp[:-1] + bp[1:])
    slopes = _slope_at(h1, rep_eval(h2, mid)) * _slope_at(h2, mid)
    return _from_points(bp, slopes)


def rep_invert(h: PiecewiseLinearRepar) -> PiecewiseLinearRepar:
    if h.breakpoints.size == 1:
        return PiecewiseLinearRepar([0.0], [1.0 / h.slopes[0]])
    return PiecewiseLinearRepar(h.values, 1.0 / h.slopes)


def _dedupe(bp: np.ndarray) -> np.ndarray:
    # merged breakpoints closer than roundoff are collapsed, keeping 0 exact
    keep = [bp[0]]
    for b in bp[1:]:
        if b - keep[-1] > 1e-12 * max(1.0, abs(b)):
            keep.append(b)
        elif b == 0.0:
            keep[-1] = 0.0
    return np.array(keep)


def rep_random(a: float, window: tuple[float, float], grid: float, seed) -> PiecewiseLinearRepar:
    """Random member of Rep(a): uniform slopes on a grid through 0 covering ``window``."""
    if a < 0:
        raise ValueError("class bound must be nonnegative")
    if not grid > 0:
        raise ValueError("grid step must be positive")
    lo, hi = window
    k_lo = int(np.floor(min(lo, 0.0) / grid))
    k_hi = int(np.ceil(max(hi, 0.0) / grid))
    k_hi = max(k_hi, k_lo + 1)
    bp = np.arange(k_lo, k_hi + 1) * grid
    rng = np.random.default_rng(seed)
    slopes = rng.uniform(1.0 - a, 1.0 + a, size=bp.size - 1)
    slopes = np.maximum(slopes, MIN_SLOPE)
    return PiecewiseLinearRepar(bp, slopes)
