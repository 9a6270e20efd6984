"""Flows of block-linear fields and a fixed-step RK4 integrator for general fields."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "Real1D",
    "Spiral2D",
    "Block",
    "BlockLinearField",
    "VectorFieldFn",
    "DimensionError",
    "NonFiniteField",
    "StepBudgetExceeded",
    "OutOfDomain",
    "evolve_block",
    "evolve_rk4",
    "LinearFlow",
    "RK4Flow",
    "MAX_STEPS",
]

MAX_STEPS = 10_000_000


class DimensionError(ValueError):
    pass


class NonFiniteField(ArithmeticError):
    pass


class StepBudgetExceeded(RuntimeError):
    pass


class OutOfDomain(RuntimeError):
    """A trajectory left every chart on which the flow is defined.

    ``time`` is the (signed) flow time at which the exit was detected, when known.
    """

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class Real1D:
    rate: float

    dim = 1

    def to_json(self) -> dict:
        return {"type": "real", "rate": float(self.rate)}


@dataclass(frozen=True)
class Spiral2D:
    a: float
    b: float

    dim = 2

    def __post_init__(self):
        if self.b == 0:
            raise ValueError("spiral block needs a nonzero angular rate b")

    def to_json(self) -> dict:
        return {"type": "spiral", "a": float(self.a), "b": float(self.b)}


Block = Union[Real1D, Spiral2D]


def block_from_json(obj: dict) -> Block:
    kind = obj.get("type")
    if kind == "real":
        return Real1D(float(obj["rate"]))
    if kind == "spiral":
        return Spiral2D(float(obj["a"]), float(obj["b"]))
    raise ValueError(f"unknown block type {kind!r}")


@dataclass(frozen=True)
class BlockLinearField:
    """Real block-diagonal linear field x' = M x.

    ``Real1D(rate)`` contributes a 1x1 block, ``Spiral2D(a, b)`` the block
    ``[[a, -b], [b, a]]``.
    """

    blocks: tuple[Block, ...]

    def __init__(self, blocks: Sequence[Block]):
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    @property
    def offsets(self) -> list[int]:
        out, k = [], 0
        for b in self.blocks:
            out.append(k)
            k += b.dim
        return out

    @property
    def real_parts(self) -> list[float]:
        return [b.rate if isinstance(b, Real1D) else b.a for b in self.blocks]

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        for k, b in zip(self.offsets, self.blocks):
            if isinstance(b, Real1D):
                m[k, k] = b.rate
            else:
                m[k : k + 2, k : k + 2] = [[b.a, -b.b], [b.b, b.a]]
        return m

    def spectral_radius(self) -> float:
        if not self.blocks:
            return 0.0
        return max(abs(b.rate) if isinstance(b, Real1D) else math.hypot(b.a, b.b) for b in self.blocks)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix() @ np.asarray(x, dtype=float)

    def as_vector_field(self) -> "VectorFieldFn":
        m = self.matrix()
        return VectorFieldFn(lambda x: m @ x, self.dim)

    def propagate(self, t, x) -> np.ndarray:
        """Vectorized flow: ``t`` of shape S, ``x`` of shape S+(n,) or (n,)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point has dimension {x.shape[-1]}, field has {self.dim}")
        out = np.empty(np.broadcast_shapes(t.shape + (self.dim,), x.shape))
        for k, b in zip(self.offsets, self.blocks):
            if isinstance(b, Real1D):
                out[..., k] = x[..., k] * np.exp(b.rate * t)
            else:
                g = np.exp(b.a * t)
                c, s = np.cos(b.b * t), np.sin(b.b * t)
                x1, x2 = x[..., k], x[..., k + 1]
                out[..., k] = g * (c * x1 - s * x2)
                out[..., k + 1] = g * (s * x1 + c * x2)
        return out

    def norm_sq_coeffs(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """|phi(t, x)|^2 = sum_k w_k exp(2 r_k t); returns (w, r)."""
        x = np.asarray(x, dtype=float)
        w, r = [], []
        for k, b in zip(self.offsets, self.blocks):
            w.append(float(np.sum(x[k : k + b.dim] ** 2)))
            r.append(b.rate if isinstance(b, Real1D) else b.a)
        return np.array(w), np.array(r)

    def to_json(self) -> list[dict]:
        return [b.to_json() for b in self.blocks]

    @classmethod
    def from_json(cls, blocks: list[dict]) -> "BlockLinearField":
        return cls([block_from_json(b) for b in blocks])


@dataclass(frozen=True)
class VectorFieldFn:
    fn: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


def evolve_block(field: BlockLinearField, t: float, x) -> np.ndarray:
    """Exact flow of a block-linear field."""
    x = np.asarray(x, dtype=float)
    if x.shape != (field.dim,):
        raise DimensionError(f"expected a point of dimension {field.dim}, got shape {x.shape}")
    return field.propagate(float(t), x)


def _rk_step(field, y, hs):
    k1 = field(y)
    k2 = field(y + 0.5 * hs * k1)
    k3 = field(y + 0.5 * hs * k2)
    k4 = field(y + hs * k3)
    return y + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _split_time(t, step: float):
    n_full = np.floor(np.abs(t) / step)
    rest = np.abs(t) - n_full * step
    rest = np.where(rest <= 1e-12 * step, 0.0, rest)
    return n_full.astype(np.int64), rest


def evolve_rk4(field, t, x, step: float = 1e-3, max_steps: int = MAX_STEPS) -> np.ndarray:
    """Classical RK4 with fixed step; the last step is shortened to land on ``t``.

    With an array ``t`` the states ``x`` have shape ``t.shape + (n,)`` and are stepped
    together; ``field`` must then act row-wise on stacked states.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("t must be finite")
    if t_arr.ndim and x.shape[:-1] != t_arr.shape:
        raise DimensionError(f"states of shape {x.shape} do not match times of shape {t_arr.shape}")
    n_full, rest = _split_time(t_arr, step)
    if np.any(n_full + (rest > 0) > max_steps):
        raise StepBudgetExceeded(f"|t|/step = {float(np.max(np.abs(t_arr))) / step:.3g} exceeds {max_steps} steps")
    sign = np.where(t_arr >= 0, 1.0, -1.0)
    if t_arr.ndim == 0:
        if t_arr == 0:
            return x
        hs = float(sign) * step
        for k in range(int(n_full)):
            x = _rk_step(field, x, hs)
            if k % 256 == 255 and not np.all(np.isfinite(x)):
                raise NonFiniteField("non-finite state during RK4 integration")
        if rest > 0:
            x = _rk_step(field, x, float(sign * rest))
    else:
        hs = (sign * step)[..., None]
        for k in range(int(n_full.max(initial=0))):
            x = np.where((k < n_full)[..., None], _rk_step(field, x, hs), x)
            if k % 256 == 255 and not np.all(np.isfinite(x)):
                raise NonFiniteField("non-finite state during RK4 integration")
        if np.any(rest > 0):
            x = np.where((rest > 0)[..., None], _rk_step(field, x, (sign * rest)[..., None]), x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteField("non-finite state during RK4 integration")
    return x


class LinearFlow:
    """Flow adapter over a :class:`BlockLinearField` (states are plain arrays)."""

    def __init__(self, field: BlockLinearField):
        self.field = field
        self.dim = field.dim

    def evolve(self, t: float, x) -> np.ndarray:
        return evolve_block(self.field, t, x)

    def embed(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def orbit(self, x, times) -> np.ndarray:
        return self.field.propagate(np.asarray(times, dtype=float), np.asarray(x, dtype=float))


class RK4Flow:
    """Flow adapter over a general field; orbits are integrated through sorted times."""

    def __init__(self, field: VectorFieldFn, step: float = 1e-3, domain_radius: float = math.inf):
        self.field = field
        self.dim = field.dim
        self.step = step
        self.domain_radius = domain_radius

    def evolve(self, t: float, x) -> np.ndarray:
        y = evolve_rk4(self.field, t, x, self.step)
        if np.linalg.norm(y) > self.domain_radius:
            raise OutOfDomain("RK4 trajectory left the domain ball", t)
        return y

    def embed(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def orbit(self, x, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        out = np.full(times.shape + (self.dim,), np.nan)
        x = np.asarray(x, dtype=float)
        for sign in (1.0, -1.0):
            idx = np.flatnonzero(times >= 0) if sign > 0 else np.flatnonzero(times < 0)
            if idx.size == 0:
                continue
            order = idx[np.argsort(sign * times[idx])]
            y, now = x.copy(), 0.0
            for i in order:
                try:
                    y = evolve_rk4(self.field, times[i] - now, y, self.step)
                except (NonFiniteField, StepBudgetExceeded):
                    break
                now = times[i]
                if np.linalg.norm(y) > self.domain_radius:
                    break
                out[i] = y
        return out
