"""Analytic geometry of unrotated superquadrics.

A superquadric solid is the point set where the inside-outside function

    F(p) = ((|x-x0|/a1)^(2/eps2) + (|y-y0|/a2)^(2/eps2))^(eps2/eps1)
           + (|z-z0|/a3)^(2/eps1)

is at most 1.  F equals 1 exactly on the surface, falls below 1 inside
and exceeds 1 outside.  Half-extents ``a1, a2, a3`` and the centre
``(x0, y0, z0)`` are in scene units (grid cells); the shape exponents
``eps1, eps2`` live in [0.01, 1], which keeps every body convex and
inscribed in its axis-aligned bounding box.

All bases are taken as absolute values before exponentiation (the
exponents derive from even powers, so the sign carries no information)
and bases below 1e-12 are flushed to zero before being raised to the
potentially large power 2/eps, which avoids overflow/underflow noise.
Everything here is a pure function of its arguments and safe to call
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np

EPS_MIN = 0.01
EPS_MAX = 1.0

# Bases smaller than this are treated as exactly zero before raising to
# 2/eps (up to 200): below it the power underflows anyway.
_BASE_FLUSH = 1e-12


@dataclass(frozen=True)
class Superquadric:
    """An unrotated superquadric: three half-extents, two shape exponents
    and a centre, in scene units."""

    a1: float
    a2: float
    a3: float
    eps1: float
    eps2: float
    x0: float
    y0: float
    z0: float

    PARAM_NAMES: ClassVar[tuple[str, ...]] = (
        "a1", "a2", "a3", "eps1", "eps2", "x0", "y0", "z0",
    )

    def validate(self) -> None:
        """Raise ValueError unless all invariants hold (positive finite
        sizes, exponents in [0.01, 1], finite centre)."""
        for name in ("a1", "a2", "a3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and EPS_MIN <= v <= EPS_MAX):
                raise ValueError(
                    f"{name} must lie in [{EPS_MIN}, {EPS_MAX}], got {v}"
                )
        for name in ("x0", "y0", "z0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        """Parameters as a float64 vector ordered like PARAM_NAMES."""
        return np.array(
            [self.a1, self.a2, self.a3, self.eps1, self.eps2,
             self.x0, self.y0, self.z0],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, params: Sequence[float]) -> "Superquadric":
        vals = [float(v) for v in params]
        if len(vals) != 8:
            raise ValueError(f"expected 8 parameters, got {len(vals)}")
        return cls(*vals)

    @property
    def center(self) -> tuple[float, float, float]:
        return (self.x0, self.y0, self.z0)


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned box given by its min and max corners, scene units."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def validate(self) -> None:
        for lo, hi in zip(self.min_corner, self.max_corner):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid box extent [{lo}, {hi}]")

    @property
    def volume(self) -> float:
        return math.prod(
            hi - lo for lo, hi in zip(self.min_corner, self.max_corner)
        )

    def contains(self, box: "Aabb3") -> bool:
        return all(
            slo <= olo and ohi <= shi
            for slo, shi, olo, ohi in zip(
                self.min_corner, self.max_corner,
                box.min_corner, box.max_corner,
            )
        )


@dataclass(frozen=True)
class SceneBounds:
    """Extents of the scene grid in cells; x/y map to image width/height
    and z is depth along the viewing axis."""

    width: int = 256
    height: int = 256
    depth: int = 256

    def validate(self) -> None:
        for name in ("width", "height", "depth"):
            v = getattr(self, name)
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")

    def as_box(self) -> Aabb3:
        return Aabb3(
            (0.0, 0.0, 0.0),
            (float(self.width), float(self.height), float(self.depth)),
        )


def _flushed_abs(values: np.ndarray) -> np.ndarray:
    a = np.abs(values)
    return np.where(a < _BASE_FLUSH, 0.0, a)


def inside_outside(sq: Superquadric, points) -> np.ndarray | float:
    """Evaluate the inside-outside function F at one point or an array
    of points with shape (..., 3).

    Returns F >= 0: exactly 1 on the surface, < 1 strictly inside,
    > 1 strictly outside.  Scalars in, scalar out.
    """
    p = np.asarray(points, dtype=np.float64)
    scalar = p.ndim == 1
    gx = _flushed_abs(p[..., 0] - sq.x0) / sq.a1
    gy = _flushed_abs(p[..., 1] - sq.y0) / sq.a2
    gz = _flushed_abs(p[..., 2] - sq.z0) / sq.a3
    with np.errstate(over="ignore"):
        gsum = gx ** (2.0 / sq.eps2) + gy ** (2.0 / sq.eps2)
        f = gsum ** (sq.eps2 / sq.eps1) + gz ** (2.0 / sq.eps1)
    return float(f) if scalar else f


def surface_z_profile(
    sq: Superquadric, x, y
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised z-extent of the solid along vertical rays.

    For scene coordinates (x, y) let
    g = ((|x-x0|/a1)^(2/eps2) + (|y-y0|/a2)^(2/eps2))^(eps2/eps1).
    Where g <= 1 the ray crosses the solid between
    z0 - a3*(1-g)^(eps1/2) and z0 + a3*(1-g)^(eps1/2).

    Returns arrays (z_low, z_high, hit); z values are meaningless where
    hit is False.  g exactly 1 yields the degenerate pair (z0, z0), so
    grazing rays still count as hits.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    gx = _flushed_abs(xa - sq.x0) / sq.a1
    gy = _flushed_abs(ya - sq.y0) / sq.a2
    with np.errstate(over="ignore"):
        gsum = gx ** (2.0 / sq.eps2) + gy ** (2.0 / sq.eps2)
        g = gsum ** (sq.eps2 / sq.eps1)
    hit = g <= 1.0
    half = sq.a3 * np.clip(1.0 - g, 0.0, None) ** (sq.eps1 / 2.0)
    return sq.z0 - half, sq.z0 + half, hit


def surface_z_extent(
    sq: Superquadric, x: float, y: float
) -> tuple[float, float] | None:
    """z-interval of the solid along the vertical ray at (x, y), or None
    when the ray misses it entirely."""
    z_lo, z_hi, hit = surface_z_profile(sq, x, y)
    if not bool(hit):
        return None
    return float(z_lo), float(z_hi)


def bounding_box(sq: Superquadric) -> Aabb3:
    """Tight axis-aligned bounding box; with eps <= 1 the whole surface
    is inscribed in it."""
    return Aabb3(
        (sq.x0 - sq.a1, sq.y0 - sq.a2, sq.z0 - sq.a3),
        (sq.x0 + sq.a1, sq.y0 + sq.a2, sq.z0 + sq.a3),
    )


def aabb_iou(a: Aabb3, b: Aabb3) -> float:
    """Intersection-over-union of two boxes by volume, in [0, 1]:
    exactly 1 for identical boxes, 0 for disjoint interiors."""
    inter = 1.0
    for lo_a, hi_a, lo_b, hi_b in zip(
        a.min_corner, a.max_corner, b.min_corner, b.max_corner
    ):
        overlap = min(hi_a, hi_b) - max(lo_a, lo_b)
        if overlap <= 0.0:
            return 0.0
        inter *= overlap
    return inter / (a.volume + b.volume - inter)
