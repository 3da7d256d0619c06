"""Range-image rendering of superquadric scenes.

The viewer sits at z = +infinity looking along -z, so a larger surface
z-coordinate is closer to the camera.  Pixel (i, j) samples the scene at
(x, y) = (i + 0.5, j + 0.5) and stores the z-coordinate of the closest
visible surface directly (no remapping); rasters are indexed [j, i],
i.e. row-major with i along x.  Background pixels carry exactly 0.0 in
the depth raster and id 0 in the paired instance-mask raster.

`render` inverts the surface equation along each vertical ray in closed
form.  `render_bruteforce` instead marches the inside-outside function
down a fixed z grid; it is orders of magnitude slower and exists purely
to cross-check the closed-form path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Superquadric, SceneBounds, inside_outside, surface_z_profile


@dataclass(frozen=True)
class Scene:
    """An ordered collection of superquadrics inside a scene grid.

    Instance ids in rendered masks are 1-based positions in
    `superquadrics`.  `seed` records the RNG seed the sampler used to
    build the scene (0 for hand-built scenes).
    """

    superquadrics: tuple[Superquadric, ...]
    bounds: SceneBounds = field(default_factory=SceneBounds)
    seed: int = 0

    def validate(self) -> None:
        self.bounds.validate()
        if len(self.superquadrics) < 1:
            raise ValueError("scene must contain at least one superquadric")
        for sq in self.superquadrics:
            sq.validate()


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Depth raster, float32, shape (height, width), 0.0 = background."""

    depth: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def foreground(self) -> np.ndarray:
        return self.depth != 0.0


@dataclass(frozen=True, eq=False)
class InstanceMaskImage:
    """Instance-id raster, uint16, shape (height, width), 0 = background,
    k = k-th superquadric in scene order."""

    ids: np.ndarray

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def instance_ids(self) -> list[int]:
        """Sorted ids present in the raster, background excluded."""
        present = np.unique(self.ids)
        return [int(k) for k in present if k != 0]

    def mask_for(self, k: int) -> np.ndarray:
        return self.ids == np.uint16(k)


def _pixel_window(lo: float, hi: float, size: int) -> tuple[int, int]:
    """Range of pixel indices whose centers fall in [lo, hi], clipped to
    the raster; returns (first, last_exclusive), possibly empty."""
    first = max(0, math.ceil(lo - 0.5))
    last = min(size - 1, math.floor(hi - 0.5))
    return first, last + 1


def _rotation_matrix(angles_deg: tuple[float, float, float]) -> np.ndarray:
    rx, ry, rz = (math.radians(a) for a in angles_deg)
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def render(
    scene: Scene,
    *,
    frame_rotation: tuple[float, float, float] | None = None,
    z_step: float = 0.05,
) -> tuple[RangeImage, InstanceMaskImage]:
    """Render a scene into a depth raster and an instance-mask raster.

    Each pixel holds the largest surface z among the instances its ray
    crosses (ties keep the earlier instance) and the id of that
    instance.  Bodies are clipped to the grid volume: surface points
    above bounds.depth register at bounds.depth while the solid still
    covers the ray, and bodies entirely outside [0, depth] vanish.
    The output is a pure function of the scene, bit-identical across
    runs.

    `frame_rotation` (degrees about x, y, z through the grid centre)
    optionally pre-rotates the whole scene frame before the orthographic
    projection, emulating an axonometric viewpoint.  It is off by
    default, and the rotated path falls back to ray marching with
    `z_step` resolution, so it is far slower and meant for visualisation
    only; ground-truth parameters stay in the unrotated frame.
    """
    scene.validate()
    if frame_rotation is not None:
        depth, ids = _march_scene(scene, z_step, _rotation_matrix(frame_rotation))
        return RangeImage(depth), InstanceMaskImage(ids)

    bounds = scene.bounds
    w, h, d = bounds.width, bounds.height, float(bounds.depth)
    best = np.zeros((h, w), dtype=np.float64)
    ids = np.zeros((h, w), dtype=np.uint16)
    for k, sq in enumerate(scene.superquadrics, start=1):
        i0, i1 = _pixel_window(sq.x0 - sq.a1, sq.x0 + sq.a1, w)
        j0, j1 = _pixel_window(sq.y0 - sq.a2, sq.y0 + sq.a2, h)
        if i0 >= i1 or j0 >= j1:
            continue
        xs = np.arange(i0, i1, dtype=np.float64) + 0.5
        ys = np.arange(j0, j1, dtype=np.float64) + 0.5
        z_lo, z_hi, hit = surface_z_profile(sq, xs[None, :], ys[:, None])
        # Clip to the grid volume: a top surface above the grid shows at
        # the grid ceiling as long as the solid still crosses it, and
        # anything entirely outside [0, depth] is invisible.
        z_vis = np.where(z_hi <= d, z_hi, np.where(z_lo <= d, d, 0.0))
        hit &= z_vis > 0.0
        sub = (slice(j0, j1), slice(i0, i1))
        better = hit & (z_vis > best[sub])
        best[sub][better] = z_vis[better]
        ids[sub][better] = k
    return RangeImage(best.astype(np.float32)), InstanceMaskImage(ids)


def render_bruteforce(scene: Scene, z_step: float = 0.05) -> RangeImage:
    """Slow verification renderer.

    For each pixel, walk the global z grid {depth - m*z_step} downwards
    and report the first z where any instance's inside-outside function
    is <= 1.  Never evaluates the closed-form surface inversion, so it
    serves as an independent oracle for `render`: the two agree within
    z_step (+ float slack) wherever both see a surface, and their
    background sets differ only on silhouette slivers thinner than the
    grid.  Accepts empty scenes (all-background result).
    """
    if z_step <= 0.0:
        raise ValueError(f"z_step must be > 0, got {z_step}")
    depth, _ = _march_scene(scene, z_step, rotation=None)
    return RangeImage(depth)


def _march_scene(
    scene: Scene, z_step: float, rotation: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """March the global z grid for every instance; returns (depth, ids).

    With `rotation` set, sample points are rotated back into the scene
    frame before evaluating the inside-outside function (the bodies stay
    convex, so the ray still crosses each solid in one interval and the
    first grid hit from above is the visible surface).
    """
    bounds = scene.bounds
    w, h, d = bounds.width, bounds.height, float(bounds.depth)
    best = np.zeros((h, w), dtype=np.float64)
    ids = np.zeros((h, w), dtype=np.uint16)
    center = np.array([w / 2.0, h / 2.0, d / 2.0])
    for k, sq in enumerate(scene.superquadrics, start=1):
        if rotation is None:
            x_lo, x_hi = sq.x0 - sq.a1, sq.x0 + sq.a1
            y_lo, y_hi = sq.y0 - sq.a2, sq.y0 + sq.a2
            z_lo, z_hi = sq.z0 - sq.a3, sq.z0 + sq.a3
        else:
            corners = np.array([
                [sq.x0 + sx * sq.a1, sq.y0 + sy * sq.a2, sq.z0 + sz * sq.a3]
                for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
            ])
            rotated = (corners - center) @ rotation.T + center
            x_lo, y_lo, z_lo = rotated.min(axis=0)
            x_hi, y_hi, z_hi = rotated.max(axis=0)
        i0, i1 = _pixel_window(x_lo, x_hi, w)
        j0, j1 = _pixel_window(y_lo, y_hi, h)
        if i0 >= i1 or j0 >= j1:
            continue
        xs = np.arange(i0, i1, dtype=np.float64) + 0.5
        ys = np.arange(j0, j1, dtype=np.float64) + 0.5
        grid_x, grid_y = np.meshgrid(xs, ys)
        px = grid_x.ravel()
        py = grid_y.ravel()
        hit_z = _march_instance(
            sq, px, py, z_lo, z_hi, d, z_step, rotation, center
        )
        sub_best = best[j0:j1, i0:i1].ravel()
        sub_ids = ids[j0:j1, i0:i1].ravel()
        better = ~np.isnan(hit_z) & (hit_z > sub_best)
        sub_best[better] = hit_z[better]
        sub_ids[better] = k
        best[j0:j1, i0:i1] = sub_best.reshape(j1 - j0, i1 - i0)
        ids[j0:j1, i0:i1] = sub_ids.reshape(j1 - j0, i1 - i0)
    return best.astype(np.float32), ids


def _march_instance(
    sq: Superquadric,
    px: np.ndarray,
    py: np.ndarray,
    z_lo: float,
    z_hi: float,
    grid_depth: float,
    z_step: float,
    rotation: np.ndarray | None,
    center: np.ndarray,
) -> np.ndarray:
    """First grid z (from the top) where F(sq) <= 1, per pixel; NaN where
    the march never enters the solid."""
    hit_z = np.full(px.shape, np.nan)
    # Global grid z_m = grid_depth - m*z_step, restricted to the z-range
    # the instance can occupy (F > 1 is guaranteed elsewhere).
    m_first = max(0, math.floor((grid_depth - min(z_hi, grid_depth)) / z_step))
    z_floor = max(0.0, z_lo) - z_step
    remaining = np.arange(px.shape[0])
    if rotation is None:
        # The xy part of F is fixed per pixel; precompute it once.
        base = inside_outside(
            sq, np.stack([px, py, np.full_like(px, sq.z0)], axis=-1)
        )
        keep = base <= 1.0
        remaining = remaining[keep]
        base = base[keep]
        m = m_first
        while remaining.size:
            z = grid_depth - m * z_step
            if z < z_floor or z < 0.0:
                break
            t = abs(z - sq.z0) / sq.a3
            t = 0.0 if t < 1e-12 else t
            f = base + t ** (2.0 / sq.eps1)
            newly = f <= 1.0
            hit_z[remaining[newly]] = z
            remaining = remaining[~newly]
            base = base[~newly]
            m += 1
    else:
        inv = rotation.T
        m = m_first
        while remaining.size:
            z = grid_depth - m * z_step
            if z < z_floor or z < 0.0:
                break
            pts = np.stack(
                [px[remaining], py[remaining],
                 np.full(remaining.shape, z)], axis=-1,
            )
            pts = (pts - center) @ inv.T + center
            f = inside_outside(sq, pts)
            newly = f <= 1.0
            hit_z[remaining[newly]] = z
            remaining = remaining[~newly]
            m += 1
    return hit_z


def instance_visible_fraction(
    scene: Scene, masks: InstanceMaskImage, k: int
) -> float:
    """Fraction of instance k's stand-alone footprint that stays visible
    in the full scene: 1.0 when nothing occludes it, 0.0 when fully
    hidden.  An instance with no stand-alone pixels at all (degenerate)
    counts as unoccluded.
    """
    if not 1 <= k <= len(scene.superquadrics):
        raise ValueError(f"instance index {k} out of range")
    visible = int(np.count_nonzero(masks.ids == np.uint16(k)))
    alone = Scene((scene.superquadrics[k - 1],), scene.bounds)
    _, alone_masks = render(alone)
    total = int(np.count_nonzero(alone_masks.ids))
    if total == 0:
        return 1.0
    return visible / total
