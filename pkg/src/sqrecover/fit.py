"""Superquadric recovery from segmented depth pixels.

The fitter minimizes the classic radially corrected algebraic residual

    r_i = sqrt(a1*a2*a3) * (F(p_i)^(eps1/2) - 1)

over the 8 parameters with a damped (Levenberg-Marquardt) Gauss-Newton
loop.  The sqrt-volume factor removes the shrink bias of the raw
algebraic distance and the eps1/2 power tempers the conditioning of the
large 2/eps exponents.  Derivatives come from central finite differences
(the |.|^q kinks make hand gradients error-prone and eight columns are
cheap); after every step the shape exponents are projected back into
[0.01, 1] and sizes onto [size_min, inf).

Only the top surface of a body is ever observed in a range image, so z0
and a3 are weakly coupled: their errors tend to anti-correlate while
z0 + a3 (the top plane) stays well determined, especially for box-like
shapes with eps1 near 0.01.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Superquadric
from .render import InstanceMaskImage, RangeImage
from .sample import crop_instance

_N_PARAMS = 8
_FD_REL_STEP = 1e-6
_FD_STEP_FLOOR = 1e-8
_DAMPING_CEILING = 1e14


class TooFewPointsError(ValueError):
    """Raised when a cloud has fewer points than fit parameters."""


class EmptyCropError(ValueError):
    """Raised when lifting a crop with no foreground pixels."""


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    cost_tol: float = 1e-8       # relative decrease of the squared cost
    step_tol: float = 1e-8       # L2 norm of the parameter step
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    eps_min: float = 0.01
    eps_max: float = 1.0
    size_min: float = 1e-3
    max_points: int = 20000      # larger clouds are uniformly subsampled

    def validate(self) -> None:
        positive = (
            "max_iterations", "cost_tol", "step_tol", "damping_init",
            "damping_up", "damping_down", "eps_min", "eps_max",
            "size_min", "max_points",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0.0 < self.eps_min <= self.eps_max <= 1.0):
            raise ValueError("eps clamp range must sit within (0, 1]")


@dataclass(frozen=True)
class FitResult:
    params: Superquadric
    cost: float
    iterations: int
    converged: bool
    wall_time: float
    point_count: int
    cost_history: tuple[float, ...]  # initial cost plus accepted steps


@dataclass(frozen=True)
class InstanceRecovery:
    """Outcome of recovering one instance of a scene: either a fit or a
    skip with a reason (too few visible pixels)."""

    instance_id: int
    fit: FitResult | None = None
    skip_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None


def depth_to_points(crop: RangeImage) -> np.ndarray:
    """Lift the non-background pixels of a (cropped) range image to 3-D
    surface samples (i + 0.5, j + 0.5, depth), float64, shape (N, 3)."""
    js, is_ = np.nonzero(crop.depth)
    if js.size == 0:
        raise EmptyCropError("crop contains no non-background pixels")
    return np.column_stack((
        is_.astype(np.float64) + 0.5,
        js.astype(np.float64) + 0.5,
        crop.depth[js, is_].astype(np.float64),
    ))


def initialize_fit(points: np.ndarray) -> Superquadric:
    """Moment/extent initial guess from a top-surface cloud.

    Centres x0, y0 on the cloud centroid; a1, a2 are the half extents of
    the silhouette (clamped to at least 1 cell); a3 falls back to the
    smaller of the two since the vertical extent is not observable; and
    z0 hangs the body below the highest observed surface point.  Shape
    exponents start at the ellipsoid (1, 1).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got {pts.shape}")
    if pts.shape[0] < _N_PARAMS:
        raise TooFewPointsError(
            f"need at least {_N_PARAMS} points, got {pts.shape[0]}"
        )
    x0, y0 = pts[:, 0].mean(), pts[:, 1].mean()
    a1 = max((pts[:, 0].max() - pts[:, 0].min()) / 2.0, 1.0)
    a2 = max((pts[:, 1].max() - pts[:, 1].min()) / 2.0, 1.0)
    a3 = min(a1, a2)
    z0 = pts[:, 2].max() - a3
    return Superquadric(a1, a2, a3, 1.0, 1.0, x0, y0, z0)


def _residuals(theta: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a1, a2, a3, e1, e2, x0, y0, z0 = theta
    gx = np.abs(pts[:, 0] - x0) / a1
    gy = np.abs(pts[:, 1] - y0) / a2
    gz = np.abs(pts[:, 2] - z0) / a3
    gx = np.where(gx < 1e-12, 0.0, gx)
    gy = np.where(gy < 1e-12, 0.0, gy)
    gz = np.where(gz < 1e-12, 0.0, gz)
    with np.errstate(over="ignore"):
        f = (gx ** (2.0 / e2) + gy ** (2.0 / e2)) ** (e2 / e1) \
            + gz ** (2.0 / e1)
        # Saturate instead of overflowing to inf: keeps the residual and
        # its finite-difference columns finite while the solver explores
        # wildly wrong parameters (inf - inf would poison the Jacobian).
        f = np.minimum(f, 1e100)
        return np.sqrt(a1 * a2 * a3) * (f ** (e1 / 2.0) - 1.0)


def _jacobian(theta: np.ndarray, pts: np.ndarray) -> np.ndarray:
    jac = np.empty((pts.shape[0], _N_PARAMS))
    for j in range(_N_PARAMS):
        h = max(_FD_REL_STEP * abs(theta[j]), _FD_STEP_FLOOR)
        plus = theta.copy()
        plus[j] += h
        minus = theta.copy()
        minus[j] -= h
        jac[:, j] = (_residuals(plus, pts) - _residuals(minus, pts)) / (2 * h)
    return jac


def _clamp(theta: np.ndarray, cfg: FitConfig) -> np.ndarray:
    out = theta.copy()
    out[0:3] = np.maximum(out[0:3], cfg.size_min)
    out[3:5] = np.clip(out[3:5], cfg.eps_min, cfg.eps_max)
    return out


def fit_superquadric(
    points: np.ndarray,
    cfg: FitConfig | None = None,
    init: Superquadric | None = None,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Fit one superquadric to a surface point cloud.

    `init` defaults to `initialize_fit`; `rng` only matters when the
    cloud exceeds cfg.max_points and is subsampled (default stream is
    fixed, so results stay deterministic).  The returned cost history is
    non-increasing and the final cost never exceeds the initial one.
    """
    cfg = cfg or FitConfig()
    cfg.validate()
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got {pts.shape}")
    if pts.shape[0] < _N_PARAMS:
        raise TooFewPointsError(
            f"need at least {_N_PARAMS} points, got {pts.shape[0]}"
        )
    start = time.perf_counter()
    if pts.shape[0] > cfg.max_points:
        rng = rng or np.random.default_rng(0)
        keep = rng.choice(pts.shape[0], size=cfg.max_points, replace=False)
        pts = pts[np.sort(keep)]

    theta = _clamp(
        (init or initialize_fit(pts)).as_array(), cfg
    )
    res = _residuals(theta, pts)
    cost = float(res @ res)
    if not np.isfinite(cost):
        raise ValueError("non-finite cost at initialization; corrupt input")
    history = [cost]

    lam = cfg.damping_init
    grad = hess = None
    converged = False
    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        if grad is None:
            jac = _jacobian(theta, pts)
            grad = jac.T @ res
            hess = jac.T @ jac
        damp = np.diag(np.maximum(np.diag(hess), 1e-12))
        try:
            delta = np.linalg.solve(hess + lam * damp, -grad)
        except np.linalg.LinAlgError:
            lam *= cfg.damping_up
            if lam > _DAMPING_CEILING:
                break
            continue
        if float(np.linalg.norm(delta)) < cfg.step_tol:
            # The damped system proposes no motion: stationary point.
            converged = True
            break
        trial = _clamp(theta + delta, cfg)
        trial_res = _residuals(trial, pts)
        trial_cost = float(trial_res @ trial_res)
        if np.isfinite(trial_cost) and trial_cost < cost:
            step = float(np.linalg.norm(trial - theta))
            rel_drop = (cost - trial_cost) / cost if cost > 0.0 else 0.0
            theta, res, cost = trial, trial_res, trial_cost
            history.append(cost)
            grad = hess = None
            lam = max(lam * cfg.damping_down, 1e-12)
            if rel_drop < cfg.cost_tol or step < cfg.step_tol:
                converged = True
                break
        else:
            lam *= cfg.damping_up
            if lam > _DAMPING_CEILING:
                break

    return FitResult(
        params=Superquadric.from_array(theta),
        cost=cost,
        iterations=iterations,
        converged=converged,
        wall_time=time.perf_counter() - start,
        point_count=pts.shape[0],
        cost_history=tuple(history),
    )


def recover_scene(
    range_image: RangeImage,
    masks: InstanceMaskImage,
    cfg: FitConfig | None = None,
    *,
    instance_count: int | None = None,
) -> list[InstanceRecovery]:
    """Fit every instance of a segmented range image.

    Candidate ids are 1..instance_count, defaulting to the largest id
    present in the mask raster (pass the true count to also account for
    fully occluded trailing instances).  Instances with fewer than 8
    visible pixels become skip records instead of fits.  Each instance
    draws its subsampling RNG from its own id, so concurrent recovery
    would return the same results.
    """
    if range_image.depth.shape != masks.ids.shape:
        raise ValueError(
            f"raster shapes differ: {range_image.depth.shape} vs "
            f"{masks.ids.shape}"
        )
    cfg = cfg or FitConfig()
    top = instance_count if instance_count is not None else (
        int(masks.ids.max()) if masks.ids.size else 0
    )
    results: list[InstanceRecovery] = []
    for k in range(1, top + 1):
        visible = int(np.count_nonzero(
            (masks.ids == np.uint16(k)) & (range_image.depth != 0.0)
        ))
        if visible < _N_PARAMS:
            results.append(InstanceRecovery(
                instance_id=k,
                skip_reason=(
                    f"{visible} visible pixels, need >= {_N_PARAMS}"
                ),
            ))
            continue
        crop = crop_instance(range_image, masks, k)
        points = depth_to_points(crop)
        fit = fit_superquadric(
            points, cfg, rng=np.random.default_rng(
                np.random.SeedSequence([k])
            ),
        )
        results.append(InstanceRecovery(instance_id=k, fit=fit))
    return results
