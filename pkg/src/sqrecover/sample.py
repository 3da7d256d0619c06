"""Random scene sampling and dataset assembly.

Scenes are drawn instance by instance with uniform parameters and a
bounding-box IoU rejection rule: a candidate whose box overlaps any
already-accepted instance beyond the configured threshold (or pokes out
of the grid) is discarded and redrawn.  When one slot exhausts its
attempt budget the whole scene restarts with a fresh count draw, which
keeps the instance-count distribution uniform.

Every scene gets its own RNG stream derived from (dataset seed,
scene id), so generation is reproducible and independent of how many
workers render in parallel.  Draw order per candidate is fixed:
a1, a2, a3, eps1, eps2, x0, y0, z0, each from a half-open [lo, hi)
interval.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Superquadric, SceneBounds, aabb_iou, bounding_box
from .formats import (
    write_depth_preview,
    write_mask_preview,
    write_mask_raster,
    write_range_raster,
)
from .render import InstanceMaskImage, RangeImage, Scene, render


class InfeasibleSamplerError(RuntimeError):
    """Raised when the configuration cannot produce an acceptable scene
    within the restart budget."""


class EmptySegmentError(ValueError):
    """Raised when an instance id has no visible pixels to crop."""


@dataclass(frozen=True)
class SamplerConfig:
    count_range: tuple[int, int] = (1, 5)
    size_range: tuple[float, float] = (25.0, 76.0)
    shape_range: tuple[float, float] = (0.01, 1.0)
    xy_range: tuple[float, float] = (88.0, 169.0)
    z_range: tuple[float, float] = (100.0, 150.0)
    iou_threshold: float = 0.25
    max_attempts_per_instance: int = 1000
    max_scene_restarts: int = 100
    seed: int = 0
    bounds: SceneBounds = field(default_factory=SceneBounds)

    def validate(self) -> None:
        self.bounds.validate()
        lo, hi = self.count_range
        if not (1 <= lo <= hi):
            raise ValueError(f"empty count range {self.count_range}")
        for name in ("size_range", "shape_range", "xy_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty {name} ({lo}, {hi})")
        s_lo, _ = self.size_range
        if s_lo <= 0.0:
            raise ValueError("sizes must be strictly positive")
        e_lo, e_hi = self.shape_range
        if not (0.01 <= e_lo and e_hi <= 1.0):
            raise ValueError("shape range must stay within [0.01, 1]")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(
                f"iou_threshold must be in [0, 1], got {self.iou_threshold}"
            )
        if self.max_attempts_per_instance < 1 or self.max_scene_restarts < 1:
            raise ValueError("attempt budgets must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bounds"] = dataclasses.asdict(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        kwargs = dict(d)
        kwargs["bounds"] = SceneBounds(**kwargs["bounds"])
        for key in ("count_range", "size_range", "shape_range",
                    "xy_range", "z_range"):
            kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _draw_candidate(cfg: SamplerConfig, rng: np.random.Generator) -> Superquadric:
    a = rng.uniform(*cfg.size_range, size=3)
    eps = rng.uniform(*cfg.shape_range, size=2)
    xy = rng.uniform(*cfg.xy_range, size=2)
    z0 = rng.uniform(*cfg.z_range)
    return Superquadric(a[0], a[1], a[2], eps[0], eps[1], xy[0], xy[1], z0)


def sample_scene(cfg: SamplerConfig, rng: np.random.Generator) -> Scene:
    """Draw one scene from the configured distributions.

    The returned scene carries seed 0; `generate_dataset` stamps the
    per-scene seed it derived.  Raises InfeasibleSamplerError when the
    restart budget runs out (e.g. iou_threshold 0 with many large
    instances).
    """
    cfg.validate()
    grid = cfg.bounds.as_box()
    lo, hi = cfg.count_range
    for _ in range(cfg.max_scene_restarts):
        count = int(rng.integers(lo, hi + 1))
        accepted: list[Superquadric] = []
        boxes = []
        restart = False
        while len(accepted) < count and not restart:
            for attempt in range(cfg.max_attempts_per_instance):
                sq = _draw_candidate(cfg, rng)
                box = bounding_box(sq)
                if not grid.contains(box):
                    continue
                if all(aabb_iou(box, b) <= cfg.iou_threshold for b in boxes):
                    accepted.append(sq)
                    boxes.append(box)
                    break
            else:
                restart = True
        if not restart:
            return Scene(tuple(accepted), cfg.bounds)
    raise InfeasibleSamplerError(
        f"no acceptable scene after {cfg.max_scene_restarts} restarts; "
        "the config over-constrains placement"
    )


def derive_scene_seed(dataset_seed: int, scene_id: int) -> int:
    """Stable per-scene seed; identical regardless of worker layout."""
    ss = np.random.SeedSequence([int(dataset_seed), int(scene_id)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def crop_instance(
    range_image: RangeImage, masks: InstanceMaskImage, k: int
) -> RangeImage:
    """Full-size raster keeping depth only where the mask id equals k;
    everything else becomes background."""
    if range_image.depth.shape != masks.ids.shape:
        raise ValueError(
            f"raster shapes differ: {range_image.depth.shape} vs "
            f"{masks.ids.shape}"
        )
    keep = masks.ids == np.uint16(k)
    if not keep.any():
        raise EmptySegmentError(f"instance {k} has no visible pixels")
    out = np.where(keep, range_image.depth, np.float32(0.0))
    return RangeImage(out.astype(np.float32))


@dataclass(frozen=True)
class SceneRecord:
    id: int
    seed: int
    split: str
    superquadrics: tuple[tuple[float, ...], ...]
    range_path: str
    mask_path: str

    def scene(self, bounds: SceneBounds) -> Scene:
        sqs = tuple(Superquadric.from_array(p) for p in self.superquadrics)
        return Scene(sqs, bounds, seed=self.seed)


@dataclass(frozen=True)
class DatasetManifest:
    """On-disk index of a generated dataset.

    JSON schema: {"sampler_config": {...}, "noise_sigma": float,
    "splits": {name: [scene ids]}, "scenes": [{"id", "seed", "split",
    "superquadrics" (lists of 8 numbers ordered a1,a2,a3,eps1,eps2,
    x0,y0,z0), "range_path", "mask_path"}]}.  Paths are relative to the
    manifest's directory.
    """

    sampler_config: SamplerConfig
    splits: dict[str, list[int]]
    scenes: tuple[SceneRecord, ...]
    noise_sigma: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sampler_config": self.sampler_config.to_dict(),
            "noise_sigma": self.noise_sigma,
            "splits": self.splits,
            "scenes": [dataclasses.asdict(rec) for rec in self.scenes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        scenes = tuple(
            SceneRecord(
                id=rec["id"],
                seed=rec["seed"],
                split=rec["split"],
                superquadrics=tuple(tuple(p) for p in rec["superquadrics"]),
                range_path=rec["range_path"],
                mask_path=rec["mask_path"],
            )
            for rec in d["scenes"]
        )
        return cls(
            sampler_config=SamplerConfig.from_dict(d["sampler_config"]),
            splits={k: list(v) for k, v in d["splits"].items()},
            scenes=scenes,
            noise_sigma=d.get("noise_sigma", 0.0),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def records(self, split: str | None = None) -> list[SceneRecord]:
        if split is None:
            return list(self.scenes)
        wanted = set(self.splits.get(split, []))
        return [rec for rec in self.scenes if rec.id in wanted]


def _build_scene(cfg: SamplerConfig, scene_id: int) -> Scene:
    seed = derive_scene_seed(cfg.seed, scene_id)
    rng = np.random.default_rng(seed)
    scene = sample_scene(cfg, rng)
    return dataclasses.replace(scene, seed=seed)


def _apply_depth_noise(
    depth: np.ndarray, sigma: float, seed: int, depth_limit: float
) -> np.ndarray:
    """Gaussian sensor-style noise on foreground pixels only, clipped to
    the grid's depth range; background stays exactly 0."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E6F6973]))
    fg = depth != 0.0
    noisy = depth.astype(np.float64)
    noisy[fg] += rng.normal(0.0, sigma, size=int(fg.sum()))
    # Keep foreground strictly positive so the id/depth coupling with the
    # mask raster survives noise injection (1e-3 is float32-safe).
    noisy[fg] = np.clip(noisy[fg], 1e-3, depth_limit)
    return noisy.astype(np.float32)


def _generate_one(args: tuple) -> dict:
    cfg, scene_id, split, out_root, noise_sigma, previews = args
    scene = _build_scene(cfg, scene_id)
    rng_img, masks = render(scene)
    depth = rng_img.depth
    if noise_sigma > 0.0:
        depth = _apply_depth_noise(
            depth, noise_sigma, scene.seed, float(cfg.bounds.depth)
        )
    stem = f"{split}/scene_{scene_id:06d}"
    out_root = Path(out_root)
    write_range_raster(out_root / f"{stem}_range.sqri", depth)
    write_mask_raster(out_root / f"{stem}_mask.sqim", masks.ids)
    if previews:
        write_depth_preview(out_root / f"{stem}_depth.png", depth)
        write_mask_preview(out_root / f"{stem}_mask.png", masks.ids)
    return {
        "id": scene_id,
        "seed": scene.seed,
        "split": split,
        "superquadrics": tuple(
            tuple(sq.as_array().tolist()) for sq in scene.superquadrics
        ),
        "range_path": f"{stem}_range.sqri",
        "mask_path": f"{stem}_mask.sqim",
    }


def generate_dataset(
    cfg: SamplerConfig,
    n_train: int,
    n_val: int,
    n_test: int,
    out_root: str | Path,
    *,
    noise_sigma: float = 0.0,
    previews: bool = True,
    jobs: int = 1,
) -> DatasetManifest:
    """Sample, render and persist a train/val/test dataset.

    Scene ids run 0..total-1 with train first, then val, then test, so
    the splits are disjoint by construction.  The result is a pure
    function of (cfg, counts, noise_sigma): per-scene RNG streams make
    parallel generation (jobs > 1) byte-identical to serial.
    """
    cfg.validate()
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split sizes must be >= 0")
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be >= 0")
    out_root = Path(out_root)
    split_of: list[tuple[int, str]] = []
    offset = 0
    splits: dict[str, list[int]] = {}
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        ids = list(range(offset, offset + n))
        splits[split] = ids
        split_of.extend((i, split) for i in ids)
        offset += n
        (out_root / split).mkdir(parents=True, exist_ok=True)
    tasks = [
        (cfg, scene_id, split, str(out_root), noise_sigma, previews)
        for scene_id, split in split_of
    ]
    if jobs > 1 and tasks:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_generate_one, tasks, chunksize=8))
    else:
        records = [_generate_one(t) for t in tasks]
    manifest = DatasetManifest(
        sampler_config=cfg,
        splits=splits,
        scenes=tuple(SceneRecord(**rec) for rec in records),
        noise_sigma=noise_sigma,
    )
    manifest.save(out_root / "manifest.json")
    return manifest
