"""Dataset access: manifest loading, per-instance crops, target
normalization, the mask-quality filter and scene-grouped batching.

Targets are the 8 superquadric parameters ordered
[a1, a2, a3, eps1, eps2, x0, y0, z0]; sizes and positions are divided by
256 (the grid extent) so every component of the training target lives on
a unit-ish scale, while the shape exponents already sit in [0.01, 1].
Depth inputs are likewise scaled by 1/256.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset, Sampler

from .rasters import read_depth, read_ids

GRID = 256.0
PARAM_NAMES = ("a1", "a2", "a3", "eps1", "eps2", "x0", "y0", "z0")
# 1 for shape exponents, 256 for everything measured in grid cells.
TARGET_SCALE = np.array([GRID] * 3 + [1.0] * 2 + [GRID] * 3, dtype=np.float64)

SCENES_PER_BATCH = 4          # batches are built from groups of 4 scenes
MASK_QUALITY_MIN_IOU = 0.5    # crops below this IoU never enter training


@dataclass(frozen=True)
class SceneEntry:
    scene_id: int
    params: np.ndarray          # (k, 8) ground-truth parameters
    range_path: Path
    mask_path: Path


def load_manifest(path: str | Path, split: str | None = None) -> list[SceneEntry]:
    path = Path(path)
    payload = json.loads(path.read_text())
    wanted = None if split is None else set(payload["splits"][split])
    entries = []
    for rec in payload["scenes"]:
        if wanted is not None and rec["id"] not in wanted:
            continue
        entries.append(SceneEntry(
            scene_id=rec["id"],
            params=np.asarray(rec["superquadrics"], dtype=np.float64),
            range_path=path.parent / rec["range_path"],
            mask_path=path.parent / rec["mask_path"],
        ))
    return entries


def normalize_targets(params: np.ndarray) -> np.ndarray:
    return np.asarray(params, dtype=np.float64) / TARGET_SCALE


def denormalize_targets(targets: np.ndarray) -> np.ndarray:
    return np.asarray(targets, dtype=np.float64) * TARGET_SCALE


def crop_instance(depth: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Full-size depth raster keeping only pixels labelled k."""
    return np.where(ids == k, depth, np.float32(0.0)).astype(np.float32)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return (np.count_nonzero(a & b) / union) if union else 0.0


class CropDataset(Dataset):
    """One sample per visible instance: (1, 256, 256) normalized depth
    crop plus the normalized 8-parameter target.

    `mask_dir` optionally substitutes externally produced masks
    (scene_XXXXXX.sqim) for the ground-truth ones; crops whose mask IoU
    against the oracle mask is not above MASK_QUALITY_MIN_IOU are
    filtered out, so the regressor never trains on hopeless segments.
    """

    def __init__(self, entries: list[SceneEntry],
                 mask_dir: str | Path | None = None):
        self.samples: list[tuple[SceneEntry, int, Path | None]] = []
        self.scene_slices: list[list[int]] = []
        mask_dir = Path(mask_dir) if mask_dir is not None else None
        for entry in entries:
            indices = []
            used_mask = None
            oracle_ids = read_ids(entry.mask_path)
            if mask_dir is not None:
                candidate = mask_dir / f"scene_{entry.scene_id:06d}.sqim"
                if not candidate.exists():
                    continue
                used_mask = candidate
                used_ids = read_ids(candidate)
            else:
                used_ids = oracle_ids
            for k in range(1, len(entry.params) + 1):
                crop_mask = used_ids == k
                if not crop_mask.any():
                    continue
                if mask_iou(crop_mask, oracle_ids == k) <= MASK_QUALITY_MIN_IOU:
                    continue
                indices.append(len(self.samples))
                self.samples.append((entry, k, used_mask))
            if indices:
                self.scene_slices.append(indices)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int):
        entry, k, mask_path = self.samples[index]
        depth = read_depth(entry.range_path)
        ids = read_ids(mask_path if mask_path is not None else entry.mask_path)
        crop = crop_instance(depth, ids, k) / np.float32(GRID)
        target = normalize_targets(entry.params[k - 1])
        return (
            torch.from_numpy(crop).unsqueeze(0),
            torch.from_numpy(target.astype(np.float32)),
        )


class SceneGroupSampler(Sampler[list[int]]):
    """Yields batches of all crops from SCENES_PER_BATCH scenes, capping
    the batch at 4 * 5 = 20 crops for this dataset family."""

    def __init__(self, dataset: CropDataset, shuffle: bool = True,
                 seed: int = 0):
        self.slices = dataset.scene_slices
        self.shuffle = shuffle
        self.seed = seed
        self.epoch = 0

    def __iter__(self):
        order = np.arange(len(self.slices))
        if self.shuffle:
            rng = np.random.default_rng(self.seed + self.epoch)
            rng.shuffle(order)
            self.epoch += 1
        for start in range(0, len(order), SCENES_PER_BATCH):
            group = order[start:start + SCENES_PER_BATCH]
            yield [i for s in group for i in self.slices[s]]

    def __len__(self) -> int:
        return (len(self.slices) + SCENES_PER_BATCH - 1) // SCENES_PER_BATCH
