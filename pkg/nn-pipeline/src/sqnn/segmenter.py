"""Instance segmentation stage: a Mask R-CNN fine-tuned in two stages,
first with the backbone locked at learning rate 1e-3 (momentum 0.9),
then unlocked at 1e-4.

The pretrained COCO backbone is used when it can be loaded; offline
environments can pass from_scratch=True, which swaps in a ResNet-18 FPN
backbone with regular batch norm and random initialization (the exported
file formats, not the backbone, are this component's contract).
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .data import SceneEntry, GRID
from .rasters import read_depth, read_ids


def _resnet50_arch():
    from torchvision.models.detection import maskrcnn_resnet50_fpn
    from torchvision.models.detection.faster_rcnn import FastRCNNPredictor
    from torchvision.models.detection.mask_rcnn import MaskRCNNPredictor

    model = maskrcnn_resnet50_fpn(weights=None, weights_backbone=None,
                                  min_size=256, max_size=256)
    # Reshape the heads for the two-class problem (background + object).
    in_features = model.roi_heads.box_predictor.cls_score.in_features
    model.roi_heads.box_predictor = FastRCNNPredictor(in_features, 2)
    mask_in = model.roi_heads.mask_predictor.conv5_mask.in_channels
    model.roi_heads.mask_predictor = MaskRCNNPredictor(mask_in, 256, 2)
    return model


def _resnet18_arch():
    from torchvision.models.detection import MaskRCNN
    from torchvision.models.detection.backbone_utils import resnet_fpn_backbone

    backbone = resnet_fpn_backbone(
        backbone_name="resnet18", weights=None,
        norm_layer=torch.nn.BatchNorm2d, trainable_layers=5,
    )
    return MaskRCNN(backbone, num_classes=2, min_size=256, max_size=256)


def build_segmenter(from_scratch: bool = False):
    if from_scratch:
        return _resnet18_arch()
    from torchvision.models.detection import maskrcnn_resnet50_fpn

    try:
        pretrained = maskrcnn_resnet50_fpn(weights="DEFAULT")
    except Exception as exc:
        raise RuntimeError(
            "pretrained backbone unavailable (offline?); "
            "pass from_scratch=True to train without it"
        ) from exc
    model = _resnet50_arch()
    # Carry over every pretrained tensor that still fits the new heads.
    own = model.state_dict()
    for name, tensor in pretrained.state_dict().items():
        if name in own and own[name].shape == tensor.shape:
            own[name] = tensor
    model.load_state_dict(own)
    return model


class SceneDetectionDataset(Dataset):
    """Scene-level samples in torchvision detection format: 3-channel
    normalized depth plus per-instance boxes, labels and masks."""

    def __init__(self, entries: list[SceneEntry]):
        self.entries = [
            e for e in entries if self._visible_instances(e)
        ]

    @staticmethod
    def _visible_instances(entry: SceneEntry) -> list[int]:
        ids = read_ids(entry.mask_path)
        return [k for k in range(1, len(entry.params) + 1)
                if np.count_nonzero(ids == k) >= 4]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int):
        entry = self.entries[index]
        depth = read_depth(entry.range_path) / np.float32(GRID)
        ids = read_ids(entry.mask_path)
        image = torch.from_numpy(depth).unsqueeze(0).repeat(3, 1, 1)
        boxes, masks = [], []
        for k in self._visible_instances(entry):
            mask = ids == k
            ys, xs = np.nonzero(mask)
            boxes.append([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1])
            masks.append(mask)
        target = {
            "boxes": torch.as_tensor(np.array(boxes, dtype=np.float32)),
            "labels": torch.ones(len(boxes), dtype=torch.int64),
            "masks": torch.as_tensor(np.array(masks, dtype=np.uint8)),
        }
        return image, target


def _run_epochs(model, loader, optimizer, epochs, log) -> list[float]:
    losses = []
    for epoch in range(epochs):
        started = time.time()
        epoch_losses = []
        for images, targets in loader:
            optimizer.zero_grad()
            loss_dict = model(images, targets)
            loss = sum(loss_dict.values())
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss))
        losses.append(float(np.mean(epoch_losses)))
        log(f"  epoch {epoch + 1}/{epochs}: loss {losses[-1]:.4f} "
            f"({time.time() - started:.0f}s)")
    return losses


def train_segmenter(
    entries: list[SceneEntry],
    epochs_per_stage: int = 2,
    batch_size: int = 2,
    from_scratch: bool = False,
    seed: int = 0,
    log=print,
) -> tuple[torch.nn.Module, dict]:
    """Two-stage fine-tuning; returns (model, history with per-epoch
    losses for both stages)."""
    dataset = SceneDetectionDataset(entries)
    if len(dataset) == 0:
        raise ValueError("no usable scenes in the training set")
    torch.manual_seed(seed)
    model = build_segmenter(from_scratch=from_scratch)
    model.train()
    loader = DataLoader(
        dataset, batch_size=batch_size, shuffle=True,
        collate_fn=lambda batch: tuple(zip(*batch)),
        generator=torch.Generator().manual_seed(seed),
    )

    history: dict = {}
    log("stage 1: backbone locked, lr 1e-3")
    for p in model.backbone.parameters():
        p.requires_grad_(False)
    head_params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.SGD(head_params, lr=1e-3, momentum=0.9)
    history["stage1_loss"] = _run_epochs(
        model, loader, optimizer, epochs_per_stage, log
    )

    log("stage 2: backbone unlocked, lr 1e-4")
    for p in model.backbone.parameters():
        p.requires_grad_(True)
    optimizer = torch.optim.SGD(model.parameters(), lr=1e-4, momentum=0.9)
    history["stage2_loss"] = _run_epochs(
        model, loader, optimizer, epochs_per_stage, log
    )
    return model, history


@torch.no_grad()
def predict_instances(
    model, depth: np.ndarray, score_min: float = 0.5, max_instances: int = 8
) -> tuple[np.ndarray, list[float]]:
    """Predicted instance-id raster (uint16, score order, overlaps going
    to the higher-scoring instance) and the per-id scores."""
    model.eval()
    image = torch.from_numpy(
        depth.astype(np.float32) / np.float32(GRID)
    ).unsqueeze(0).repeat(3, 1, 1)
    out = model([image])[0]
    ids = np.zeros(depth.shape, dtype=np.uint16)
    scores: list[float] = []
    order = torch.argsort(out["scores"], descending=True)
    for idx in order.tolist():
        score = float(out["scores"][idx])
        if score < score_min or len(scores) >= max_instances:
            break
        mask = out["masks"][idx, 0].numpy() > 0.5
        mask &= ids == 0          # higher-scoring instances keep overlaps
        if not mask.any():
            continue
        scores.append(score)
        ids[mask] = len(scores)
    return ids, scores


def save_segmenter(path: str | Path, model, history: dict,
                   from_scratch: bool) -> None:
    import json

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"state_dict": model.state_dict(), "from_scratch": from_scratch},
        path,
    )
    path.with_suffix(".history.json").write_text(json.dumps(history, indent=1))


def load_segmenter(path: str | Path):
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    arch = _resnet18_arch() if payload.get("from_scratch") else _resnet50_arch()
    arch.load_state_dict(payload["state_dict"])
    arch.eval()
    return arch
