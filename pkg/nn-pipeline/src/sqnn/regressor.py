"""VGG-style parameter regressor: thirteen Conv2D+BN+ReLU stages
(strides 2,1,1 repeating, kernel 7 then 3, widths 32 up to 256) flatten
a 256x256 single-channel crop to 16384 features and a dense layer emits
the 8 superquadric parameters.  Trained with Adam at a constant 1e-3 on
the MSE of normalized targets."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from .data import CropDataset, SceneGroupSampler, denormalize_targets

FILTERS = (32, 32, 32, 32, 64, 64, 64, 128, 128, 128, 256, 256, 256)
KERNELS = (7, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3)
STRIDES = (2, 1, 1, 2, 1, 1, 2, 1, 1, 2, 1, 1, 2)
FLAT_FEATURES = 8 * 8 * 256   # 16384
N_PARAMS = 8


def build_regressor() -> nn.Sequential:
    layers: list[nn.Module] = []
    in_ch = 1
    for width, kernel, stride in zip(FILTERS, KERNELS, STRIDES):
        layers += [
            nn.Conv2d(in_ch, width, kernel, stride,
                      padding=kernel // 2, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        ]
        in_ch = width
    layers += [nn.Flatten(), nn.Linear(FLAT_FEATURES, N_PARAMS)]
    return nn.Sequential(*layers)


@torch.no_grad()
def evaluate_mae(model: nn.Module, loader: DataLoader) -> np.ndarray:
    """Per-parameter mean absolute error on normalized targets."""
    model.eval()
    total = np.zeros(N_PARAMS)
    count = 0
    for crops, targets in loader:
        pred = model(crops)
        total += (pred - targets).abs().sum(dim=0).numpy()
        count += targets.shape[0]
    return total / max(count, 1)


def train_regressor(
    train_set: CropDataset,
    val_set: CropDataset | None,
    epochs: int,
    lr: float = 1e-3,
    seed: int = 0,
    log=print,
) -> tuple[nn.Sequential, dict]:
    """Returns (model, history); history holds per-epoch training loss
    and per-epoch validation MAE (normalized units)."""
    if len(train_set) == 0:
        raise ValueError("training set is empty after mask-quality filtering")
    torch.manual_seed(seed)
    model = build_regressor()
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    criterion = nn.MSELoss()
    sampler = SceneGroupSampler(train_set, shuffle=True, seed=seed)
    loader = DataLoader(train_set, batch_sampler=sampler)
    val_loader = (
        DataLoader(val_set, batch_size=16) if val_set is not None else None
    )
    history: dict = {"train_loss": [], "val_mae": [], "train_mae": []}
    # Re-scoring the whole training set every epoch only pays off for
    # overfit-sized sets; larger runs score it once at the end.
    mae_every_epoch = len(train_set) <= 64
    for epoch in range(1, epochs + 1):
        model.train()
        started = time.time()
        losses = []
        for crops, targets in loader:
            optimizer.zero_grad()
            loss = criterion(model(crops), targets)
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
        history["train_loss"].append(float(np.mean(losses)))
        line = (f"epoch {epoch:3d}/{epochs}  "
                f"loss {history['train_loss'][-1]:.5f}")
        if mae_every_epoch or epoch == epochs:
            train_mae = evaluate_mae(
                model, DataLoader(train_set, batch_size=16)
            )
            history["train_mae"].append(train_mae.tolist())
            line += f"  train MAE {train_mae.mean():.4f}"
        if val_loader is not None:
            val_mae = evaluate_mae(model, val_loader)
            history["val_mae"].append(val_mae.tolist())
            line += f"  val MAE {val_mae.mean():.4f}"
        line += f"  ({time.time() - started:.0f}s)"
        log(line)
    return model, history


@torch.no_grad()
def predict_params(model: nn.Module, crops: torch.Tensor) -> np.ndarray:
    """Denormalized (n, 8) parameter predictions for a crop batch."""
    model.eval()
    out = model(crops).numpy().astype(np.float64)
    return denormalize_targets(out)


def save_checkpoint(path: str | Path, model: nn.Module, history: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict()}, path)
    path.with_suffix(".history.json").write_text(json.dumps(history, indent=1))


def load_checkpoint(path: str | Path) -> nn.Sequential:
    model = build_regressor()
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
