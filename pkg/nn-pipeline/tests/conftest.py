from __future__ import annotations

import subprocess
import sys

import pytest


def run_primary(*argv, cwd=None) -> subprocess.CompletedProcess:
    """Invoke the dataset/evaluation toolkit through its public CLI."""
    return subprocess.run(
        [sys.executable, "-m", "sqrecover", *map(str, argv)],
        capture_output=True, text=True, cwd=cwd,
    )


def generate_dataset(root, *, seed, train, val=0, test=0, extra=()):
    proc = run_primary(
        "generate", "--seed", seed, "--train", train, "--val", val,
        "--test", test, "--no-previews", "--out", root, *extra,
    )
    assert proc.returncode == 0, proc.stderr
    return root / "manifest.json"


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """24/6/20 mixed-count scenes for unit tests and integration."""
    root = tmp_path_factory.mktemp("small_ds")
    manifest = generate_dataset(root, seed=101, train=24, val=6, test=20)
    return manifest


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """Five 4-instance scenes; the first 16 crops feed the overfit check."""
    root = tmp_path_factory.mktemp("overfit_ds")
    manifest = generate_dataset(
        root, seed=202, train=5,
        extra=("--count-min", 4, "--count-max", 4),
    )
    return manifest


@pytest.fixture(scope="session")
def overfit_checkpoint(tmp_path_factory, overfit_dataset):
    """Regressor trained to overfit 16 crops for 200 epochs; shared by
    the overfit criterion and the export integration tests."""
    from sqnn import data
    from sqnn.regressor import save_checkpoint, train_regressor

    train_set = data.CropDataset(data.load_manifest(overfit_dataset, "train"))
    assert len(train_set) >= 16
    train_set.samples = train_set.samples[:16]
    train_set.scene_slices = [
        [i for i in group if i < 16] for group in train_set.scene_slices
    ]
    train_set.scene_slices = [g for g in train_set.scene_slices if g]
    model, history = train_regressor(
        train_set, None, epochs=200, seed=7,
        log=lambda line: None,
    )
    path = tmp_path_factory.mktemp("ckpt") / "overfit_regressor.pt"
    save_checkpoint(path, model, history)
    return path, history


@pytest.fixture(scope="session")
def tiny_segmenter_checkpoint(tmp_path_factory, small_dataset):
    """From-scratch segmenter given a short two-stage run; used by the
    export integration test (quality is not the point here)."""
    from sqnn import data
    from sqnn.segmenter import save_segmenter, train_segmenter

    entries = data.load_manifest(small_dataset, "train")[:8]
    model, history = train_segmenter(
        entries, epochs_per_stage=1, batch_size=2,
        from_scratch=True, seed=3, log=lambda line: None,
    )
    path = tmp_path_factory.mktemp("seg_ckpt") / "segmenter.pt"
    save_segmenter(path, model, history, from_scratch=True)
    return path
