"""Evaluation metrics: mean per-joint position error and grid-based NLL."""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UnsupportedShapeError
from .predictor import PredictionCloud

DENSITY_FLOOR = 1e-12  # caps per-step NLL at -log(1e-12) ~ 27.63
PAD_FRACTION = 0.05  # total bounding-box growth (2.5% per side)
MIN_BOX_WIDTH = 1e-9  # meters; keeps voxel volume positive for point clouds


def _stack_positions(value, name: str) -> np.ndarray:
    """Accept (T, J, 3) arrays or {joint: (T, 3)} maps (joined in key order)."""
    if isinstance(value, Mapping):
        value = np.stack([np.asarray(value[k], dtype=float) for k in value], axis=1)
    value = np.asarray(value, dtype=float)
    if value.ndim != 3 or value.shape[2] != 3:
        raise UnsupportedShapeError(f"{name} must have shape (T, J, 3), got {value.shape}")
    if not np.all(np.isfinite(value)):
        raise InvalidArgumentError(f"{name} contains non-finite positions")
    return value


def mpjpe(truth, predicted) -> float:
    """Mean Euclidean joint position error in millimeters."""
    truth = _stack_positions(truth, "truth")
    predicted = _stack_positions(predicted, "predicted")
    if truth.shape != predicted.shape:
        raise UnsupportedShapeError(
            f"shape mismatch: truth {truth.shape} vs predicted {predicted.shape}"
        )
    return float(np.mean(np.linalg.norm(truth - predicted, axis=2))) * 1000.0


def _cloud_density_at(cloud: PredictionCloud, joint: str, point: np.ndarray, grid_res: int) -> float:
    """Voxel-grid density of the cloud's joint positions at one point."""
    samples = cloud.positions[joint]
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    pad = np.maximum(PAD_FRACTION * (hi - lo), MIN_BOX_WIDTH) / 2.0
    lo = lo - pad
    hi = hi + pad
    width = (hi - lo) / grid_res
    voxel_volume = float(np.prod(width))

    if np.any(point < lo) or np.any(point > hi):
        return DENSITY_FLOOR
    target = np.minimum((point - lo) // width, grid_res - 1).astype(int)
    idx = np.minimum((samples - lo) // width, grid_res - 1).astype(int)
    in_target = np.all(idx == target, axis=1)
    mass = float(cloud.weights[in_target].sum())
    return max(mass / voxel_volume, DENSITY_FLOOR)


def nll(truth, clouds: Sequence[PredictionCloud], grid_res: int = 20, joint: str = "wrist") -> float:
    """Mean negative log density of the truth points under the clouds.

    One truth point per cloud; density is read off a grid_res^3 voxel grid
    over each cloud's padded bounding box.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if grid_res < 4:
        raise InvalidArgumentError(f"grid_res must be >= 4, got {grid_res}")
    if truth.shape != (len(clouds), 3):
        raise UnsupportedShapeError(
            f"need one truth point per cloud: truth {truth.shape}, {len(clouds)} clouds"
        )
    if not clouds:
        raise InvalidArgumentError("need at least one cloud")
    for cloud in clouds:
        if joint not in cloud.positions:
            raise InvalidArgumentError(f"cloud has no joint {joint!r}")
    total = 0.0
    for point, cloud in zip(truth, clouds):
        total -= np.log(_cloud_density_at(cloud, joint, point, grid_res))
    return total / len(clouds)


@dataclass(frozen=True)
class EvaluationReport:
    """Per-mode evaluation summary over a set of prediction windows."""

    mode: str
    mpjpe_per_window: tuple[float, ...]
    nll_per_window: tuple[float, ...]
    per_action: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mpjpe_per_window", tuple(float(v) for v in self.mpjpe_per_window))
        object.__setattr__(self, "nll_per_window", tuple(float(v) for v in self.nll_per_window))
        if not self.mpjpe_per_window or len(self.mpjpe_per_window) != len(self.nll_per_window):
            raise InvalidArgumentError("need matching, non-empty per-window metric lists")
        if any(v < 0 for v in self.mpjpe_per_window):
            raise InvalidArgumentError("mpjpe values must be >= 0")

    @property
    def n_windows(self) -> int:
        return len(self.mpjpe_per_window)

    @property
    def mpjpe_mm(self) -> float:
        return float(np.mean(self.mpjpe_per_window))

    @property
    def nll_mean(self) -> float:
        return float(np.mean(self.nll_per_window))

    @property
    def mpjpe_stderr(self) -> float:
        return _stderr(self.mpjpe_per_window)

    @property
    def nll_stderr(self) -> float:
        return _stderr(self.nll_per_window)


def _stderr(values) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def save_report(reports: Sequence[EvaluationReport], path: str) -> None:
    """Write one CSV row per report (action '-'), plus per-action rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "action", "mpjpe_mm", "mpjpe_stderr", "nll_mean", "nll_stderr", "n_windows"]
        )
        for report in reports:
            writer.writerow(
                [
                    report.mode,
                    "-",
                    repr(report.mpjpe_mm),
                    repr(report.mpjpe_stderr),
                    repr(report.nll_mean),
                    repr(report.nll_stderr),
                    report.n_windows,
                ]
            )
            for action in sorted(report.per_action):
                a_mpjpe, a_nll = report.per_action[action]
                writer.writerow(
                    [report.mode, action, repr(float(a_mpjpe)), "", repr(float(a_nll)), "", ""]
                )
