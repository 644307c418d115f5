"""Trajectory CSV I/O, resampling, and synthetic trajectory generation.

The canonical file format is one row per (frame, joint):
``frame_index,time_s,joint_name,x_m,y_m,z_m`` with ``# key=value`` metadata
lines before a mandatory header.  Floats are written with shortest
round-trip precision, so save followed by load is lossless.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .kinematics import JointAngleState, KinematicChain, joint_positions_batch

log = logging.getLogger(__name__)

HEADER = "frame_index,time_s,joint_name,x_m,y_m,z_m"
GAP_SPLIT_S = 0.5  # a larger time step starts a new sequence


@dataclass(frozen=True)
class ObservedSequence:
    """Joint positions on a strictly increasing time grid."""

    times: np.ndarray
    positions: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or len(times) == 0:
            raise InvalidArgumentError("times must be a non-empty 1-D array")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("times must be finite and strictly increasing")
        if not self.positions:
            raise InvalidArgumentError("at least one joint is required")
        for name, pos in self.positions.items():
            pos = np.asarray(pos, dtype=float)
            self.positions[name] = pos
            if pos.shape != (len(times), 3):
                raise InvalidArgumentError(
                    f"positions for {name!r} must have shape ({len(times)}, 3), got {pos.shape}"
                )
            if not np.all(np.isfinite(pos)):
                raise InvalidArgumentError(f"positions for {name!r} contain non-finite values")

    def __len__(self) -> int:
        return len(self.times)

    def tail(self, duration: float) -> "ObservedSequence":
        """The final ``duration`` seconds of the sequence (at least one frame)."""
        mask = self.times >= self.times[-1] - duration - 1e-12
        return ObservedSequence(
            times=self.times[mask],
            positions={n: p[mask] for n, p in self.positions.items()},
            metadata=dict(self.metadata),
        )


def _format_float(x: float) -> str:
    return repr(float(x))


def save_trajectory(seq: ObservedSequence, path: str) -> None:
    """Write one sequence in the canonical CSV format."""
    lines = []
    for key, value in seq.metadata.items():
        lines.append(f"# {key}={value}")
    lines.append(HEADER)
    names = sorted(seq.positions)
    for i, t in enumerate(seq.times):
        for name in names:
            x, y, z = seq.positions[name][i]
            lines.append(
                f"{i},{_format_float(t)},{name},{_format_float(x)},{_format_float(y)},{_format_float(z)}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory(path: str) -> list[ObservedSequence]:
    """Parse a trajectory file into sequences, splitting on time gaps.

    Frames missing joints (relative to the file's majority joint set) are
    dropped; the drop count lands in each sequence's metadata under
    ``dropped_frames`` and is logged as a warning.
    """
    metadata: dict[str, str] = {}
    frames: dict[int, dict] = {}
    saw_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    metadata[key.strip()] = value.strip()
                continue
            if not saw_header:
                if line.replace(" ", "") != HEADER:
                    raise ParseError(f"expected header {HEADER!r}, got {line!r}", line=lineno)
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ParseError(f"expected 6 columns, got {len(parts)}", line=lineno)
            try:
                idx = int(parts[0])
                t = float(parts[1])
                xyz = [float(v) for v in parts[3:6]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            frame = frames.setdefault(idx, {"t": t, "joints": {}})
            frame["joints"][parts[2].strip()] = np.array(xyz)
    if not saw_header:
        raise ParseError("missing header row")
    if not frames:
        raise ParseError("file contains no data rows")

    expected = _majority_joint_set(frames)
    ordered = sorted(frames.values(), key=lambda f: f["t"])
    kept, dropped = [], 0
    last_t = None
    for frame in ordered:
        if set(frame["joints"]) != expected or (last_t is not None and frame["t"] <= last_t):
            dropped += 1
            continue
        kept.append(frame)
        last_t = frame["t"]
    if dropped:
        log.warning("dropped %d incomplete or out-of-order frames from %s", dropped, path)
    if not kept:
        raise ParseError("no complete frames in file")
    metadata = dict(metadata)
    metadata["dropped_frames"] = dropped

    sequences = []
    start = 0
    times = np.array([f["t"] for f in kept])
    for i in range(1, len(kept) + 1):
        if i == len(kept) or times[i] - times[i - 1] > GAP_SPLIT_S:
            chunk = kept[start:i]
            sequences.append(
                ObservedSequence(
                    times=times[start:i],
                    positions={n: np.stack([f["joints"][n] for f in chunk]) for n in sorted(expected)},
                    metadata=dict(metadata),
                )
            )
            start = i
    return sequences


def _majority_joint_set(frames: dict) -> set:
    counts = Counter(frozenset(f["joints"]) for f in frames.values())
    best = max(counts.items(), key=lambda kv: (kv[1], sorted(kv[0])))
    return set(best[0])


def resample(seq: ObservedSequence, rate_hz: float) -> ObservedSequence:
    """Linear resampling onto a uniform grid from t0, clipped inside the span."""
    if not np.isfinite(rate_hz) or rate_hz <= 0:
        raise InvalidArgumentError(f"rate_hz must be positive, got {rate_hz}")
    t0, t1 = seq.times[0], seq.times[-1]
    n = int(np.floor((t1 - t0) * rate_hz + 1e-9)) + 1
    grid = t0 + np.arange(n) / rate_hz
    positions = {
        name: np.column_stack([np.interp(grid, seq.times, pos[:, c]) for c in range(3)])
        for name, pos in seq.positions.items()
    }
    return ObservedSequence(times=grid, positions=positions, metadata=dict(seq.metadata))


@dataclass(frozen=True)
class SynthAngle:
    """One sinusoidal joint angle: center + amplitude * sin(2 pi f t + phase)."""

    center: float
    amplitude: float
    frequency_hz: float
    phase: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    chain: KinematicChain
    angles: tuple[SynthAngle, ...]
    duration_s: float = 6.0
    rate_hz: float = 10.0
    noise_sigma: float = 0.0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.angles) != self.chain.p_n:
            raise InvalidArgumentError(
                f"need {self.chain.p_n} angle specs, got {len(self.angles)}"
            )
        if self.duration_s <= 0 or self.rate_hz <= 0:
            raise InvalidArgumentError("duration_s and rate_hz must be positive")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        for i, a in enumerate(self.angles):
            if a.amplitude < 0 or a.frequency_hz < 0:
                raise InvalidArgumentError(f"angle {i}: amplitude and frequency must be >= 0")
            lo, hi = a.center - a.amplitude, a.center + a.amplitude
            if lo < self.chain.angle_lb[i] or hi > self.chain.angle_ub[i]:
                raise InvalidArgumentError(
                    f"angle {i}: range [{lo:.4f}, {hi:.4f}] leaves static bounds "
                    f"[{self.chain.angle_lb[i]:.4f}, {self.chain.angle_ub[i]:.4f}]"
                )
            peak_vel = a.amplitude * 2.0 * np.pi * a.frequency_hz
            if peak_vel > self.chain.vel_ub[i]:
                raise InvalidArgumentError(
                    f"angle {i}: peak velocity {peak_vel:.4f} exceeds bound {self.chain.vel_ub[i]:.4f}"
                )


@dataclass(frozen=True)
class SynthResult:
    """Observed (noisy) sequence plus the noiseless ground truth behind it."""

    observed: ObservedSequence
    truth: ObservedSequence
    angle_states: list[JointAngleState]


def generate_synthetic(cfg: SynthConfig) -> SynthResult:
    """Sinusoidal joint angles mapped through FK, with Gaussian position noise."""
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s * cfg.rate_hz)) + 1
    times = np.arange(n) / cfg.rate_hz
    angles = np.column_stack(
        [
            a.center + a.amplitude * np.sin(2.0 * np.pi * a.frequency_hz * times + a.phase)
            for a in cfg.angles
        ]
    )
    truth_pos = joint_positions_batch(cfg.chain, angles)
    noisy_pos = {
        name: pos + rng.normal(0.0, cfg.noise_sigma, size=pos.shape) if cfg.noise_sigma > 0 else pos.copy()
        for name, pos in truth_pos.items()
    }
    metadata = {"rate_hz": cfg.rate_hz, **cfg.metadata}
    return SynthResult(
        observed=ObservedSequence(times=times, positions=noisy_pos, metadata=dict(metadata)),
        truth=ObservedSequence(times=times, positions=truth_pos, metadata=dict(metadata)),
        angle_states=[JointAngleState(angles=angles[i], timestamp=float(times[i])) for i in range(n)],
    )
