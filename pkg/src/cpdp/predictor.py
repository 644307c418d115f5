"""Constrained motion prediction over a horizon.

Each step turns per-angle GP posteriors into truncated normals whose bounds
intersect the static joint limits with a velocity envelope around the previous
angle, Monte Carlo samples those, transports the samples through the chain
with change-of-variable weights, rejects samples the scene forbids, and
renormalizes.  The truncated-normal means feed the next step's lag windows.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import ObservedSequence, resample
from .distributions import TruncatedNormalSpec, tn_mean, tn_pdf, tn_sample
from .errors import (
    ConfigError,
    DegenerateTruncationError,
    EmptyCloudError,
    InvalidArgumentError,
    UnsupportedShapeError,
)
from .gp import GpModel, posterior
from .ik import PsoConfig, solve_trajectory
from .kinematics import KinematicChain, jacobian_batch, joint_positions_batch, pseudo_det_batch
from .scene import SceneConstraints

MODES = ("task_space_gp", "joint_angle_gp", "constrained")
AXES = ("x", "y", "z")
PSEUDO_DET_FLOOR = 1e-9  # divisor floor near singular configurations


def angle_key(i: int) -> str:
    """Model-dict key for joint angle i."""
    return f"angle_{i}"


def coord_key(joint: str, axis: str) -> str:
    """Model-dict key for one task-space coordinate of one joint."""
    return f"{joint}_{axis}"


@dataclass(frozen=True)
class PredictionConfig:
    mode: str = "constrained"
    observed_window: float = 0.6
    horizon: float = 0.5
    dt: float = 0.1
    mc_samples: int = 10000
    seed: int = 0
    weight_joint: str | None = None  # None: most distal named joint
    reject_joints: tuple[str, ...] | None = None  # None: every named joint

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("observed_window", "horizon", "dt"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.mc_samples < 100:
            raise ConfigError(f"mc_samples must be >= 100, got {self.mc_samples}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class PredictionCloud:
    """Weighted samples for one prediction step.

    Accepted samples carry normalized weights (sum 1); rejected samples are
    kept only so dumps can show what the scene removed.
    """

    t: float
    angles: np.ndarray  # (A, p_n); width 0 in task-space mode
    positions: dict[str, np.ndarray]  # joint -> (A, 3)
    weights: np.ndarray  # (A,)
    rejected_count: int
    normalization: float  # sum of accepted raw weights
    degraded: bool = False
    rejected_angles: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    rejected_positions: dict[str, np.ndarray] = field(default_factory=dict)

    def mean_positions(self) -> dict[str, np.ndarray]:
        return {name: self.weights @ pos for name, pos in self.positions.items()}


@dataclass(frozen=True)
class PredictionResult:
    mode: str
    times: np.ndarray  # (steps,)
    clouds: tuple[PredictionCloud, ...]
    mean_trajectory: dict[str, np.ndarray]  # joint -> (steps, 3)
    tn_specs: tuple[tuple[TruncatedNormalSpec, ...], ...]  # per step, per angle


def compute_bounds(theta_prev, static_lb, static_ub, vel_ub, dt):
    """Intersect static bounds with the velocity envelope around theta_prev.

    Returns (lb, ub, clamped); clamped is True when theta_prev had to be
    pulled back inside the static bounds first.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    static_lb = np.asarray(static_lb, dtype=float)
    static_ub = np.asarray(static_ub, dtype=float)
    vel_ub = np.asarray(vel_ub, dtype=float)
    if not (np.all(static_lb < static_ub) and np.all(vel_ub > 0) and dt > 0):
        raise InvalidArgumentError("need static_lb < static_ub, vel_ub > 0 and dt > 0")
    clamped = bool(np.any(theta_prev < static_lb) or np.any(theta_prev > static_ub))
    anchor = np.clip(theta_prev, static_lb, static_ub)
    lb = np.maximum(static_lb, anchor - vel_ub * dt)
    ub = np.minimum(static_ub, anchor + vel_ub * dt)
    return lb, ub, clamped


def predict_step(
    models: Sequence[GpModel],
    windows: Sequence[np.ndarray],
    chain: KinematicChain,
    dt: float,
    bounded: bool = True,
) -> tuple[TruncatedNormalSpec, ...]:
    """One-step-ahead truncated normal per angle from the lag windows."""
    if len(models) != chain.p_n or len(windows) != chain.p_n:
        raise UnsupportedShapeError(
            f"need {chain.p_n} models and windows, got {len(models)} and {len(windows)}"
        )
    specs = []
    for i, (model, window) in enumerate(zip(models, windows)):
        window = np.asarray(window, dtype=float)
        if window.shape != (model.lag_order,):
            raise UnsupportedShapeError(
                f"angle {i}: window shape {window.shape} does not match lag order {model.lag_order}"
            )
        mu, var = posterior(model, window)
        if bounded:
            lb, ub, _ = compute_bounds(
                window[-1], chain.angle_lb[i], chain.angle_ub[i], chain.vel_ub[i], dt
            )
            lb, ub = float(lb), float(ub)
        else:
            lb, ub = -np.inf, np.inf
        sigma = float(np.sqrt(var))
        try:
            spec = TruncatedNormalSpec(mu=mu, sigma=sigma, lb=lb, ub=ub)
        except DegenerateTruncationError:
            # a confident GP mean far outside the velocity envelope leaves no
            # mass in [lb, ub]; the limiting distribution piles up at the
            # nearest bound, so recenter there
            spec = TruncatedNormalSpec(mu=float(np.clip(mu, lb, ub)), sigma=sigma, lb=lb, ub=ub)
        specs.append(spec)
    return tuple(specs)


def transport_and_filter(
    specs: Sequence[TruncatedNormalSpec],
    chain: KinematicChain,
    scene: SceneConstraints,
    t: float,
    n_samples: int,
    seed,
    weight_joint: str | None = None,
    reject_joints: Sequence[str] | None = None,
) -> PredictionCloud:
    """Sample angles, push through FK, weight by pdf over pseudo-determinant,
    reject scene violations, and normalize the survivors."""
    if len(specs) != chain.p_n:
        raise UnsupportedShapeError(f"need {chain.p_n} specs, got {len(specs)}")
    if weight_joint is None:
        weight_joint = max(chain.named_joints, key=chain.named_joints.get)
    if weight_joint not in chain.named_joints:
        raise InvalidArgumentError(f"unknown joint {weight_joint!r}")
    names = list(chain.named_joints)
    if reject_joints is not None:
        unknown = set(reject_joints) - set(names)
        if unknown:
            raise InvalidArgumentError(f"unknown joints {sorted(unknown)}")
        reject = list(reject_joints)
    else:
        reject = names

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = np.column_stack([tn_sample(spec, n_samples, rng) for spec in specs])
    positions = joint_positions_batch(chain, theta)
    mask = np.ones(n_samples, dtype=bool)
    for name in reject:
        mask &= scene.admits_batch(positions[name], t)
    rejected_count = int(n_samples - mask.sum())
    if rejected_count == n_samples:
        raise EmptyCloudError(
            f"scene rejected all {n_samples} samples at t={t:.3f}", rejected_count=rejected_count
        )

    accepted = theta[mask]
    J = jacobian_batch(chain, accepted, weight_joint, method="analytic")
    denom = np.maximum(pseudo_det_batch(J), PSEUDO_DET_FLOOR)
    numer = np.ones(len(accepted))
    for i, spec in enumerate(specs):
        numer *= tn_pdf(spec, accepted[:, i])
    raw = numer / denom
    normalization = float(raw.sum())
    if normalization > 0:
        weights = raw / normalization
    else:  # all densities underflowed; keep a valid pdf
        weights = np.full(len(accepted), 1.0 / len(accepted))
    return PredictionCloud(
        t=t,
        angles=accepted,
        positions={name: positions[name][mask] for name in names},
        weights=weights,
        rejected_count=rejected_count,
        normalization=normalization,
        rejected_angles=theta[~mask],
        rejected_positions={name: positions[name][~mask] for name in names},
    )


def _window_tail(seq: ObservedSequence, config: PredictionConfig) -> ObservedSequence:
    span = seq.times[-1] - seq.times[0]
    if span + 1e-9 < config.observed_window:
        raise InvalidArgumentError(
            f"observed sequence spans {span:.3f}s, needs >= {config.observed_window}s"
        )
    return resample(seq.tail(config.observed_window), 1.0 / config.dt)


def _require_length(values: np.ndarray, k: int, signal: str) -> np.ndarray:
    if len(values) < k:
        raise InvalidArgumentError(
            f"observed window holds {len(values)} samples, model for {signal} needs {k}"
        )
    return values[-k:].copy()


def _get_model(models: Mapping[str, GpModel], key: str) -> GpModel:
    if key not in models:
        raise InvalidArgumentError(f"missing model {key!r}")
    return models[key]


def _predict_task_space(obs, models, chain, config):
    window = _window_tail(obs, config)
    names = list(chain.named_joints)
    sigs = {}
    for name in names:
        for ax_i, ax in enumerate(AXES):
            key = coord_key(name, ax)
            model = _get_model(models, key)
            sigs[key] = (model, _require_length(window.positions[name][:, ax_i], model.lag_order, key))

    children = np.random.SeedSequence(config.seed).spawn(config.steps)
    times = window.times[-1] + config.dt * np.arange(1, config.steps + 1)
    clouds = []
    for s in range(config.steps):
        rng = np.random.default_rng(children[s])
        positions = {}
        for name in names:
            coords = []
            for ax in AXES:
                key = coord_key(name, ax)
                model, sig = sigs[key]
                mu, var = posterior(model, sig)
                coords.append(rng.normal(mu, np.sqrt(var), config.mc_samples))
                sigs[key] = (model, np.append(sig[1:], mu))
            positions[name] = np.column_stack(coords)
        clouds.append(
            PredictionCloud(
                t=float(times[s]),
                angles=np.zeros((config.mc_samples, 0)),
                positions=positions,
                weights=np.full(config.mc_samples, 1.0 / config.mc_samples),
                rejected_count=0,
                normalization=float(config.mc_samples),
            )
        )
    return times, clouds, tuple(() for _ in range(config.steps))


def _predict_joint_space(obs, models, chain, config, scene, ik_config, angle_window):
    window = _window_tail(obs, config)
    if angle_window is None:
        states = solve_trajectory(window, chain, ik_config)
        angle_window = np.stack([st.angles for st in states])
    else:
        angle_window = np.asarray(angle_window, dtype=float)
        if angle_window.ndim != 2 or angle_window.shape != (len(window.times), chain.p_n):
            raise UnsupportedShapeError(
                f"angle window shape {angle_window.shape} does not match "
                f"({len(window.times)}, {chain.p_n})"
            )

    plist = [_get_model(models, angle_key(i)) for i in range(chain.p_n)]
    windows = [
        _require_length(angle_window[:, i], plist[i].lag_order, angle_key(i))
        for i in range(chain.p_n)
    ]
    bounded = config.mode == "constrained"
    active_scene = scene if bounded else SceneConstraints()

    children = np.random.SeedSequence(config.seed).spawn(config.steps)
    times = window.times[-1] + config.dt * np.arange(1, config.steps + 1)
    clouds, all_specs = [], []
    for s in range(config.steps):
        specs = predict_step(plist, windows, chain, config.dt, bounded=bounded)
        all_specs.append(specs)
        try:
            cloud = transport_and_filter(
                specs,
                chain,
                active_scene,
                float(times[s]),
                config.mc_samples,
                np.random.default_rng(children[s]),
                weight_joint=config.weight_joint,
                reject_joints=config.reject_joints,
            )
        except EmptyCloudError:
            if not clouds:
                raise
            cloud = replace(clouds[-1], t=float(times[s]), degraded=True)
        clouds.append(cloud)
        for i, spec in enumerate(specs):
            windows[i] = np.append(windows[i][1:], tn_mean(spec))
    return times, clouds, tuple(all_specs)


def predict_horizon(
    obs: ObservedSequence,
    models: Mapping[str, GpModel],
    chain: KinematicChain,
    scene: SceneConstraints,
    config: PredictionConfig,
    ik_config: PsoConfig = PsoConfig(),
    angle_window: np.ndarray | None = None,
) -> PredictionResult:
    """Predict steps = round(horizon/dt) clouds past the end of obs.

    angle_window, when given, must be the IK solution of the resampled
    observed window (rows aligned with its time grid) and skips the solver.
    """
    if config.mode == "task_space_gp":
        times, clouds, specs = _predict_task_space(obs, models, chain, config)
    else:
        times, clouds, specs = _predict_joint_space(
            obs, models, chain, config, scene, ik_config, angle_window
        )
    mean_trajectory = {
        name: np.stack([c.mean_positions()[name] for c in clouds])
        for name in chain.named_joints
    }
    return PredictionResult(
        mode=config.mode,
        times=times,
        clouds=tuple(clouds),
        mean_trajectory=mean_trajectory,
        tn_specs=specs,
    )


def save_clouds(result: PredictionResult, path: str) -> None:
    """Dump every sample of every cloud as CSV for external plotting.

    Rejected samples appear with weight 0 and accepted=0.
    """
    p_n = result.clouds[0].angles.shape[1] if result.clouds else 0
    theta_cols = [f"theta_{i + 1}" for i in range(p_n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "sample_id", *theta_cols, "joint", "x", "y", "z", "weight", "accepted"])
        for s, cloud in enumerate(result.clouds, start=1):
            blocks = (
                (cloud.angles, cloud.positions, cloud.weights, 1, 0),
                (cloud.rejected_angles, cloud.rejected_positions, None, 0, len(cloud.angles)),
            )
            for angles, positions, weights, accepted, id_base in blocks:
                for i in range(len(angles)):
                    thetas = [repr(float(v)) for v in angles[i]]
                    w = repr(float(weights[i])) if weights is not None else "0.0"
                    for joint, pos in positions.items():
                        writer.writerow(
                            [s, repr(float(cloud.t)), id_base + i, *thetas, joint,
                             repr(float(pos[i][0])), repr(float(pos[i][1])), repr(float(pos[i][2])),
                             w, accepted]
                        )
