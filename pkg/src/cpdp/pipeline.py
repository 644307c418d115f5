"""End-to-end commands: fit, predict, synth, and the benchmark evaluate.

Each run_* function takes one RunConfig, writes its artifacts under
``out_dir``, and returns the matching response model.  The service routes
and the CLI are thin wrappers around these four functions.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .dataio import (
    ObservedSequence,
    SynthAngle,
    SynthConfig,
    generate_synthetic,
    load_trajectory,
    resample,
    save_trajectory,
)
from .errors import ConfigError
from .gp import FitOptions, GpModel, build_lagged, fit, load_model, save_model
from .ik import PsoConfig, solve_trajectory
from .kinematics import KinematicChain, default_chain, load_chain
from .metrics import EvaluationReport, mpjpe, nll, save_report
from .predictor import (
    AXES,
    PredictionConfig,
    angle_key,
    coord_key,
    predict_horizon,
    save_clouds,
)
from .scene import BoxConstraint, SceneConstraints, load_scene
from .service.schemas import (
    EvaluateResponse,
    EvaluateRow,
    FitResponse,
    PredictResponse,
    RunConfig,
    SynthResponse,
    SynthSettings,
)

log = logging.getLogger(__name__)

MEAN_FILE = "mean_trajectory.csv"
CLOUD_FILE = "clouds.csv"
REPORT_FILE = "report.csv"
WINDOW_FILE = "nll_windows.csv"
SYNTH_FILE = "synthetic.csv"
SYNTH_ANGLES_FILE = "synthetic_angles.csv"
MODELS_DIR = "models"

# Benchmark trajectory draws, as fractions of each angle's static span.
AMP_FRACTION = (0.06, 0.12)
CENTER_MARGIN_FRACTION = 0.1
FREQ_RANGE_HZ = (0.15, 0.35)
VEL_SAFETY = 0.8

# IK budget for benchmark runs.  The tolerance is matched to the benchmark's
# observation noise: tighter targets cannot be hit on noisy frames and only
# burn the restart budget.
BENCHMARK_IK = {
    "swarm_size": 30,
    "iterations": 80,
    "tolerance": 0.012,
    "restarts": 2,
    "seed": 0,
}


def _thread_count() -> int:
    raw = os.environ.get("CPDP_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise ConfigError(f"CPDP_THREADS must be an integer, got {raw!r}")


def _out_dir(config: RunConfig) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_run_chain(config: RunConfig) -> KinematicChain:
    if config.chain_file:
        return load_chain(config.chain_file)
    return default_chain()


def _load_run_scene(config: RunConfig) -> SceneConstraints:
    if config.scene_file:
        return load_scene(config.scene_file)
    return SceneConstraints()


def _pso_config(config: RunConfig) -> PsoConfig:
    ik = config.ik
    return PsoConfig(
        swarm_size=ik.swarm_size,
        iterations=ik.iterations,
        tolerance=ik.tolerance,
        restarts=ik.restarts,
        seed=ik.seed,
    )


def _prediction_config(config: RunConfig, seed: int | None = None, mc_samples: int | None = None) -> PredictionConfig:
    p = config.prediction
    return PredictionConfig(
        mode=config.resolved_mode,
        observed_window=p.observed_window,
        horizon=p.horizon,
        dt=p.dt,
        mc_samples=p.mc_samples if mc_samples is None else mc_samples,
        seed=p.seed if seed is None else seed,
        weight_joint=p.weight_joint,
        reject_joints=tuple(p.reject_joints) if p.reject_joints else None,
    )


def _synth_config(settings: SynthSettings, chain: KinematicChain) -> SynthConfig:
    return SynthConfig(
        chain=chain,
        angles=tuple(
            SynthAngle(
                center=a.center,
                amplitude=a.amplitude,
                frequency_hz=a.frequency_hz,
                phase=a.phase,
            )
            for a in settings.angles
        ),
        duration_s=settings.duration_s,
        rate_hz=settings.rate_hz,
        noise_sigma=settings.noise_sigma,
        seed=settings.seed,
    )


def _input_sequences(config: RunConfig, chain: KinematicChain) -> list[ObservedSequence]:
    data = config.data
    if data.synth is not None:
        return [generate_synthetic(_synth_config(data.synth, chain)).observed]
    if data.trajectory_file:
        return load_trajectory(data.trajectory_file)
    raise ConfigError("data requires either trajectory_file or synth")


def _angle_signals(
    sequences: list[ObservedSequence], chain: KinematicChain, ik_config: PsoConfig
) -> dict[str, list[np.ndarray]]:
    signals: dict[str, list[np.ndarray]] = {angle_key(i): [] for i in range(chain.p_n)}
    for seq in sequences:
        states = solve_trajectory(seq, chain, ik_config)
        angles = np.stack([st.angles for st in states])
        for i in range(chain.p_n):
            signals[angle_key(i)].append(angles[:, i])
    return signals


def _coord_signals(
    sequences: list[ObservedSequence], chain: KinematicChain
) -> dict[str, list[np.ndarray]]:
    signals: dict[str, list[np.ndarray]] = {}
    for name in chain.named_joints:
        for ax_i, ax in enumerate(AXES):
            signals[coord_key(name, ax)] = [seq.positions[name][:, ax_i] for seq in sequences]
    return signals


def _fit_signals(
    signals: dict[str, list[np.ndarray]],
    lag: int,
    m_inducing: int,
    seed: int,
    options: FitOptions,
) -> dict[str, GpModel]:
    models = {}
    for key in sorted(signals):
        data = build_lagged(signals[key], lag)
        model = fit(data, m_inducing=m_inducing, seed=seed, options=options)
        model.signal = key
        models[key] = model
        log.info("fitted %s: n=%d ll=%.2f", key, len(data.outputs), model.log_likelihood)
    return models


def run_fit(config: RunConfig) -> FitResponse:
    """Fit one regressor per signal of the selected mode and save them.

    Task-space mode fits one model per named joint coordinate; the joint
    angle modes share a single set of per-angle models recovered through
    inverse kinematics, so fitting with either alias produces the same
    files.
    """
    chain = _load_run_chain(config)
    rate = 1.0 / config.prediction.dt
    sequences = [resample(s, rate) for s in _input_sequences(config, chain)]
    if config.resolved_mode == "task_space_gp":
        missing = [n for n in chain.named_joints if n not in sequences[0].positions]
        if missing:
            raise ConfigError(f"input data lacks named joints {missing}")
        signals = _coord_signals(sequences, chain)
    else:
        signals = _angle_signals(sequences, chain, _pso_config(config))

    options = FitOptions(max_steps=config.gp.max_steps, inducing_steps=config.gp.inducing_steps)
    models = _fit_signals(signals, config.gp.lag, config.gp.m_inducing, config.gp.seed, options)

    models_dir = _out_dir(config) / MODELS_DIR
    models_dir.mkdir(exist_ok=True)
    files = {}
    for key, model in models.items():
        path = models_dir / f"{key}.json"
        save_model(model, str(path))
        files[key] = str(path)
    return FitResponse(
        models_dir=str(models_dir),
        files=files,
        log_likelihoods={k: float(m.log_likelihood) for k, m in models.items()},
    )


def _load_models(models_dir: Path) -> dict[str, GpModel]:
    if not models_dir.is_dir():
        raise ConfigError(f"model directory {models_dir} does not exist; run fit first")
    models = {}
    for path in sorted(models_dir.glob("*.json")):
        model = load_model(str(path))
        models[model.signal or path.stem] = model
    if not models:
        raise ConfigError(f"model directory {models_dir} holds no model files")
    return models


def run_predict(config: RunConfig) -> PredictResponse:
    """Predict past the end of the input data and dump cloud + mean CSVs."""
    chain = _load_run_chain(config)
    scene = _load_run_scene(config)
    models = _load_models(_out_dir(config) / MODELS_DIR)
    sequences = _input_sequences(config, chain)
    obs = sequences[-1]  # gap-split files predict from the latest segment

    result = predict_horizon(
        obs, models, chain, scene, _prediction_config(config), _pso_config(config)
    )

    out = _out_dir(config)
    cloud_file = out / CLOUD_FILE
    save_clouds(result, str(cloud_file))
    mean_file = out / MEAN_FILE
    mean_seq = ObservedSequence(
        times=result.times,
        positions=result.mean_trajectory,
        metadata={"mode": result.mode, "source": "predicted_mean"},
    )
    save_trajectory(mean_seq, str(mean_file))
    return PredictResponse(
        cloud_file=str(cloud_file),
        mean_file=str(mean_file),
        steps=len(result.clouds),
        degraded_steps=[i for i, c in enumerate(result.clouds) if c.degraded],
        rejected_counts=[int(c.rejected_count) for c in result.clouds],
    )


def _write_angle_states(states, path: str) -> None:
    p_n = len(states[0].angles)
    lines = ["time_s," + ",".join(angle_key(i) for i in range(p_n))]
    for st in states:
        lines.append(",".join([repr(float(st.timestamp))] + [repr(float(a)) for a in st.angles]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_synth(config: RunConfig) -> SynthResponse:
    """Generate a synthetic trajectory file plus its ground-truth angles."""
    if config.data.synth is None:
        raise ConfigError("synth requires data.synth settings")
    chain = _load_run_chain(config)
    result = generate_synthetic(_synth_config(config.data.synth, chain))

    out = _out_dir(config)
    trajectory_file = out / SYNTH_FILE
    save_trajectory(result.observed, str(trajectory_file))
    angles_file = out / SYNTH_ANGLES_FILE
    _write_angle_states(result.angle_states, str(angles_file))
    return SynthResponse(
        trajectory_file=str(trajectory_file),
        angles_file=str(angles_file),
        frames=len(result.observed),
    )


def _draw_benchmark_angles(chain: KinematicChain, rng: np.random.Generator) -> tuple[SynthAngle, ...]:
    """Random smooth sinusoids, scaled to the chain's bounds with margin."""
    angles = []
    for i in range(chain.p_n):
        span = chain.angle_ub[i] - chain.angle_lb[i]
        amp = rng.uniform(*AMP_FRACTION) * span
        margin = CENTER_MARGIN_FRACTION * span + amp
        center = rng.uniform(chain.angle_lb[i] + margin, chain.angle_ub[i] - margin)
        f_max = min(FREQ_RANGE_HZ[1], VEL_SAFETY * chain.vel_ub[i] / (2.0 * np.pi * amp))
        freq = rng.uniform(FREQ_RANGE_HZ[0], max(FREQ_RANGE_HZ[0] + 1e-6, f_max))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles.append(SynthAngle(center=center, amplitude=amp, frequency_hz=freq, phase=phase))
    return tuple(angles)


def _benchmark_synth(chain, ss, duration_s, rate_hz, noise_sigma):
    angle_ss, noise_ss = ss.spawn(2)
    return generate_synthetic(
        SynthConfig(
            chain=chain,
            angles=_draw_benchmark_angles(chain, np.random.default_rng(angle_ss)),
            duration_s=duration_s,
            rate_hz=rate_hz,
            noise_sigma=noise_sigma,
            seed=int(noise_ss.generate_state(1)[0]),
        )
    )


def _slice_sequence(seq: ObservedSequence, start: int, stop: int) -> ObservedSequence:
    return ObservedSequence(
        times=seq.times[start:stop],
        positions={n: p[start:stop] for n, p in seq.positions.items()},
        metadata=dict(seq.metadata),
    )


class _EvalWindow:
    """One benchmark prediction task: observation, scene, and truth."""

    def __init__(self, obs, angle_window, scene, truth, zoh_mpjpe):
        self.obs = obs
        self.angle_window = angle_window
        self.scene = scene
        self.truth = truth
        self.zoh_mpjpe = zoh_mpjpe


def _wrist_joint(chain: KinematicChain) -> str:
    if "wrist" in chain.named_joints:
        return "wrist"
    # fall back to the most distal named joint
    return max(chain.named_joints, key=chain.named_joints.get)


def _build_eval_window(config: RunConfig, chain, ik_config, ss) -> _EvalWindow:
    p = config.prediction
    ev = config.evaluate
    steps = int(round(p.horizon / p.dt))
    win_n = ev.gp_lag + 1
    result = _benchmark_synth(chain, ss, ev.duration_s, 1.0 / p.dt, ev.noise_sigma)
    n = len(result.truth)
    if n < win_n + steps:
        raise ConfigError(
            f"evaluate duration {ev.duration_s}s is too short for the prediction window"
        )

    wrist = _wrist_joint(chain)
    z = result.truth.positions[wrist][:, 2]
    # End the observation so the horizon covers the final descent toward the
    # plane, with the closest approach landing on the last prediction step.
    obs_end = int(np.argmin(z)) - steps
    obs_end = int(np.clip(obs_end, win_n - 1, n - 1 - steps))

    obs = _slice_sequence(result.observed, obs_end - win_n + 1, obs_end + 1)
    states = solve_trajectory(obs, chain, ik_config)
    angle_window = np.stack([st.angles for st in states])

    truth_idx = slice(obs_end + 1, obs_end + 1 + steps)
    truth = {name: result.truth.positions[name][truth_idx] for name in chain.named_joints}

    table_z = float(np.min(truth[wrist][:, 2])) - ev.table_clearance
    scene = SceneConstraints(
        boxes=(
            BoxConstraint(
                min_corner=np.array([-np.inf, -np.inf, table_z]),
                max_corner=np.array([np.inf, np.inf, np.inf]),
                kind="keep_in",
            ),
        )
    )

    last = {name: result.observed.positions[name][obs_end] for name in chain.named_joints}
    zoh = {name: np.tile(last[name], (steps, 1)) for name in chain.named_joints}
    return _EvalWindow(obs, angle_window, scene, truth, mpjpe(truth, zoh))


def run_evaluate(config: RunConfig) -> EvaluateResponse:
    """Benchmark all three modes on a synthetic suite near a table plane.

    Training trajectories are fitted once per signal family; every
    repetition then re-runs the Monte Carlo predictions with independent
    seeds on the same evaluation windows.  The report aggregates each
    repetition's window mean, so the stated errors are over repetitions.
    """
    t_begin = time.perf_counter()
    chain = _load_run_chain(config)
    ev = config.evaluate
    p = config.prediction
    ik_config = _pso_config(config)
    rate = 1.0 / p.dt

    root = np.random.SeedSequence(ev.seed)
    train_root, eval_root, rep_root = root.spawn(3)

    train = [
        _benchmark_synth(chain, ss, ev.duration_s, rate, ev.noise_sigma).observed
        for ss in train_root.spawn(ev.n_train)
    ]
    options = FitOptions(max_steps=ev.gp_max_steps, inducing_steps=0)
    log.info("fitting %d task-space and %d angle models", 3 * len(chain.named_joints), chain.p_n)
    models_xyz = _fit_signals(
        _coord_signals(train, chain), ev.gp_lag, ev.gp_m_inducing, config.gp.seed, options
    )
    models_angle = _fit_signals(
        _angle_signals(train, chain, ik_config), ev.gp_lag, ev.gp_m_inducing, config.gp.seed, options
    )

    windows = [
        _build_eval_window(config, chain, ik_config, ss) for ss in eval_root.spawn(ev.n_eval)
    ]
    log.info("built %d evaluation windows", len(windows))

    modes = ("task_space_gp", "joint_angle_gp", "constrained")
    wrist = _wrist_joint(chain)
    rep_seeds = [
        [int(wss.generate_state(1)[0]) for wss in rss.spawn(ev.n_eval)]
        for rss in rep_root.spawn(ev.repetitions)
    ]

    def run_rep(rep: int) -> dict[str, list[tuple[float, float]]]:
        out: dict[str, list[tuple[float, float]]] = {m: [] for m in modes}
        for w, window in enumerate(windows):
            for mode in modes:
                # the table plane sits under the wrist workspace; other
                # joints (elbow below the wrist is a normal arm pose) are
                # not constrained by it
                cfg = PredictionConfig(
                    mode=mode,
                    observed_window=ev.gp_lag * p.dt,
                    horizon=p.horizon,
                    dt=p.dt,
                    mc_samples=ev.mc_samples,
                    seed=rep_seeds[rep][w],
                    weight_joint=wrist,
                    reject_joints=(wrist,),
                )
                models = models_xyz if mode == "task_space_gp" else models_angle
                angle_window = None if mode == "task_space_gp" else window.angle_window
                result = predict_horizon(
                    window.obs, models, chain, window.scene, cfg, ik_config, angle_window
                )
                err = mpjpe(window.truth, result.mean_trajectory)
                nll_val = nll(
                    window.truth[wrist], result.clouds, grid_res=ev.grid_res, joint=wrist
                )
                out[mode].append((err, nll_val))
        return out

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rep_results = list(pool.map(run_rep, range(ev.repetitions)))
    else:
        rep_results = [run_rep(r) for r in range(ev.repetitions)]

    reports = []
    for mode in modes:
        rep_mpjpe, rep_nll = [], []
        for res in rep_results:
            vals = np.asarray(res[mode])
            rep_mpjpe.append(float(np.mean(vals[:, 0])))
            rep_nll.append(float(np.mean(vals[:, 1])))
        reports.append(
            EvaluationReport(
                mode=mode, mpjpe_per_window=tuple(rep_mpjpe), nll_per_window=tuple(rep_nll)
            )
        )

    out = _out_dir(config)
    report_file = out / REPORT_FILE
    save_report(reports, str(report_file))

    window_file = out / WINDOW_FILE
    lines = ["mode,repetition,window,mpjpe_mm,nll"]
    for rep, res in enumerate(rep_results):
        for mode in modes:
            for w, (err, nll_val) in enumerate(res[mode]):
                lines.append(f"{mode},{rep},{w},{repr(float(err))},{repr(float(nll_val))}")
    with open(window_file, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    zoh = float(np.mean([w.zoh_mpjpe for w in windows]))
    rows = [
        EvaluateRow(
            mode=r.mode,
            mpjpe_mm=r.mpjpe_mm,
            mpjpe_stderr=r.mpjpe_stderr,
            nll_mean=r.nll_mean,
            nll_stderr=r.nll_stderr,
            n_windows=r.n_windows,
        )
        for r in reports
    ]
    return EvaluateResponse(
        report_file=str(report_file),
        nll_file=str(window_file),
        rows=rows,
        zoh_mpjpe_mm=zoh,
        runtime_s=time.perf_counter() - t_begin,
    )
