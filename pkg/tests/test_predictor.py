"""Prediction pipeline: bounds, step specs, transport, horizon behavior."""

import csv

import numpy as np
import pytest

from cpdp import gp
from cpdp.dataio import SynthAngle, SynthConfig, generate_synthetic
from cpdp.distributions import tn_mean
from cpdp.errors import (
    ConfigError,
    EmptyCloudError,
    InvalidArgumentError,
    UnsupportedShapeError,
)
from cpdp.kinematics import DhLink, KinematicChain, default_chain, forward_kinematics
from cpdp.predictor import (
    PredictionConfig,
    angle_key,
    compute_bounds,
    coord_key,
    predict_horizon,
    predict_step,
    save_clouds,
    transport_and_filter,
)
from cpdp.scene import BoxConstraint, SceneConstraints

SINE = (
    SynthAngle(center=0.3, amplitude=0.35, frequency_hz=0.25),
    SynthAngle(center=0.0, amplitude=0.3, frequency_hz=0.2, phase=0.7),
    SynthAngle(center=0.1, amplitude=0.25, frequency_hz=0.3, phase=1.9),
    SynthAngle(center=1.3, amplitude=0.4, frequency_hz=0.25, phase=3.1),
)


def fit_signal(values, k=4, m=15, steps=40, seed=0):
    data = gp.build_lagged([np.asarray(values, dtype=float)], k)
    return gp.fit(data, m_inducing=m, seed=seed, options=gp.FitOptions(max_steps=steps, inducing_steps=0))


@pytest.fixture(scope="module")
def arm():
    return default_chain()


@pytest.fixture(scope="module")
def sine_world(arm):
    """Noisy synthetic sinusoidal motion, fitted angle models, a test window."""
    train = generate_synthetic(
        SynthConfig(chain=arm, angles=SINE, duration_s=30.0, rate_hz=10.0, noise_sigma=0.01, seed=3)
    )
    rng = np.random.default_rng(17)
    train_angles = np.stack([st.angles for st in train.angle_states])
    train_angles = train_angles + rng.normal(0.0, 0.01, train_angles.shape)
    models = {angle_key(i): fit_signal(train_angles[:, i]) for i in range(arm.p_n)}
    obs = generate_synthetic(
        SynthConfig(chain=arm, angles=SINE, duration_s=0.6, rate_hz=10.0, seed=9)
    )
    obs_angles = np.stack([st.angles for st in obs.angle_states])
    return models, obs.truth, obs_angles


@pytest.fixture(scope="module")
def xyz_models(arm):
    train = generate_synthetic(
        SynthConfig(chain=arm, angles=SINE, duration_s=30.0, rate_hz=10.0, noise_sigma=0.01, seed=3)
    )
    models = {}
    for name in arm.named_joints:
        for ax_i, ax in enumerate("xyz"):
            models[coord_key(name, ax)] = fit_signal(train.observed.positions[name][:, ax_i])
    return models


class TestComputeBounds:
    def test_velocity_envelope_inside_static(self):
        lb, ub, clamped = compute_bounds(0.0, -2.0, 2.0, 1.0, 0.1)
        assert (lb, ub) == (-0.1, 0.1)
        assert not clamped

    def test_static_bound_binds(self):
        lb, ub, clamped = compute_bounds(1.95, -2.0, 2.0, 1.0, 0.1)
        assert lb == pytest.approx(1.85)
        assert ub == 2.0
        assert not clamped

    def test_huge_velocity_gives_static(self):
        lb, ub, _ = compute_bounds(0.3, -2.0, 2.0, 1e9, 1.0)
        assert (lb, ub) == (-2.0, 2.0)

    def test_out_of_static_clamps_first(self):
        lb, ub, clamped = compute_bounds(2.5, -2.0, 2.0, 1.0, 0.1)
        assert clamped
        assert lb == pytest.approx(1.9)
        assert ub == 2.0
        assert lb < ub

    def test_vectorized(self):
        lb, ub, clamped = compute_bounds(
            np.array([0.0, 1.95]), np.array([-2.0, -2.0]), np.array([2.0, 2.0]), np.array([1.0, 1.0]), 0.1
        )
        assert np.allclose(lb, [-0.1, 1.85])
        assert np.allclose(ub, [0.1, 2.0])
        assert not clamped

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            compute_bounds(0.0, 2.0, -2.0, 1.0, 0.1)
        with pytest.raises(InvalidArgumentError):
            compute_bounds(0.0, -2.0, 2.0, 1.0, 0.0)


def one_joint_chain(vel_ub=0.5):
    return KinematicChain(
        links=(DhLink(theta_offset=0.0, d=0.0, a=0.3, alpha=0.0, joint_index=0),),
        angle_lb=np.array([-3.0]),
        angle_ub=np.array([3.0]),
        vel_ub=np.array([vel_ub]),
        named_joints={"tip": 1},
    )


class TestPredictStep:
    def test_spec_fields_compose_posterior_and_bounds(self, arm, sine_world):
        models, _, obs_angles = sine_world
        plist = [models[angle_key(i)] for i in range(arm.p_n)]
        windows = [obs_angles[-4:, i] for i in range(arm.p_n)]
        specs = predict_step(plist, windows, arm, 0.1)
        for i, spec in enumerate(specs):
            mu, var = gp.posterior(plist[i], windows[i])
            lb, ub, _ = compute_bounds(windows[i][-1], arm.angle_lb[i], arm.angle_ub[i], arm.vel_ub[i], 0.1)
            assert spec.mu == mu
            assert spec.sigma == pytest.approx(np.sqrt(var), abs=0.0)
            assert spec.lb == lb
            assert spec.ub == ub

    def test_mean_pulled_inside_bounds(self):
        # ramp signal makes the GP extrapolate past what the velocity allows
        chain = one_joint_chain(vel_ub=0.5)
        ramp = np.arange(0.0, 2.0, 0.1)
        model = fit_signal(ramp, k=3, m=15, steps=60)
        window = ramp[-3:]
        mu, _ = gp.posterior(model, window)
        (spec,) = predict_step([model], [window], chain, 0.1)
        assert mu > spec.ub  # the raw prediction violates the envelope
        m = tn_mean(spec)
        assert spec.lb < m < spec.ub

    def test_near_point_mass_at_training_output(self):
        chain = one_joint_chain(vel_ub=100.0)
        x = np.linspace(0.0, 2.0, 30)
        model = fit_signal(np.sin(x), k=3, steps=60, m=27)
        data = gp.build_lagged([np.sin(x)], 3)
        (spec,) = predict_step([model], [data.inputs[10]], chain, 0.1)
        assert spec.sigma < 0.05
        assert abs(tn_mean(spec) - data.outputs[10]) < 0.05

    def test_unbounded_mode(self, arm, sine_world):
        models, _, obs_angles = sine_world
        plist = [models[angle_key(i)] for i in range(arm.p_n)]
        windows = [obs_angles[-4:, i] for i in range(arm.p_n)]
        specs = predict_step(plist, windows, arm, 0.1, bounded=False)
        assert all(s.lb == -np.inf and s.ub == np.inf for s in specs)

    def test_window_shape_errors(self, arm, sine_world):
        models, _, obs_angles = sine_world
        plist = [models[angle_key(i)] for i in range(arm.p_n)]
        windows = [obs_angles[-3:, i] for i in range(arm.p_n)]  # lag order is 4
        with pytest.raises(UnsupportedShapeError):
            predict_step(plist, windows, arm, 0.1)


@pytest.fixture(scope="module")
def step_specs(arm, sine_world):
    models, _, obs_angles = sine_world
    plist = [models[angle_key(i)] for i in range(arm.p_n)]
    windows = [obs_angles[-4:, i] for i in range(arm.p_n)]
    return predict_step(plist, windows, arm, 0.1)


class TestTransportAndFilter:
    def test_empty_scene_keeps_everything(self, arm, step_specs):
        cloud = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 2000, seed=0)
        assert cloud.rejected_count == 0
        assert abs(cloud.weights.sum() - 1.0) < 1e-9
        assert cloud.angles.shape == (2000, 4)
        for i, spec in enumerate(step_specs):
            assert np.all(cloud.angles[:, i] >= spec.lb)
            assert np.all(cloud.angles[:, i] <= spec.ub)

    def test_infeasible_scene_raises(self, arm, step_specs):
        sky = SceneConstraints(boxes=(
            BoxConstraint(min_corner=(-np.inf, -np.inf, 5.0), max_corner=(np.inf, np.inf, np.inf), kind="keep_in"),
        ))
        with pytest.raises(EmptyCloudError) as err:
            transport_and_filter(step_specs, arm, sky, 0.7, 500, seed=0)
        assert err.value.rejected_count == 500

    def test_halfspace_splits_cloud(self, arm, step_specs):
        pilot = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 4000, seed=1)
        split = float(np.median(pilot.positions["wrist"][:, 1]))
        plane = SceneConstraints(boxes=(
            BoxConstraint(min_corner=(-np.inf, -np.inf, -np.inf), max_corner=(np.inf, split, np.inf), kind="keep_in"),
        ))
        cloud = transport_and_filter(
            step_specs, arm, plane, 0.7, 4000, seed=1, reject_joints=("wrist",)
        )
        assert 0.35 <= cloud.rejected_count / 4000 <= 0.65
        assert abs(cloud.weights.sum() - 1.0) < 1e-9
        assert np.all(cloud.positions["wrist"][:, 1] <= split)

    def test_monotone_rejection(self, arm, step_specs):
        pilot = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 2000, seed=2)
        z0 = float(np.median(pilot.positions["wrist"][:, 2]))
        last = 0
        saw_partial = False
        for grow in (0.001, 0.003, 0.006, 0.02):
            box = BoxConstraint(
                min_corner=(-1.0, -1.0, z0 - grow), max_corner=(1.0, 1.0, z0 + grow), kind="keep_out"
            )
            try:
                cloud = transport_and_filter(
                    step_specs, arm, SceneConstraints(boxes=(box,)), 0.7, 2000, seed=2
                )
                rejected = cloud.rejected_count
            except EmptyCloudError as err:
                rejected = err.rejected_count
            assert rejected >= last
            saw_partial = saw_partial or 0 < rejected < 2000
            last = rejected
        assert saw_partial  # the sweep must exercise interior rejection counts

    def test_deterministic(self, arm, step_specs):
        a = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 1000, seed=5)
        b = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 1000, seed=5)
        assert np.array_equal(a.angles, b.angles)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.positions["wrist"], b.positions["wrist"])

    def test_time_gated_box_only_applies_when_active(self, arm, step_specs):
        pilot = transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 1000, seed=3)
        lo = pilot.positions["wrist"].min(axis=0) - 0.05
        hi = pilot.positions["wrist"].max(axis=0) + 0.05
        box = BoxConstraint(min_corner=lo, max_corner=hi, kind="keep_out", t_start=1.0, t_end=2.0)
        scene = SceneConstraints(boxes=(box,))
        before = transport_and_filter(step_specs, arm, scene, 0.7, 1000, seed=3)
        assert before.rejected_count == 0
        with pytest.raises(EmptyCloudError):
            transport_and_filter(step_specs, arm, scene, 1.5, 1000, seed=3)

    def test_unknown_joint_errors(self, arm, step_specs):
        with pytest.raises(InvalidArgumentError):
            transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 500, 0, weight_joint="hand")
        with pytest.raises(InvalidArgumentError):
            transport_and_filter(step_specs, arm, SceneConstraints(), 0.7, 500, 0, reject_joints=("hand",))


class TestPredictionConfig:
    def test_steps_count(self):
        assert PredictionConfig(horizon=0.5, dt=0.1).steps == 5

    def test_validation(self):
        with pytest.raises(ConfigError):
            PredictionConfig(mode="gp")
        with pytest.raises(ConfigError):
            PredictionConfig(horizon=-1.0)
        with pytest.raises(ConfigError):
            PredictionConfig(mc_samples=50)


class TestPredictHorizon:
    def test_cloud_count_and_times(self, arm, sine_world):
        models, obs, obs_angles = sine_world
        config = PredictionConfig(mode="constrained", mc_samples=400, seed=0)
        result = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)
        assert len(result.clouds) == 5
        assert np.allclose(result.times, obs.times[-1] + 0.1 * np.arange(1, 6))
        assert result.mean_trajectory["wrist"].shape == (5, 3)
        assert len(result.tn_specs) == 5 and len(result.tn_specs[0]) == 4

    def test_stationary_input_stays_put(self, arm):
        const = tuple(SynthAngle(center=c, amplitude=0.0, frequency_hz=0.2) for c in (0.4, 0.1, -0.2, 1.2))
        rng = np.random.default_rng(11)
        signals = [rng.normal(c.center, 0.001, 200) for c in const]
        models = {angle_key(i): fit_signal(signals[i]) for i in range(4)}
        obs = generate_synthetic(SynthConfig(chain=arm, angles=const, duration_s=0.6, rate_hz=10.0)).truth
        theta = np.array([c.center for c in const])
        window = np.tile(theta, (7, 1))
        config = PredictionConfig(mode="constrained", mc_samples=2000, seed=1)
        result = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=window)
        pose = forward_kinematics(arm, theta)
        for name in arm.named_joints:
            for s, cloud in enumerate(result.clouds):
                spread = np.sqrt(cloud.weights @ np.sum(
                    (cloud.positions[name] - result.mean_trajectory[name][s]) ** 2, axis=1
                ))
                drift = np.linalg.norm(result.mean_trajectory[name][s] - pose[name])
                assert drift < max(3.0 * spread, 1e-3)

    def test_mode_nesting(self, sine_world):
        # huge static bounds and velocity make truncation inactive, so the
        # constrained path must collapse onto the unconstrained one
        models, obs, obs_angles = sine_world
        arm = default_chain()
        wide = KinematicChain(
            links=arm.links,
            angle_lb=np.full(4, -1e3),
            angle_ub=np.full(4, 1e3),
            vel_ub=np.full(4, 1e6),
            named_joints=dict(arm.named_joints),
        )
        base = dict(mc_samples=400, seed=7)
        r_c = predict_horizon(obs, models, wide, SceneConstraints(), PredictionConfig(mode="constrained", **base), angle_window=obs_angles)
        r_j = predict_horizon(obs, models, wide, SceneConstraints(), PredictionConfig(mode="joint_angle_gp", **base), angle_window=obs_angles)
        for specs_c, specs_j in zip(r_c.tn_specs, r_j.tn_specs):
            for sc, sj in zip(specs_c, specs_j):
                assert abs(tn_mean(sc) - tn_mean(sj)) < 1e-12

    def test_degraded_fallback_reuses_previous_cloud(self, arm, sine_world):
        models, obs, obs_angles = sine_world
        t3 = obs.times[-1] + 0.3
        everywhere = BoxConstraint(
            min_corner=(-2.0, -2.0, -2.0), max_corner=(2.0, 2.0, 2.0), kind="keep_out",
            t_start=t3 - 0.05, t_end=np.inf,
        )
        config = PredictionConfig(mode="constrained", mc_samples=300, seed=2)
        result = predict_horizon(obs, models, arm, SceneConstraints(boxes=(everywhere,)), config, angle_window=obs_angles)
        assert not result.clouds[0].degraded
        assert not result.clouds[1].degraded
        for s in (2, 3, 4):
            assert result.clouds[s].degraded
            assert result.clouds[s].t == pytest.approx(result.times[s])
            assert np.array_equal(result.clouds[s].angles, result.clouds[1].angles)

    def test_infeasible_first_step_raises(self, arm, sine_world):
        models, obs, obs_angles = sine_world
        everywhere = BoxConstraint(min_corner=(-2.0, -2.0, -2.0), max_corner=(2.0, 2.0, 2.0), kind="keep_out")
        config = PredictionConfig(mode="constrained", mc_samples=300, seed=2)
        with pytest.raises(EmptyCloudError):
            predict_horizon(obs, models, arm, SceneConstraints(boxes=(everywhere,)), config, angle_window=obs_angles)

    def test_task_space_mode(self, arm, sine_world, xyz_models):
        _, obs, _ = sine_world
        config = PredictionConfig(mode="task_space_gp", mc_samples=500, seed=4)
        result = predict_horizon(obs, xyz_models, arm, SceneConstraints(), config)
        assert len(result.clouds) == 5
        for cloud in result.clouds:
            assert cloud.angles.shape == (500, 0)
            assert cloud.rejected_count == 0
            assert abs(cloud.weights.sum() - 1.0) < 1e-9
        assert result.tn_specs == ((), (), (), (), ())

    def test_deterministic(self, arm, sine_world):
        models, obs, obs_angles = sine_world
        config = PredictionConfig(mode="constrained", mc_samples=400, seed=12)
        a = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)
        b = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)
        for name in arm.named_joints:
            assert np.array_equal(a.mean_trajectory[name], b.mean_trajectory[name])
        for ca, cb in zip(a.clouds, b.clouds):
            assert np.array_equal(ca.weights, cb.weights)

    def test_ik_path_matches_provided_angles(self, arm, sine_world):
        # without a precomputed angle window the solver recovers it from obs
        models, obs, obs_angles = sine_world
        config = PredictionConfig(mode="constrained", mc_samples=300, seed=5)
        via_ik = predict_horizon(obs, models, arm, SceneConstraints(), config)
        direct = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)
        for name in arm.named_joints:
            assert np.allclose(
                via_ik.mean_trajectory[name], direct.mean_trajectory[name], atol=0.02
            )

    def test_too_short_window_errors(self, arm, sine_world):
        models, obs, obs_angles = sine_world
        config = PredictionConfig(mode="constrained", observed_window=2.0, mc_samples=300)
        with pytest.raises(InvalidArgumentError):
            predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)


class TestSaveClouds:
    def test_round_numbers(self, arm, sine_world, tmp_path):
        models, obs, obs_angles = sine_world
        config = PredictionConfig(mode="constrained", mc_samples=200, seed=0)
        result = predict_horizon(obs, models, arm, SceneConstraints(), config, angle_window=obs_angles)
        path = tmp_path / "clouds.csv"
        save_clouds(result, str(path))
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5 * 200 * 3
        step1 = [r for r in rows if r["step"] == "1" and r["joint"] == "wrist"]
        assert len(step1) == 200
        total = sum(float(r["weight"]) for r in step1 if r["accepted"] == "1")
        assert total == pytest.approx(1.0, abs=1e-9)
        assert set(rows[0].keys()) == {
            "step", "t", "sample_id", "theta_1", "theta_2", "theta_3", "theta_4",
            "joint", "x", "y", "z", "weight", "accepted",
        }
