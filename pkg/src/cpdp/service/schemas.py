"""Request and response models for the service endpoints.

A single RunConfig drives every command.  The CLI reads it from a JSON
file, applies flag overrides, and posts it as the request body, so the
defaults here are the defaults of the whole toolchain.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, field_validator

# Short mode aliases accepted on the wire and on the command line.
MODE_ALIASES = {
    "xyz": "task_space_gp",
    "ja": "joint_angle_gp",
    "constr": "constrained",
}

_CANONICAL_MODES = tuple(MODE_ALIASES.values())


def canonical_mode(mode: str) -> str:
    """Map a mode alias to its canonical name (identity on canonical names)."""
    if mode in MODE_ALIASES:
        return MODE_ALIASES[mode]
    if mode in _CANONICAL_MODES:
        return mode
    raise ValueError(f"unknown mode {mode!r}")


class GpSettings(BaseModel):
    """Hyperparameters for the per-signal regressors."""

    lag: int = Field(default=6, ge=1)
    m_inducing: int = Field(default=30, ge=1)
    max_steps: int = Field(default=200, ge=0)
    inducing_steps: int = Field(default=15, ge=0)
    seed: int = 0


class IkSettings(BaseModel):
    """Budget for the particle-swarm inverse kinematics solver."""

    swarm_size: int = Field(default=40, ge=2)
    iterations: int = Field(default=150, ge=1)
    tolerance: float = Field(default=1e-3, gt=0.0)
    restarts: int = Field(default=6, ge=1)
    seed: int = 0


class PredictionSettings(BaseModel):
    """Shape of a single prediction run."""

    observed_window: float = Field(default=0.6, gt=0.0)
    horizon: float = Field(default=0.5, gt=0.0)
    dt: float = Field(default=0.1, gt=0.0)
    mc_samples: int = Field(default=10000, ge=1)
    seed: int = 0
    weight_joint: str | None = None
    reject_joints: list[str] | None = None


class SynthAngleSettings(BaseModel):
    center: float
    amplitude: float = Field(ge=0.0)
    frequency_hz: float = Field(gt=0.0)
    phase: float = 0.0


class SynthSettings(BaseModel):
    """Sinusoidal joint-space trajectory generator."""

    angles: list[SynthAngleSettings]
    duration_s: float = Field(default=6.0, gt=0.0)
    rate_hz: float = Field(default=10.0, gt=0.0)
    noise_sigma: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class DataSettings(BaseModel):
    """Input data: a recorded trajectory file or a synthetic generator."""

    trajectory_file: str | None = None
    synth: SynthSettings | None = None


class EvaluateSettings(BaseModel):
    """Benchmark suite: sizes, repetition count, and reduced budgets.

    The benchmark runs many predictions, so it carries its own Monte
    Carlo and fitting budgets instead of inheriting the heavier
    single-run defaults.
    """

    n_train: int = Field(default=16, ge=1)
    n_eval: int = Field(default=20, ge=1)
    repetitions: int = Field(default=25, ge=1)
    # keep voxels coarse enough that the Monte Carlo clouds populate them
    grid_res: int = Field(default=8, ge=4)
    mc_samples: int = Field(default=6000, ge=1)
    noise_sigma: float = Field(default=0.005, ge=0.0)
    duration_s: float = Field(default=6.0, gt=0.0)
    table_clearance: float = Field(default=0.02, gt=0.0)
    # the benchmark uses a longer lag than the single-run default: the
    # windows end right before a turning point of the wrist path, and a
    # short embedding cannot see the turn coming
    gp_lag: int = Field(default=12, ge=1)
    gp_m_inducing: int = Field(default=25, ge=1)
    gp_max_steps: int = Field(default=80, ge=0)
    seed: int = 0


class RunConfig(BaseModel):
    """Everything a command needs: data, kinematics, budgets, output."""

    chain_file: str | None = None
    scene_file: str | None = None
    out_dir: str = "out"
    mode: str = "constr"
    prediction: PredictionSettings = PredictionSettings()
    gp: GpSettings = GpSettings()
    ik: IkSettings = IkSettings()
    data: DataSettings = DataSettings()
    evaluate: EvaluateSettings = EvaluateSettings()

    @field_validator("mode")
    @classmethod
    def _check_mode(cls, value: str) -> str:
        canonical_mode(value)
        return value

    @property
    def resolved_mode(self) -> str:
        return canonical_mode(self.mode)


class RunRequest(BaseModel):
    config: RunConfig = RunConfig()


class FitResponse(BaseModel):
    models_dir: str
    files: dict[str, str]
    log_likelihoods: dict[str, float]


class PredictResponse(BaseModel):
    cloud_file: str
    mean_file: str
    steps: int
    degraded_steps: list[int]
    rejected_counts: list[int]


class SynthResponse(BaseModel):
    trajectory_file: str
    angles_file: str
    frames: int


class EvaluateRow(BaseModel):
    mode: str
    mpjpe_mm: float
    mpjpe_stderr: float
    nll_mean: float
    nll_stderr: float
    n_windows: int


class EvaluateResponse(BaseModel):
    report_file: str
    nll_file: str
    rows: list[EvaluateRow]
    zoh_mpjpe_mm: float
    runtime_s: float


class ErrorBody(BaseModel):
    code: str
    message: str


class HealthResponse(BaseModel):
    status: str
    version: str
