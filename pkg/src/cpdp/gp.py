"""Sparse Gaussian-process regression on lagged scalar sequences.

One model predicts the next value of one scalar signal from its last k
values.  Training uses the FITC approximation: the marginal likelihood is
evaluated through Cholesky factors of the inducing-point gram matrix, so a
model with inducing inputs equal to the training inputs reproduces the exact
GP posterior up to jitter.  Optimization is plain gradient ascent with
central-difference gradients in log-parameter space and step halving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import EmptyDatasetError, InvalidArgumentError, ParseError, UnsupportedShapeError

JITTER = 1e-8  # added to the diagonal of factorized matrices
PARAM_FLOOR = 1e-6  # lower bound for initialized variances and lengthscales


@dataclass(frozen=True)
class GpHyperparams:
    """RBF-ARD kernel parameters: k(x,x') = sv * exp(-0.5 sum((x-x')/ls)^2)."""

    lengthscales: np.ndarray
    signal_var: float
    noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise InvalidArgumentError(f"lengthscales must be positive, got {ls}")
        for name, v in (("signal_var", self.signal_var), ("noise_var", self.noise_var)):
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class LaggedDataset:
    """Supervised next-step pairs plus the count of skipped short sequences."""

    inputs: np.ndarray
    outputs: np.ndarray
    skipped: int = 0


def build_lagged(sequences, k: int) -> LaggedDataset:
    """Stack k-lag windows from each sequence; no window crosses sequences.

    build_lagged([[1,2,3,4]], 2) gives inputs [[1,2],[2,3]], outputs [3,4].
    """
    if k < 1:
        raise InvalidArgumentError(f"lag order must be >= 1, got {k}")
    if isinstance(sequences, np.ndarray) and sequences.ndim == 1:
        sequences = [sequences]
    inputs, outputs, skipped = [], [], 0
    for seq in sequences:
        seq = np.asarray(seq, dtype=float)
        if seq.ndim != 1:
            raise UnsupportedShapeError(f"sequences must be 1-D, got shape {seq.shape}")
        if not np.all(np.isfinite(seq)):
            raise InvalidArgumentError("sequence contains non-finite values")
        if len(seq) < k + 1:
            skipped += 1
            continue
        for i in range(len(seq) - k):
            inputs.append(seq[i : i + k])
            outputs.append(seq[i + k])
    if not inputs:
        raise EmptyDatasetError(f"no sequence is longer than lag order {k}")
    return LaggedDataset(inputs=np.stack(inputs), outputs=np.asarray(outputs), skipped=skipped)


def rbf_kernel(A: np.ndarray, B: np.ndarray, hyper: GpHyperparams) -> np.ndarray:
    """Kernel matrix between row sets A (n,d) and B (m,d)."""
    As = np.atleast_2d(A) / hyper.lengthscales
    Bs = np.atleast_2d(B) / hyper.lengthscales
    sq = (
        np.sum(As * As, axis=1)[:, None]
        + np.sum(Bs * Bs, axis=1)[None, :]
        - 2.0 * As @ Bs.T
    )
    return hyper.signal_var * np.exp(-0.5 * np.clip(sq, 0.0, None))


def _fitc_factors(hyper: GpHyperparams, U: np.ndarray, X: np.ndarray, yc: np.ndarray):
    """Cholesky pipeline shared by the likelihood and the posterior cache."""
    M = len(U)
    Kmm = rbf_kernel(U, U, hyper) + JITTER * np.eye(M)
    L = cholesky(Kmm, lower=True)
    V = solve_triangular(L, rbf_kernel(U, X, hyper), lower=True)
    lam = np.clip(hyper.signal_var - np.sum(V * V, axis=0), 0.0, None) + hyper.noise_var
    Vs = V / np.sqrt(lam)
    B = np.eye(M) + Vs @ Vs.T
    LB = cholesky(B, lower=True)
    ytil = yc / np.sqrt(lam)
    beta = solve_triangular(LB, Vs @ ytil, lower=True)
    return L, LB, beta, lam, ytil


def log_marginal_likelihood(hyper: GpHyperparams, U: np.ndarray, X: np.ndarray, yc: np.ndarray) -> float:
    """FITC log marginal likelihood of centered outputs yc."""
    n = len(X)
    _, LB, beta, lam, ytil = _fitc_factors(hyper, U, X, yc)
    return -0.5 * float(
        n * np.log(2.0 * np.pi)
        + np.sum(np.log(lam))
        + 2.0 * np.sum(np.log(np.diag(LB)))
        + ytil @ ytil
        - beta @ beta
    )


@dataclass
class GpModel:
    """Fitted sparse GP for one scalar signal."""

    hyper: GpHyperparams
    inducing: np.ndarray
    mean_fn: float
    lag_order: int
    train_inputs: np.ndarray
    train_outputs: np.ndarray
    signal: str = ""
    log_likelihood: float = np.nan
    _cache: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.inducing = np.atleast_2d(np.asarray(self.inducing, dtype=float))
        self.train_inputs = np.atleast_2d(np.asarray(self.train_inputs, dtype=float))
        self.train_outputs = np.asarray(self.train_outputs, dtype=float)
        if self.inducing.shape[1] != self.lag_order or self.train_inputs.shape[1] != self.lag_order:
            raise UnsupportedShapeError("input dimensions must equal the lag order")
        if len(self.inducing) > len(self.train_inputs):
            raise InvalidArgumentError("more inducing points than training rows")
        if self._cache is None:
            yc = self.train_outputs - self.mean_fn
            L, LB, beta, _, _ = _fitc_factors(self.hyper, self.inducing, self.train_inputs, yc)
            self._cache = (L, LB, beta)


def posterior(model: GpModel, x: np.ndarray):
    """Predictive mean and variance (including noise) at x: (k,) or (m, k)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.lag_order:
        raise UnsupportedShapeError(f"expected {model.lag_order} lagged values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("posterior evaluated at non-finite input")
    L, LB, beta = model._cache
    Ksu = rbf_kernel(arr, model.inducing, model.hyper)
    v = solve_triangular(L, Ksu.T, lower=True)
    w = solve_triangular(LB, v, lower=True)
    mu = model.mean_fn + w.T @ beta
    var_f = model.hyper.signal_var - np.sum(v * v, axis=0) + np.sum(w * w, axis=0)
    var = np.clip(var_f, 0.0, None) + model.hyper.noise_var
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


@dataclass(frozen=True)
class FitOptions:
    """Budget knobs for the likelihood ascent."""

    max_steps: int = 200
    inducing_steps: int = 15
    initial_step: float = 0.1
    tol: float = 1e-6
    inducing_init: str = "kmeanspp"  # or "training": inducing fixed at the inputs

    def __post_init__(self):
        if self.inducing_init not in ("kmeanspp", "training"):
            raise InvalidArgumentError(f"unknown inducing_init {self.inducing_init!r}")


def _kmeanspp_rows(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Spread m rows of X by the k-means++ seeding rule."""
    chosen = [int(rng.integers(len(X)))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    while len(chosen) < m:
        total = d2.sum()
        if total <= 0:  # all remaining rows coincide with a chosen one
            remaining = [i for i in range(len(X)) if i not in set(chosen)]
            chosen.extend(remaining[: m - len(chosen)])
            break
        idx = int(rng.choice(len(X), p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return X[np.array(chosen[:m])].copy()


def _ascend(objective, p0: np.ndarray, scale: np.ndarray, max_steps: int, initial_step: float, tol: float):
    """Gradient ascent with central-difference gradients and step halving.

    scale gives the natural unit of each coordinate; finite differences and
    moves are both taken relative to it so mixed parameter blocks behave.
    """
    p = p0.copy()
    best = objective(p)
    step = initial_step
    eps = 1e-4 * scale
    for _ in range(max_steps):
        grad = np.zeros_like(p)
        for i in range(len(p)):
            hi = p.copy()
            lo = p.copy()
            hi[i] += eps[i]
            lo[i] -= eps[i]
            grad[i] = (objective(hi) - objective(lo)) / (2.0 * eps[i])
        grad_scaled = grad * scale
        norm = np.linalg.norm(grad_scaled)
        if norm == 0 or not np.isfinite(norm):
            break
        direction = grad_scaled / norm
        gain = 0.0
        improved = False
        while step > 1e-12:
            cand = p + step * scale * direction
            val = objective(cand)
            if val > best:
                gain = val - best
                p, best = cand, val
                step *= 1.3
                improved = True
                break
            step *= 0.5
        if not improved or gain < tol:
            break
    return p, best


def fit(
    data: LaggedDataset,
    m_inducing: int = 30,
    seed: int = 0,
    options: FitOptions = FitOptions(),
) -> GpModel:
    """Fit hyperparameters (and optionally inducing inputs) by likelihood ascent.

    Hyperparameters start from data statistics; the ascent only ever accepts
    improvements, so the final likelihood is at least the initial one.
    """
    X, y = data.inputs, data.outputs
    n, d = X.shape
    if m_inducing < 1:
        raise InvalidArgumentError(f"need at least one inducing point, got {m_inducing}")
    m = min(m_inducing, n)

    mean_fn = float(np.mean(y))
    yc = y - mean_fn
    y_var = max(float(np.var(yc)), PARAM_FLOOR)
    ls0 = np.maximum(np.std(X, axis=0), PARAM_FLOOR)
    hyper0 = GpHyperparams(lengthscales=ls0, signal_var=y_var, noise_var=max(0.01 * y_var, PARAM_FLOOR))

    rng = np.random.default_rng(seed)
    if options.inducing_init == "training":
        U = X.copy()
        m = n
    else:
        U = _kmeanspp_rows(X, m, rng)

    def unpack(p):
        return GpHyperparams(
            lengthscales=np.exp(p[:d]), signal_var=float(np.exp(p[d])), noise_var=float(np.exp(p[d + 1]))
        )

    def hyper_objective(p):
        try:
            return log_marginal_likelihood(unpack(p), U, X, yc)
        except (LinAlgError, FloatingPointError):
            return -np.inf

    p0 = np.concatenate([np.log(hyper0.lengthscales), np.log([hyper0.signal_var, hyper0.noise_var])])
    scale = np.ones(len(p0))
    p_opt, ll = _ascend(hyper_objective, p0, scale, options.max_steps, options.initial_step, options.tol)

    if options.inducing_steps > 0 and options.inducing_init != "training":
        input_scale = np.maximum(np.std(X, axis=0), PARAM_FLOOR)

        def joint_objective(q):
            try:
                return log_marginal_likelihood(
                    unpack(q[: d + 2]), q[d + 2 :].reshape(m, d), X, yc
                )
            except (LinAlgError, FloatingPointError):
                return -np.inf

        q0 = np.concatenate([p_opt, U.ravel()])
        scale_joint = np.concatenate([scale, np.tile(input_scale, m)])
        q_opt, ll = _ascend(
            joint_objective, q0, scale_joint, options.inducing_steps, options.initial_step, options.tol
        )
        p_opt, U = q_opt[: d + 2], q_opt[d + 2 :].reshape(m, d)

    return GpModel(
        hyper=unpack(p_opt),
        inducing=U,
        mean_fn=mean_fn,
        lag_order=d,
        train_inputs=X,
        train_outputs=y,
        log_likelihood=float(ll),
    )


def _training_checksum(model: GpModel) -> dict:
    X, y = model.train_inputs, model.train_outputs
    return {
        "rows": int(len(X)),
        "input_mean": np.mean(X, axis=0).tolist(),
        "input_std": np.std(X, axis=0).tolist(),
        "output_mean": float(np.mean(y)),
        "output_std": float(np.std(y)),
    }


def save_model(model: GpModel, path: str) -> None:
    """Write the model as JSON; the posterior cache is rebuilt on load."""
    payload = {
        "signal": model.signal,
        "lag_order": model.lag_order,
        "mean_fn": model.mean_fn,
        "log_likelihood": model.log_likelihood,
        "hyper": {
            "lengthscales": model.hyper.lengthscales.tolist(),
            "signal_var": model.hyper.signal_var,
            "noise_var": model.hyper.noise_var,
        },
        "inducing": model.inducing.tolist(),
        "train_inputs": model.train_inputs.tolist(),
        "train_outputs": model.train_outputs.tolist(),
        "checksum": _training_checksum(model),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path: str) -> GpModel:
    """Load a model file, rebuild the cache, and verify the training checksum."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid model JSON: {exc.msg}", line=exc.lineno) from exc
    try:
        model = GpModel(
            hyper=GpHyperparams(
                lengthscales=np.asarray(payload["hyper"]["lengthscales"], dtype=float),
                signal_var=float(payload["hyper"]["signal_var"]),
                noise_var=float(payload["hyper"]["noise_var"]),
            ),
            inducing=np.asarray(payload["inducing"], dtype=float),
            mean_fn=float(payload["mean_fn"]),
            lag_order=int(payload["lag_order"]),
            train_inputs=np.asarray(payload["train_inputs"], dtype=float),
            train_outputs=np.asarray(payload["train_outputs"], dtype=float),
            signal=str(payload.get("signal", "")),
            log_likelihood=float(payload.get("log_likelihood", np.nan)),
        )
        stored = payload["checksum"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid model file: {exc}") from exc
    fresh = _training_checksum(model)
    for key, value in fresh.items():
        if not np.allclose(value, stored.get(key), rtol=0.0, atol=1e-12):
            raise ParseError(f"model file checksum mismatch on {key!r}")
    return model
