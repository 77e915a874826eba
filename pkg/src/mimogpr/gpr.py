"""Single-output Gaussian process regression.

The covariance is a radial-basis bump with a linear trend and a constant
offset::

    k(x, x') = nu^2 * exp(-||x - x'||^2 / (2 lam^2)) + gamma * x.x' + kappa

plus observation noise sigma^2 on the diagonal. Hyperparameters (nu, lam,
gamma, kappa, sigma) are fitted by maximizing the log marginal likelihood
with multi-start quasi-Newton ascent in log-parameter space; posterior
prediction goes through a cached Cholesky factor of K(X, X) + sigma^2 I.

Factorization first tries the exact matrix; only if that fails is a diagonal
stabilizer added, starting at the configured jitter and doubling up to 1e-4.
Well-conditioned problems therefore match dense-inverse evaluations of the
posterior to solver precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from ._core import sqdist_and_dot
from .exceptions import DegenerateDataError, NumericalError
from .timeseries import Standardizer, SupervisedDataset, identity_standardizer

JITTER_CAP = 1e-4
LOG_FLOOR = 1e-12  # gamma/kappa floor before entering log space
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_BOUNDS = (-30.0, 20.0)  # optimizer box in log-parameter space


@dataclass(frozen=True)
class KernelHyperparams:
    """Kernel and noise hyperparameters; positive except gamma/kappa/sigma >= 0."""

    nu: float
    lam: float
    gamma: float
    kappa: float
    sigma: float

    def __post_init__(self) -> None:
        vals = (self.nu, self.lam, self.gamma, self.kappa, self.sigma)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"hyperparameters must be finite, got {vals}")
        if self.nu <= 0 or self.lam <= 0:
            raise ValueError(f"nu and lam must be positive, got nu={self.nu}, lam={self.lam}")
        if self.gamma < 0 or self.kappa < 0 or self.sigma < 0:
            raise ValueError("gamma, kappa and sigma must be nonnegative")

    def to_log_vector(self) -> np.ndarray:
        return np.log(
            [
                self.nu,
                self.lam,
                max(self.gamma, LOG_FLOOR),
                max(self.kappa, LOG_FLOOR),
                max(self.sigma, LOG_FLOOR),
            ]
        )

    @classmethod
    def from_log_vector(cls, log_theta: np.ndarray) -> "KernelHyperparams":
        nu, lam, gamma, kappa, sigma = np.exp(np.asarray(log_theta, dtype=np.float64))
        return cls(nu=nu, lam=lam, gamma=gamma, kappa=kappa, sigma=sigma)


@dataclass(frozen=True)
class FitConfig:
    """Controls for the multi-start likelihood ascent.

    ``grad_tol`` bounds the largest gradient component at convergence;
    ``jitter`` is the base of the stabilizer escalation (tried only after the
    exact matrix fails to factorize).
    """

    restarts: int = 5
    max_iters: int = 200
    grad_tol: float = 1e-6
    jitter: float = 1e-10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.jitter <= 0:
            raise ValueError(f"jitter must be positive, got {self.jitter}")


@dataclass(frozen=True)
class GprModel:
    """A fitted GP: training data, hyperparameters and the cached factorization.

    ``chol_factor`` is the lower Cholesky factor of K(X,X) + sigma^2 I (plus
    the ``jitter`` actually needed, usually 0); ``alpha`` solves that matrix
    against the targets. ``standardizer`` maps raw lag windows into the space
    the model was fitted in.
    """

    train_inputs: np.ndarray  # (N, p)
    train_targets: np.ndarray  # (N,)
    hyperparams: KernelHyperparams
    chol_factor: np.ndarray  # (N, N) lower triangular
    alpha: np.ndarray  # (N,)
    standardizer: Standardizer
    jitter: float = 0.0

    @property
    def lag_order(self) -> int:
        return self.train_inputs.shape[1]

    def predict_next(self, lags_raw: np.ndarray) -> float:
        """One-step forecast from a raw lag window (most recent value first)."""
        z = self.standardizer.apply_inputs(np.asarray(lags_raw, dtype=np.float64)[None, :])
        mu, _ = predict(self, z)
        return float(self.standardizer.invert_target(mu[0]))


def kernel_eval(x_i: np.ndarray, x_j: np.ndarray, theta: KernelHyperparams) -> float:
    """Covariance between two input vectors."""
    a = np.asarray(x_i, dtype=np.float64)
    b = np.asarray(x_j, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"inputs must be vectors of equal dimension, got {a.shape} and {b.shape}")
    diff = a - b
    sq = float(diff @ diff)
    return (
        theta.nu**2 * math.exp(-sq / (2.0 * theta.lam**2))
        + theta.gamma * float(a @ b)
        + theta.kappa
    )


def kernel_matrix(a: np.ndarray, b: np.ndarray, theta: KernelHyperparams) -> np.ndarray:
    """Cross-covariance matrix between two row sets."""
    d, g = sqdist_and_dot(np.atleast_2d(a), np.atleast_2d(b))
    return theta.nu**2 * np.exp(d / (-2.0 * theta.lam**2)) + theta.gamma * g + theta.kappa


def _factorize(k_noisy: np.ndarray, jitter_base: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a noisy kernel matrix with escalating jitter.

    Tries the exact matrix first, then jitter_base, 2*jitter_base, ... up to
    JITTER_CAP before declaring the matrix numerically indefinite.
    """
    jitter = 0.0
    n = k_noisy.shape[0]
    while True:
        try:
            mat = k_noisy if jitter == 0.0 else k_noisy + jitter * np.eye(n)
            return cholesky(mat, lower=True), jitter
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = jitter_base
            elif jitter * 2 <= JITTER_CAP:
                jitter *= 2
            else:
                raise NumericalError(
                    f"kernel matrix numerically indefinite (jitter exhausted at {JITTER_CAP:g})"
                ) from None


def _noisy_kernel(
    x: np.ndarray, theta: KernelHyperparams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """K(X,X) + sigma^2 I together with the pairwise pieces reused by gradients."""
    d, g = sqdist_and_dot(x, x)
    rbf = theta.nu**2 * np.exp(d / (-2.0 * theta.lam**2))
    k = rbf + theta.gamma * g + theta.kappa
    k[np.diag_indices_from(k)] += theta.sigma**2
    return k, d, g, rbf


def log_marginal_likelihood(
    x: np.ndarray, y: np.ndarray, theta: KernelHyperparams, jitter_base: float = 1e-10
) -> float:
    """Log density of the targets under the GP prior plus noise.

    Computed through the Cholesky factor:
    -1/2 y^T (K + sigma^2 I)^-1 y - sum(log L_ii) - n/2 log(2 pi).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != x.shape[0]:
        raise ValueError(f"{len(y)} targets for {x.shape[0]} input rows")
    k, _, _, _ = _noisy_kernel(x, theta)
    chol, _ = _factorize(k, jitter_base)
    alpha = cho_solve((chol, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - len(y) * _HALF_LOG_2PI)


def _lml_and_grad(
    x: np.ndarray, y: np.ndarray, theta: KernelHyperparams, jitter_base: float
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its log-space gradient from one factorization."""
    k, d, g, rbf = _noisy_kernel(x, theta)
    chol, _ = _factorize(k, jitter_base)
    alpha = cho_solve((chol, True), y)
    value = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - len(y) * _HALF_LOG_2PI)

    k_inv = cho_solve((chol, True), np.eye(len(y)))
    inner = np.outer(alpha, alpha) - k_inv
    grad = np.array(
        [
            float(np.sum(inner * rbf)),  # 1/2 tr[inner * 2 rbf]
            0.5 * float(np.sum(inner * (rbf * d))) / theta.lam**2,
            0.5 * theta.gamma * float(np.sum(inner * g)),
            0.5 * theta.kappa * float(np.sum(inner)),
            theta.sigma**2 * float(np.trace(inner)),
        ]
    )
    return value, grad


def lml_gradient(
    x: np.ndarray, y: np.ndarray, theta: KernelHyperparams, jitter_base: float = 1e-10
) -> np.ndarray:
    """Gradient of the log marginal likelihood in log-parameter space.

    Components are ordered (log nu, log lam, log gamma, log kappa, log sigma);
    each equals 1/2 tr[(alpha alpha^T - K_noisy^-1) dK/d(log theta_j)].
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    return _lml_and_grad(x, y, theta, jitter_base)[1]


def _ascend(
    x: np.ndarray, y: np.ndarray, log_theta0: np.ndarray, config: FitConfig
) -> tuple[np.ndarray, float]:
    """Maximize the LML from one start; never returns worse than the start.

    Runs L-BFGS-B with analytic gradients in log-parameter space (grad_tol is
    the max-component threshold, max_iters the iteration cap). Proposals whose
    kernel matrix cannot be factorized act as likelihood -inf, and the start
    point is kept whenever the optimizer fails to improve on it.
    """

    def negative(log_theta: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            value, grad = _lml_and_grad(
                x, y, KernelHyperparams.from_log_vector(log_theta), config.jitter
            )
        except (NumericalError, ValueError, OverflowError, FloatingPointError):
            return np.inf, np.zeros(5)
        if not np.isfinite(value):
            return np.inf, np.zeros(5)
        return -value, -grad

    log_theta0 = np.clip(np.asarray(log_theta0, dtype=np.float64), *_LOG_BOUNDS)
    value0 = -negative(log_theta0)[0]
    if not np.isfinite(value0):
        raise NumericalError("likelihood undefined at the starting point")

    result = minimize(
        negative,
        log_theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=[_LOG_BOUNDS] * 5,
        options={"maxiter": config.max_iters, "gtol": config.grad_tol, "ftol": 1e-14},
    )
    value = -float(result.fun)
    if not np.isfinite(value) or value < value0:
        return log_theta0, value0
    return np.asarray(result.x, dtype=np.float64), value


def _restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(restart,)))


def _data_informed_center(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Log-space center for restart sampling: scale-matched nu/lam/sigma."""
    y_std = float(np.std(y, ddof=1))
    d, _ = sqdist_and_dot(x, x)
    off_diag = d[np.triu_indices_from(d, k=1)]
    median_dist = math.sqrt(float(np.median(off_diag))) if off_diag.size else 1.0
    if median_dist <= 0:
        median_dist = 1.0
    return np.log([y_std, median_dist, 0.01, 0.01, 0.1 * y_std])


def fit(
    dataset: SupervisedDataset,
    config: FitConfig = FitConfig(),
    standardizer: Standardizer | None = None,
    initial: KernelHyperparams | None = None,
) -> GprModel:
    """Fit hyperparameters by multi-start likelihood ascent and cache the factorization.

    Restart 0 starts from ``initial`` when given (else from the data-informed
    centers); every other restart samples log-parameters uniformly within
    [log 0.1, log 10] of those centers. Deterministic for a fixed (dataset,
    config.seed): restart r uses the RNG stream spawned at (seed, r). The
    model with the highest log marginal likelihood wins.
    """
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.targets, dtype=np.float64)
    if len(y) < 2:
        raise ValueError(f"need at least 2 training rows, got {len(y)}")
    if float(np.std(y)) == 0.0:
        raise DegenerateDataError("training targets have zero variance")

    center = _data_informed_center(x, y)
    span = math.log(10.0)

    best: tuple[np.ndarray, float] | None = None
    failures: list[str] = []
    for restart in range(config.restarts):
        if restart == 0:
            start = initial.to_log_vector() if initial is not None else center
        else:
            start = center + _restart_rng(config.seed, restart).uniform(-span, span, size=5)
        try:
            log_theta, value = _ascend(x, y, start, config)
        except NumericalError as exc:
            failures.append(f"restart {restart}: {exc}")
            continue
        if best is None or value > best[1]:
            best = (log_theta, value)

    if best is None:
        raise NumericalError(
            "all restarts failed factorization: " + "; ".join(failures)
        )

    theta = KernelHyperparams.from_log_vector(best[0])
    return build_model(dataset, theta, standardizer, config.jitter)


def build_model(
    dataset: SupervisedDataset,
    theta: KernelHyperparams,
    standardizer: Standardizer | None = None,
    jitter_base: float = 1e-10,
) -> GprModel:
    """Assemble a model at fixed hyperparameters (factorization and alpha)."""
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.targets, dtype=np.float64)
    k, _, _, _ = _noisy_kernel(x, theta)
    chol, jitter = _factorize(k, jitter_base)
    return GprModel(
        train_inputs=x,
        train_targets=y,
        hyperparams=theta,
        chol_factor=chol,
        alpha=cho_solve((chol, True), y),
        standardizer=standardizer if standardizer is not None else identity_standardizer(x.shape[1]),
        jitter=jitter,
    )


def rebuild(model: GprModel, dataset: SupervisedDataset, standardizer: Standardizer,
            jitter_base: float = 1e-10) -> GprModel:
    """Refresh a model on new training data, keeping its hyperparameters."""
    return build_model(dataset, model.hyperparams, standardizer, jitter_base)


def predict(model: GprModel, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance at m test inputs.

    mean = K(X*,X) (K + sigma^2 I)^-1 y, covariance = K(X*,X*) minus the
    explained part, both through the cached Cholesky factor. Covariance
    diagonal entries in [-1e-8, 0) are clamped to 0; anything more negative
    raises NumericalError.
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    if x_star.shape[1] != model.lag_order:
        raise ValueError(f"test inputs have {x_star.shape[1]} columns, model expects {model.lag_order}")
    k_star = kernel_matrix(x_star, model.train_inputs, model.hyperparams)
    mu = k_star @ model.alpha
    v = solve_triangular(model.chol_factor, k_star.T, lower=True)
    cov = kernel_matrix(x_star, x_star, model.hyperparams) - v.T @ v
    diag = np.einsum("ii->i", cov)
    worst = float(np.min(diag)) if diag.size else 0.0
    if worst < -1e-8:
        raise NumericalError(f"posterior variance {worst:g} below tolerance; factorization unreliable")
    np.maximum(diag, 0.0, out=diag)
    return mu, cov
