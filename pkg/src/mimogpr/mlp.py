"""Single-hidden-layer perceptron benchmark trained by Levenberg-Marquardt.

The network is y = beta0 + sum_j beta_j * tanh(w_j . x + b_j). Sign
conventions, fixed once here and used throughout: residual r = y - yhat,
``jacobian`` returns J = d(yhat)/d(params), and the LM step solves
(J^T J + mu I) delta = J^T r.

Parameter packing order: [beta0, beta (q), hidden_bias (q), input_weights
row-major (q*p)].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NumericalError
from .timeseries import Standardizer, SupervisedDataset


@dataclass(frozen=True)
class MlpParams:
    """Weights of a q-hidden-unit, p-input, tanh network with linear output."""

    input_weights: np.ndarray  # (q, p)
    hidden_bias: np.ndarray  # (q,)
    output_weights: np.ndarray  # (q,)
    output_bias: float
    activation: str = "tanh"

    def __post_init__(self) -> None:
        w = np.asarray(self.input_weights)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError(f"input weights must be q x p with q >= 1, got {w.shape}")
        q = w.shape[0]
        if np.shape(self.hidden_bias) != (q,) or np.shape(self.output_weights) != (q,):
            raise ValueError("bias and output weight vectors must have one entry per hidden unit")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        finite = (
            np.all(np.isfinite(w))
            and np.all(np.isfinite(self.hidden_bias))
            and np.all(np.isfinite(self.output_weights))
            and np.isfinite(self.output_bias)
        )
        if not finite:
            raise ValueError("network weights must be finite")

    @property
    def hidden_units(self) -> int:
        return self.input_weights.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.input_weights.shape[1]

    @property
    def n_params(self) -> int:
        q, p = self.input_weights.shape
        return 1 + q + q + q * p

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [[self.output_bias], self.output_weights, self.hidden_bias, self.input_weights.ravel()]
        )

    def unpack(self, flat: np.ndarray) -> "MlpParams":
        q, p = self.input_weights.shape
        return MlpParams(
            input_weights=flat[1 + 2 * q :].reshape(q, p),
            hidden_bias=flat[1 + q : 1 + 2 * q],
            output_weights=flat[1 : 1 + q],
            output_bias=float(flat[0]),
            activation=self.activation,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Multi-start LM training controls."""

    restarts: int = 10
    max_epochs: int = 500
    patience: int = 25
    lm_damping_init: float = 1e-2
    lm_damping_factor: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.lm_damping_init <= 0 or self.lm_damping_factor <= 1:
            raise ValueError("damping must start positive and grow by a factor > 1")


def forward(params: MlpParams, x: np.ndarray) -> float:
    """Network output for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.n_inputs,):
        raise ValueError(f"expected input of dimension {params.n_inputs}, got shape {x.shape}")
    hidden = np.tanh(params.input_weights @ x + params.hidden_bias)
    return float(params.output_bias + params.output_weights @ hidden)


def forward_batch(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Network outputs for a batch of input rows."""
    inputs = np.asarray(inputs, dtype=np.float64)
    hidden = np.tanh(inputs @ params.input_weights.T + params.hidden_bias)
    return params.output_bias + hidden @ params.output_weights


def jacobian(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """d(yhat)/d(params) for each input row, columns in pack() order.

    The residual derivative is the negation of these columns (r = y - yhat).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.n_inputs:
        raise ValueError(f"inputs must be N x {params.n_inputs}, got {inputs.shape}")
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    hidden = np.tanh(inputs @ params.input_weights.T + params.hidden_bias)  # (n, q)
    gain = (1.0 - hidden**2) * params.output_weights  # (n, q): beta_j sech^2
    jac = np.empty((n, params.n_params))
    q = params.hidden_units
    jac[:, 0] = 1.0
    jac[:, 1 : 1 + q] = hidden
    jac[:, 1 + q : 1 + 2 * q] = gain
    jac[:, 1 + 2 * q :] = (gain[:, :, None] * inputs[:, None, :]).reshape(n, -1)
    return jac


def _init_params(q: int, p: int, rng: np.random.Generator) -> MlpParams:
    # uniform [-0.5, 0.5] scaled by 1/sqrt(fan-in)
    return MlpParams(
        input_weights=rng.uniform(-0.5, 0.5, size=(q, p)) / np.sqrt(p),
        hidden_bias=rng.uniform(-0.5, 0.5, size=q) / np.sqrt(p),
        output_weights=rng.uniform(-0.5, 0.5, size=q) / np.sqrt(q),
        output_bias=float(rng.uniform(-0.5, 0.5) / np.sqrt(q)),
    )


def _sse(params: MlpParams, dataset: SupervisedDataset) -> float:
    with np.errstate(over="ignore"):  # inf propagates to the divergence check
        residual = dataset.targets - forward_batch(params, dataset.inputs)
        return float(residual @ residual)


def train_lm(
    train: SupervisedDataset,
    valid: SupervisedDataset,
    hidden_units: int,
    config: TrainConfig = TrainConfig(),
    initial: MlpParams | None = None,
    on_epoch: Callable[[int, int, bool, float, float], None] | None = None,
) -> MlpParams:
    """Train by damped Gauss-Newton with validation-based snapshot selection.

    Per epoch one step (J^T J + mu I) delta = J^T r is proposed; it is
    accepted only if the training SSE strictly decreases (mu shrinks by the
    damping factor), otherwise rejected (mu grows). The returned parameters
    are the snapshot with the lowest validation SSE seen across every epoch
    of every restart; a restart stops after ``patience`` epochs without a
    validation improvement. Deterministic for fixed (data, q, seed): restart
    r draws its initial weights from the stream spawned at (seed, r).
    ``initial`` seeds restart 0 (warm start); ``on_epoch`` receives
    (restart, epoch, accepted, train_sse, valid_sse) after every epoch.
    """
    if train.lag_order != valid.lag_order:
        raise ValueError("train and validation sets must share the lag order")
    if hidden_units < 1:
        raise ValueError(f"hidden_units must be >= 1, got {hidden_units}")
    q, p = hidden_units, train.lag_order

    best_params: MlpParams | None = None
    best_valid_sse = np.inf
    diagnostics: list[str] = []

    for restart in range(config.restarts):
        if restart == 0 and initial is not None:
            if initial.hidden_units != q or initial.n_inputs != p:
                raise ValueError("initial parameters do not match the requested architecture")
            params = initial
        else:
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(restart,)))
            params = _init_params(q, p, rng)
        flat = params.pack()
        train_sse = _sse(params, train)
        if not np.isfinite(train_sse):
            diagnostics.append(f"restart {restart}: non-finite loss at initialization")
            continue

        mu = config.lm_damping_init
        restart_best_valid = _sse(params, valid)
        if restart_best_valid < best_valid_sse:
            best_params, best_valid_sse = params, restart_best_valid
        stall = 0
        identity = np.eye(params.n_params)

        for epoch in range(config.max_epochs):
            jac = jacobian(params, train.inputs)
            residual = train.targets - forward_batch(params, train.inputs)
            accepted = False
            try:
                delta = np.linalg.solve(jac.T @ jac + mu * identity, jac.T @ residual)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(flat + delta)):
                cand_flat = flat + delta
                cand = params.unpack(cand_flat)
                cand_sse = _sse(cand, train)
                if np.isfinite(cand_sse) and cand_sse < train_sse:
                    params, flat, train_sse = cand, cand_flat, cand_sse
                    accepted = True
            if accepted:
                mu /= config.lm_damping_factor
            else:
                mu *= config.lm_damping_factor

            valid_sse = _sse(params, valid)
            if on_epoch is not None:
                on_epoch(restart, epoch, accepted, train_sse, valid_sse)
            if valid_sse < best_valid_sse:
                best_params, best_valid_sse = params, valid_sse
            if valid_sse < restart_best_valid:
                restart_best_valid = valid_sse
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
            if not accepted and mu > 1e12:
                break

    if best_params is None:
        raise NumericalError("all restarts diverged: " + "; ".join(diagnostics))
    return best_params


def hidden_units_for_horizon(horizon: int) -> int:
    """Network width grows with the forecast horizon: 5 units per month, capped at 30."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    return min(30, 5 * horizon)


@dataclass(frozen=True)
class MlpSeriesForecaster:
    """One-step forecaster wrapping a trained network and its standardization."""

    params: MlpParams
    standardizer: Standardizer

    def predict_next(self, lags_raw: np.ndarray) -> float:
        z = self.standardizer.apply_inputs(np.asarray(lags_raw, dtype=np.float64))
        return float(self.standardizer.invert_target(forward(self.params, z)))
