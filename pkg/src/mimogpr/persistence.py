"""Versioned JSON model documents.

A document stores everything needed to rebuild bit-identical forecasters:
per-series GP hyperparameters, standardizers and training matrices, the
combiner block, and (optionally) the per-horizon network weights. Floats are
serialized with shortest round-trip precision, so reloaded models reproduce
predictions exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky

from . import __version__
from .exceptions import NumericalError
from .gpr import JITTER_CAP, GprModel, KernelHyperparams, _noisy_kernel
from .mimo import CombinerWeights, MimoForecaster
from .mlp import MlpParams, MlpSeriesForecaster
from .timeseries import SplitSpec, Standardizer

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelBundle:
    """Everything cmd_fit produces: GP stage, combiner, optional network stage."""

    lag_order: int
    series_names: tuple[str, ...]
    split: SplitSpec
    seed: int
    gpr_models: tuple[GprModel, ...]
    combiner: CombinerWeights
    mlp_stages: dict[int, tuple[tuple[MlpSeriesForecaster, ...], CombinerWeights]] | None = None

    def mimo_gpr_forecaster(self) -> MimoForecaster:
        return MimoForecaster(
            series_names=self.series_names,
            lag_order=self.lag_order,
            first_stage=self.gpr_models,
            combiner=self.combiner,
        )

    def mimo_mlp_forecaster(self, horizon: int) -> MimoForecaster:
        if not self.mlp_stages or horizon not in self.mlp_stages:
            raise KeyError(f"no network stage stored for horizon {horizon}")
        forecasters, combiner = self.mlp_stages[horizon]
        return MimoForecaster(
            series_names=self.series_names,
            lag_order=self.lag_order,
            first_stage=forecasters,
            combiner=combiner,
        )


def _matrix(a: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(a)]


def _vector(a: np.ndarray) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def _standardizer_doc(s: Standardizer) -> dict:
    return {
        "means": _vector(s.means),
        "scales": _vector(s.scales),
        "target_mean": float(s.target_mean),
        "target_scale": float(s.target_scale),
    }


def _standardizer_from(doc: dict) -> Standardizer:
    return Standardizer(
        means=np.array(doc["means"]),
        scales=np.array(doc["scales"]),
        target_mean=doc["target_mean"],
        target_scale=doc["target_scale"],
    )


def _gpr_doc(model: GprModel) -> dict:
    n, p = model.train_inputs.shape
    return {
        "hyperparams": {
            "nu": model.hyperparams.nu,
            "lam": model.hyperparams.lam,
            "gamma": model.hyperparams.gamma,
            "kappa": model.hyperparams.kappa,
            "sigma": model.hyperparams.sigma,
        },
        "jitter": model.jitter,
        "n_train": n,
        "n_inputs": p,
        "train_inputs": _matrix(model.train_inputs),
        "train_targets": _vector(model.train_targets),
        "standardizer": _standardizer_doc(model.standardizer),
    }


def _gpr_from(doc: dict) -> GprModel:
    x = np.array(doc["train_inputs"], dtype=np.float64)
    y = np.array(doc["train_targets"], dtype=np.float64)
    if x.shape != (doc["n_train"], doc["n_inputs"]) or y.shape != (doc["n_train"],):
        raise ValueError(
            f"stored matrix dimensions {x.shape}/{y.shape} disagree with the declared "
            f"{doc['n_train']}x{doc['n_inputs']}"
        )
    theta = KernelHyperparams(**doc["hyperparams"])
    k, _, _, _ = _noisy_kernel(x, theta)
    jitter = float(doc["jitter"])
    if jitter:
        k[np.diag_indices_from(k)] += jitter
    try:
        chol = cholesky(k, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"stored model no longer factorizes at its recorded jitter {jitter:g} "
            f"(cap {JITTER_CAP:g})"
        ) from None
    return GprModel(
        train_inputs=x,
        train_targets=y,
        hyperparams=theta,
        chol_factor=chol,
        alpha=cho_solve((chol, True), y),
        standardizer=_standardizer_from(doc["standardizer"]),
        jitter=jitter,
    )


def _combiner_doc(c: CombinerWeights) -> dict:
    return {"weights": _matrix(c.weights), "ridge_penalty": float(c.ridge_penalty)}


def _combiner_from(doc: dict) -> CombinerWeights:
    return CombinerWeights(weights=np.array(doc["weights"]), ridge_penalty=doc["ridge_penalty"])


def _mlp_doc(forecaster: MlpSeriesForecaster) -> dict:
    params = forecaster.params
    return {
        "hidden_units": params.hidden_units,
        "n_inputs": params.n_inputs,
        "input_weights": _matrix(params.input_weights),
        "hidden_bias": _vector(params.hidden_bias),
        "output_weights": _vector(params.output_weights),
        "output_bias": float(params.output_bias),
        "activation": params.activation,
        "standardizer": _standardizer_doc(forecaster.standardizer),
    }


def _mlp_from(doc: dict) -> MlpSeriesForecaster:
    params = MlpParams(
        input_weights=np.array(doc["input_weights"], dtype=np.float64),
        hidden_bias=np.array(doc["hidden_bias"], dtype=np.float64),
        output_weights=np.array(doc["output_weights"], dtype=np.float64),
        output_bias=doc["output_bias"],
        activation=doc["activation"],
    )
    if params.input_weights.shape != (doc["hidden_units"], doc["n_inputs"]):
        raise ValueError("stored network dimensions disagree with the declared sizes")
    return MlpSeriesForecaster(params=params, standardizer=_standardizer_from(doc["standardizer"]))


def bundle_to_json(bundle: ModelBundle) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "seed": bundle.seed,
        "lag_order": bundle.lag_order,
        "series_names": list(bundle.series_names),
        "split": {"train_len": bundle.split.train_len, "valid_len": bundle.split.valid_len},
        "gpr": {
            "models": [_gpr_doc(m) for m in bundle.gpr_models],
            "combiner": _combiner_doc(bundle.combiner),
        },
        "mlp": None
        if bundle.mlp_stages is None
        else {
            str(h): {
                "models": [_mlp_doc(f) for f in forecasters],
                "combiner": _combiner_doc(combiner),
            }
            for h, (forecasters, combiner) in sorted(bundle.mlp_stages.items())
        },
    }
    return json.dumps(doc, indent=1) + "\n"


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(bundle_to_json(bundle))


def bundle_from_json(text: str) -> ModelBundle:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model document version {version!r} (expected {FORMAT_VERSION})")
    mlp_stages = None
    if doc.get("mlp"):
        mlp_stages = {
            int(h): (
                tuple(_mlp_from(m) for m in block["models"]),
                _combiner_from(block["combiner"]),
            )
            for h, block in doc["mlp"].items()
        }
    return ModelBundle(
        lag_order=doc["lag_order"],
        series_names=tuple(doc["series_names"]),
        split=SplitSpec(**doc["split"]),
        seed=doc["seed"],
        gpr_models=tuple(_gpr_from(m) for m in doc["gpr"]["models"]),
        combiner=_combiner_from(doc["gpr"]["combiner"]),
        mlp_stages=mlp_stages,
    )


def load_bundle(path: str | Path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        return bundle_from_json(fh.read())
