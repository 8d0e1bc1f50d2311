"""Input validation shared by the estimators and the command line."""
from __future__ import annotations

import os

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError
from .model import ModelSpec, load_model
from .reference import REFERENCE_MODELS, reference_model


def resolve_model(model) -> ModelSpec:
    """Accept a ModelSpec, a config dict, a JSON path or a reference model name."""
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, dict):
        return ModelSpec.from_dict(model)
    if isinstance(model, (str, os.PathLike)):
        if str(model) in REFERENCE_MODELS:
            return reference_model(str(model))
        return load_model(model)
    raise ConfigurationError(f"cannot interpret {type(model).__name__} as a model")


def check_gammas(X, allow_nonnegative=False) -> np.ndarray:
    """1-D float array of risk-sensitivity parameters from a column or a flat sequence."""
    arr = check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_2d=True,
                      ensure_min_samples=1)
    g = arr[:, 0]
    if not allow_nonnegative and np.any(g >= 0):
        raise ConfigurationError("gamma values must be negative")
    if np.any(g >= 1):
        raise ConfigurationError("gamma values must be < 1")
    return g


def check_kappas(X) -> np.ndarray:
    arr = np.asarray(X, dtype=float).reshape(-1)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ConfigurationError("kappa values must be finite")
    return arr


def check_horizons(X) -> np.ndarray:
    arr = check_array(np.asarray(X, dtype=float).reshape(-1, 1))[:, 0]
    if np.any(arr <= 0):
        raise ConfigurationError("horizons must be positive")
    return arr


def parse_float_list(text: str) -> list:
    """``"25,50,100"`` -> ``[25.0, 50.0, 100.0]``."""
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse number list {text!r}") from exc
    if not vals:
        raise ConfigurationError("empty number list")
    return vals
