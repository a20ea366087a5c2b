"""Error metrics for recovered voltage states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def compute_mape_magnitude(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute percentage error of the voltage magnitude.

    ``100 / N * sum(| (|v_hat| - |v|) / |v| |)`` over all (time, phase)
    entries.  Truth magnitudes must be strictly positive.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ConfigError("estimate/truth shapes differ")
    if np.any(truth <= 0.0):
        raise ConfigError("truth magnitudes must be > 0")
    return float(100.0 * np.mean(np.abs((estimate - truth) / truth)))


def wrap_angle_deg(delta: np.ndarray) -> np.ndarray:
    """Wrap angle differences into (-180, 180] degrees."""
    return -np.mod(-np.asarray(delta, dtype=float) + 180.0, 360.0) + 180.0


def compute_mae_angle(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute voltage-angle error in degrees, wrap-aware."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ConfigError("estimate/truth shapes differ")
    return float(np.mean(np.abs(wrap_angle_deg(estimate - truth))))


@dataclass(frozen=True)
class MetricsRecord:
    """One estimator run inside a benchmark cell."""

    method: str
    T: int
    fraction: float
    replicate: int
    mask_seed: int
    noise_seed: int
    mape_vmag_pct: float
    mae_angle_deg: float
    iterations: int
    final_objective: float
    wall_seconds: float

    def __post_init__(self):
        if self.mape_vmag_pct < 0 or self.mae_angle_deg < 0:
            raise ConfigError("error metrics cannot be negative")
