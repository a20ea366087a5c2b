"""Deterministic synthetic feeders and load/solar profiles.

These generators produce the bundled test fixtures: radial multiphase
feeders with a three-phase backbone and one- and two-phase laterals,
plus per-phase complex injection profiles with diversified loads, a
solar offset on a subset of phases, and small minute-scale drift.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .feeder import Feeder, Line, PHASES, PhaseId
from .measurements import LoadProfile

# per-unit series impedance templates (ohmic + reactive, per unit length)
_SELF_Z = 0.006 + 0.013j
_MUTUAL_Z = 0.002 + 0.005j


def _line_impedance(n_phases: int, length: float) -> np.ndarray:
    z = np.full((n_phases, n_phases), _MUTUAL_Z, dtype=complex)
    np.fill_diagonal(z, _SELF_Z)
    return z * length


def synthetic_feeder(
    n_three_phase: int = 60,
    n_two_phase: int = 18,
    n_single_phase: int = 44,
    seed: int = 2024,
    name: str = "synthetic-feeder",
) -> Feeder:
    """Random radial feeder with the requested bus mix.

    The default mix gives 122 non-slack buses carrying 260 phases (263
    including the slack), the size class of a 123-bus test feeder.
    Three-phase buses form a tree rooted at the slack; laterals hang
    off three-phase buses with a random compatible phase subset.
    """
    if n_three_phase < 1:
        raise ConfigError("need at least one three-phase bus")
    rng = np.random.default_rng(seed)
    buses: list[tuple[int, str]] = [(0, "abc")]
    lines: list[Line] = []
    next_idx = 1

    def add_bus(phases: str, parent: int):
        nonlocal next_idx
        idx = next_idx
        next_idx += 1
        buses.append((idx, phases))
        length = rng.uniform(0.4, 1.6)
        lines.append(Line(parent, idx, _line_impedance(len(phases), length)))
        return idx

    three_phase = [0]
    for _ in range(n_three_phase):
        parent = int(rng.choice(three_phase))
        three_phase.append(add_bus("abc", parent))

    for _ in range(n_two_phase):
        parent = int(rng.choice(three_phase[1:]))
        pair = sorted(rng.choice(list(PHASES), size=2, replace=False))
        add_bus("".join(pair), parent)

    for _ in range(n_single_phase):
        parent = int(rng.choice(three_phase[1:]))
        add_bus(str(rng.choice(list(PHASES))), parent)

    rot = np.exp(-2j * np.pi / 3)
    slack = np.array([1.0, rot, rot**2], dtype=complex)
    return Feeder(
        buses=tuple(buses),
        lines=tuple(lines),
        slack_voltage=slack,
        base_power_va=5e6,
        base_voltage_v=4160.0,
        name=name,
    )


def synthetic_profile(
    feeder: Feeder,
    T: int = 4,
    seed: int = 77,
    mean_load: float = 0.025,
    solar_fraction: float = 0.25,
    power_factor: float = 0.95,
    q_diversity: float = 0.4,
    drift_std: float = 0.0005,
    shape_decline: float = 0.002,
) -> LoadProfile:
    """Diversified complex injections for every non-slack phase.

    Each phase draws a base active load around ``mean_load`` p.u.; a
    ``solar_fraction`` subset gets a positive active offset.  The base
    reactive power follows a uniform ``power_factor``, and the first
    snapshot additionally carries an independent per-phase reactive
    component of scale ``q_diversity * mean_load`` (a "busy" minute).
    Later snapshots are calmer: a slowly declining common shape plus a
    small per-phase multiplicative drift.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    phases = tuple(feeder.phase_ids)
    n = len(phases)
    rng = np.random.default_rng(seed)

    p = rng.uniform(0.4, 1.8, size=n) * mean_load
    solar = rng.random(n) < solar_fraction
    p_solar = np.where(solar, rng.uniform(0.2, 0.9, size=n) * mean_load, 0.0)
    q = p * np.tan(np.arccos(power_factor))
    base = -p + p_solar - 1j * q
    dq = rng.normal(0.0, q_diversity * mean_load, size=n)

    shape = 1.0 - shape_decline * np.arange(T)
    jitter = 1.0 + rng.normal(0.0, drift_std, size=(T, n))
    series = base[None, :] * shape[:, None] * jitter
    series[0] += 1j * dq
    return LoadProfile(phases=phases, series=series.astype(complex))
