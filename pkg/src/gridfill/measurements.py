"""Ground-truth simulation, data-matrix assembly, masking and noise.

The data matrix stacks one 5-row block per snapshot: real part of the
voltage, imaginary part, voltage magnitude, active injection, reactive
injection, one column per non-slack phase.  Only the magnitude and the
two injection rows are ever observable; the phasor rows are the
quantities being estimated.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .feeder import Feeder, PhaseId, assemble_admittance
from .powerflow import StateVector, solve_power_flow

ROWS_PER_STEP = 5
ELIGIBLE_ROW_TYPES = (2, 3, 4)  # |v|, Re(s), Im(s)


@dataclass(frozen=True)
class LoadProfile:
    """Per-phase complex injection time series (p.u., loads negative)."""

    phases: tuple[PhaseId, ...]
    series: np.ndarray  # complex, T x n
    resolution: str = "1min"

    def __post_init__(self):
        if self.series.ndim != 2 or self.series.shape[0] < 1:
            raise ConfigError("profile series must be a T x n array with T >= 1")
        if self.series.shape[1] != len(self.phases):
            raise ConfigError("profile column count must match phase list")

    @property
    def T(self) -> int:
        return self.series.shape[0]

    def head(self, T: int) -> "LoadProfile":
        if not 1 <= T <= self.T:
            raise ConfigError(f"cannot take {T} steps from a {self.T}-step profile")
        return LoadProfile(self.phases, self.series[:T], self.resolution)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([pid.label() for pid in self.phases])
            for row in self.series:
                writer.writerow([f"{z.real:.17g}:{z.imag:.17g}" for z in row])

    @staticmethod
    def load_csv(path, resolution: str = "1min") -> "LoadProfile":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigError(f"empty profile file {path}") from None
            phases = tuple(PhaseId.from_label(h) for h in header)
            rows = []
            for rec in reader:
                if len(rec) != len(phases):
                    raise ConfigError(f"ragged profile row in {path}")
                vals = []
                for cell in rec:
                    re, _, im = cell.partition(":")
                    vals.append(complex(float(re), float(im or 0.0)))
                rows.append(vals)
        if not rows:
            raise ConfigError(f"profile {path} has no time steps")
        return LoadProfile(phases, np.array(rows, dtype=complex), resolution)


@dataclass(frozen=True)
class GroundTruthSeries:
    """Exact power-flow states, one per snapshot."""

    states: tuple[StateVector, ...]

    @property
    def T(self) -> int:
        return len(self.states)

    def voltages(self) -> np.ndarray:
        return np.array([st.v for st in self.states])

    def injections(self) -> np.ndarray:
        return np.array([st.s for st in self.states])


@dataclass(frozen=True)
class MeasurementMatrix:
    """The 5T x n real data matrix plus its phase ordering."""

    values: np.ndarray
    T: int
    ordering: tuple[PhaseId, ...] = ()

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != ROWS_PER_STEP * self.T:
            raise ConfigError("measurement matrix must have 5T rows")
        if self.ordering and len(self.ordering) != self.values.shape[1]:
            raise ConfigError("ordering length must match column count")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def voltage_phasors(self) -> np.ndarray:
        """T x n complex voltages read back from the phasor rows."""
        re = self.values[0::ROWS_PER_STEP]
        im = self.values[1::ROWS_PER_STEP]
        return re + 1j * im


@dataclass(frozen=True)
class ObservationMask:
    """Index set of known entries, stored in row-major sorted order."""

    indices: np.ndarray  # k x 2 int
    fraction: float
    policy: str = "measurements-only"

    @property
    def k(self) -> int:
        return self.indices.shape[0]

    def as_bool(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        if self.k:
            out[self.indices[:, 0], self.indices[:, 1]] = True
        return out


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative gaussian noise: entry -> entry * (1 + eps)."""

    rel_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.rel_std < 0:
            raise ConfigError("relative noise std must be >= 0")


def simulate_timeseries(feeder: Feeder, profile: LoadProfile) -> GroundTruthSeries:
    """One exact power-flow solve per profile step."""
    expected = tuple(feeder.phase_ids)
    if profile.phases != expected:
        raise ConfigError(
            "profile phases do not match the feeder's non-slack ordering"
        )
    adm = assemble_admittance(feeder)
    v0 = np.asarray(feeder.slack_voltage, dtype=complex)
    states = tuple(
        solve_power_flow(adm, profile.series[t], v0) for t in range(profile.T)
    )
    return GroundTruthSeries(states=states)


def build_measurement_matrix(series: GroundTruthSeries,
                             ordering: tuple[PhaseId, ...] = ()) -> MeasurementMatrix:
    """Stack [Re(v); Im(v); |v|; Re(s); Im(s)] blocks over time."""
    if series.T < 1:
        raise ConfigError("empty ground-truth series")
    blocks = []
    for st in series.states:
        blocks.append(np.real(st.v))
        blocks.append(np.imag(st.v))
        blocks.append(np.abs(st.v))
        blocks.append(np.real(st.s))
        blocks.append(np.imag(st.s))
    return MeasurementMatrix(values=np.array(blocks), T=series.T, ordering=ordering)


def eligible_entries(T: int, n: int) -> np.ndarray:
    """Row-major list of (row, col) pairs that may ever be observed."""
    rows = np.array(
        [ROWS_PER_STEP * t + k for t in range(T) for k in ELIGIBLE_ROW_TYPES]
    )
    rr, cc = np.meshgrid(rows, np.arange(n), indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])


def apply_observation_mask(
    M: MeasurementMatrix, fraction: float, seed: int
) -> ObservationMask:
    """Sample a fraction of the eligible entries, uniformly, without
    replacement.  Deterministic for a given seed."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    pool = eligible_entries(M.T, M.n)
    count = int(round(fraction * pool.shape[0]))
    rng = np.random.default_rng(seed)
    picked = rng.choice(pool.shape[0], size=count, replace=False)
    picked.sort()
    return ObservationMask(indices=pool[picked], fraction=float(fraction))


def inject_noise(
    M: MeasurementMatrix, mask: ObservationMask, spec: NoiseSpec
) -> MeasurementMatrix:
    """Perturb masked entries multiplicatively; leave the rest untouched."""
    values = M.values.copy()
    if mask.k and spec.rel_std > 0:
        rng = np.random.default_rng(spec.seed)
        eps = rng.normal(0.0, spec.rel_std, size=mask.k)
        r, c = mask.indices[:, 0], mask.indices[:, 1]
        values[r, c] *= 1.0 + eps
    return MeasurementMatrix(values=values, T=M.T, ordering=M.ordering)


def singular_value_spectrum(M: MeasurementMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Normalized singular values (descending) and their cumulative sums."""
    svals = np.linalg.svd(M.values, compute_uv=False)
    total = svals.sum()
    if total == 0.0:
        raise ConfigError("spectrum of the zero matrix is undefined")
    normalized = svals / total
    return normalized, np.cumsum(normalized)


# -- CSV export / import ---------------------------------------------------

def save_measurement_csv(
    M: MeasurementMatrix,
    path,
    mask: ObservationMask | None = None,
    seeds: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write the matrix as CSV plus a `<path>.json` sidecar with the
    dimensions, phase labels, mask and seeds."""
    path = Path(path)
    np.savetxt(path, M.values, delimiter=",", fmt="%.17g")
    sidecar = {
        "rows": int(M.shape[0]),
        "cols": int(M.shape[1]),
        "T": int(M.T),
        "phases": [pid.label() for pid in M.ordering],
        "mask": None
        if mask is None
        else {
            "fraction": mask.fraction,
            "policy": mask.policy,
            "indices": mask.indices.tolist(),
        },
        "seeds": seeds or {},
    }
    sidecar.update(extra or {})
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh)


def load_measurement_csv(path) -> tuple[MeasurementMatrix, ObservationMask | None, dict]:
    path = Path(path)
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ConfigError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    ordering = tuple(PhaseId.from_label(x) for x in sidecar.get("phases", []))
    M = MeasurementMatrix(values=values, T=int(sidecar["T"]), ordering=ordering)
    mask = None
    if sidecar.get("mask"):
        mask = ObservationMask(
            indices=np.array(sidecar["mask"]["indices"], dtype=int).reshape(-1, 2),
            fraction=float(sidecar["mask"]["fraction"]),
            policy=sidecar["mask"].get("policy", "measurements-only"),
        )
    return M, mask, sidecar
