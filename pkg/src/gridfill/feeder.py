"""Multiphase radial feeder model and nodal admittance assembly.

A feeder is a tree of buses, each carrying a subset of the phases
``a``, ``b``, ``c``.  Bus 0 is the slack bus and always carries all
three phases.  Lines are series impedance matrices over the phases
shared by their endpoints.  All quantities are per-unit on the bases
stored in the feeder.

The global column/row ordering used by every matrix in this package is
the list of non-slack ``PhaseId`` values sorted by bus index, then
phase letter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FeederError, NumericalError

PHASES = ("a", "b", "c")


class PhaseId(NamedTuple):
    """One phase of one bus; sorts by (bus, phase letter)."""

    bus: int
    phase: str

    def label(self) -> str:
        return f"{self.bus}.{self.phase}"

    @staticmethod
    def from_label(label: str) -> "PhaseId":
        bus, phase = label.rsplit(".", 1)
        return PhaseId(int(bus), phase)


@dataclass(frozen=True)
class Line:
    """Series branch between two buses over their shared phases.

    ``z`` is the complex per-unit impedance matrix, ordered by phase
    letter over the shared phases of the endpoints.
    """

    from_bus: int
    to_bus: int
    z: np.ndarray


@dataclass(frozen=True)
class Feeder:
    """Radial multiphase network plus slack voltage and bases.

    ``buses`` maps bus index to its carried phases (a string such as
    ``"abc"`` or ``"b"``).  Arrays are treated as immutable after
    construction.
    """

    buses: tuple[tuple[int, str], ...]
    lines: tuple[Line, ...]
    slack_voltage: np.ndarray          # complex, one entry per slack phase
    base_power_va: float = 1e6
    base_voltage_v: float = 4160.0
    name: str = "feeder"

    def __post_init__(self):
        self.validate()

    # -- ordering ---------------------------------------------------------

    def bus_phases(self, bus: int) -> str:
        for idx, phases in self.buses:
            if idx == bus:
                return phases
        raise FeederError(f"bus {bus} not declared")

    @property
    def slack_phase_ids(self) -> list[PhaseId]:
        return [PhaseId(0, p) for p in self.bus_phases(0)]

    @property
    def phase_ids(self) -> list[PhaseId]:
        """Global ordering of non-slack phases: by bus index, then letter."""
        out = [
            PhaseId(idx, p)
            for idx, phases in sorted(self.buses)
            for p in sorted(phases)
            if idx != 0
        ]
        return out

    @property
    def n_phases(self) -> int:
        """Number of non-slack phases (the matrix column count)."""
        return len(self.phase_ids)

    @property
    def n_phases_total(self) -> int:
        """Phase count including the slack bus."""
        return len(self.phase_ids) + len(self.slack_phase_ids)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        indices = [idx for idx, _ in self.buses]
        if len(set(indices)) != len(indices):
            raise FeederError("duplicate bus indices")
        if 0 not in indices:
            raise FeederError("slack bus 0 missing")
        if sorted(self.bus_phases(0)) != list(PHASES):
            raise FeederError("slack bus must carry phases a, b, c")
        for idx, phases in self.buses:
            if idx < 0:
                raise FeederError(f"negative bus index {idx}")
            if not phases or any(p not in PHASES for p in phases):
                raise FeederError(f"bus {idx}: invalid phase set {phases!r}")
        v0 = np.asarray(self.slack_voltage)
        if v0.shape != (len(self.bus_phases(0)),):
            raise FeederError("slack_voltage length must match slack phases")
        if np.any(np.abs(v0) == 0):
            raise FeederError("slack voltage entries must be nonzero")

        bus_set = set(indices)
        for ln in self.lines:
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise FeederError(f"line {ln.from_bus}-{ln.to_bus}: unknown bus")
            shared = sorted(
                set(self.bus_phases(ln.from_bus)) & set(self.bus_phases(ln.to_bus))
            )
            if not shared:
                raise FeederError(
                    f"line {ln.from_bus}-{ln.to_bus}: endpoints share no phase"
                )
            z = np.asarray(ln.z)
            if z.shape != (len(shared), len(shared)):
                raise FeederError(
                    f"line {ln.from_bus}-{ln.to_bus}: impedance must be "
                    f"{len(shared)}x{len(shared)}"
                )
            if not np.allclose(z, z.T, rtol=1e-12, atol=1e-15):
                raise FeederError(
                    f"line {ln.from_bus}-{ln.to_bus}: impedance must be symmetric"
                )

        # connected + radial (tree): |E| = |V|-1 and every bus reachable
        if len(self.lines) != len(self.buses) - 1:
            raise FeederError(
                f"not radial: {len(self.lines)} lines for {len(self.buses)} buses"
            )
        adj: dict[int, list[int]] = {idx: [] for idx in indices}
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {0}
        stack = [0]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if seen != bus_set:
            missing = sorted(bus_set - seen)
            raise FeederError(f"disconnected buses: {missing}")

    # -- JSON I/O ---------------------------------------------------------

    @staticmethod
    def from_json(path) -> "Feeder":
        with open(path) as fh:
            doc = json.load(fh)
        try:
            buses = tuple((int(b["index"]), str(b["phases"])) for b in doc["buses"])
            lines = tuple(
                Line(
                    int(l["from"]),
                    int(l["to"]),
                    np.array(
                        [[complex(re, im) for re, im in row] for row in l["z"]]
                    ),
                )
                for l in doc["lines"]
            )
            v0 = np.array([complex(re, im) for re, im in doc["slack_voltage"]])
            bases = doc.get("bases", {})
        except (KeyError, TypeError, ValueError) as exc:
            raise FeederError(f"malformed feeder file {path}: {exc}") from exc
        return Feeder(
            buses=buses,
            lines=lines,
            slack_voltage=v0,
            base_power_va=float(bases.get("power_va", 1e6)),
            base_voltage_v=float(bases.get("voltage_v", 4160.0)),
            name=str(doc.get("name", "feeder")),
        )

    def to_json(self, path) -> None:
        doc = {
            "name": self.name,
            "buses": [{"index": idx, "phases": phases} for idx, phases in self.buses],
            "lines": [
                {
                    "from": ln.from_bus,
                    "to": ln.to_bus,
                    "z": [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(ln.z)],
                }
                for ln in self.lines
            ],
            "slack_voltage": [
                [float(v.real), float(v.imag)] for v in np.asarray(self.slack_voltage)
            ],
            "bases": {"power_va": self.base_power_va, "voltage_v": self.base_voltage_v},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


@dataclass(frozen=True)
class MultiphaseAdmittance:
    """Nodal admittance matrix partitioned into slack / non-slack blocks.

    The full matrix ``[Y00 Y0L; YL0 YLL]`` is symmetric; ``ordering``
    fixes the column order of the non-slack block and of every matrix
    derived from it.
    """

    Y00: np.ndarray
    Y0L: np.ndarray
    YL0: np.ndarray
    YLL: np.ndarray
    ordering: tuple[PhaseId, ...]
    slack_ordering: tuple[PhaseId, ...]

    @property
    def full(self) -> np.ndarray:
        top = np.hstack([self.Y00, self.Y0L])
        bot = np.hstack([self.YL0, self.YLL])
        return np.vstack([top, bot])


RCOND_MIN = 1e-12


def assemble_admittance(feeder: Feeder) -> MultiphaseAdmittance:
    """Build the partitioned nodal admittance matrix of a feeder.

    Each line stamps ``y = z^-1`` on its endpoints' shared phases.  The
    inverse is symmetrized so the assembled matrix is exactly symmetric.

    Raises
    ------
    FeederError
        If the feeder violates its invariants (disconnected, wrong
        impedance shape, ...).
    NumericalError
        If a line impedance is singular or the non-slack block is
        conditioned worse than ``RCOND_MIN``.
    """
    feeder.validate()

    slack_ids = feeder.slack_phase_ids
    load_ids = feeder.phase_ids
    all_ids = slack_ids + load_ids
    pos = {pid: k for k, pid in enumerate(all_ids)}
    n_all = len(all_ids)
    n_slack = len(slack_ids)

    Y = np.zeros((n_all, n_all), dtype=complex)
    for ln in feeder.lines:
        shared = sorted(
            set(feeder.bus_phases(ln.from_bus)) & set(feeder.bus_phases(ln.to_bus))
        )
        z = np.asarray(ln.z, dtype=complex)
        if np.linalg.cond(z) > 1.0 / RCOND_MIN:
            raise NumericalError(
                f"line {ln.from_bus}-{ln.to_bus}: singular impedance matrix"
            )
        y = np.linalg.inv(z)
        y = 0.5 * (y + y.T)
        idx_i = [pos[PhaseId(ln.from_bus, p)] for p in shared]
        idx_j = [pos[PhaseId(ln.to_bus, p)] for p in shared]
        Y[np.ix_(idx_i, idx_i)] += y
        Y[np.ix_(idx_j, idx_j)] += y
        Y[np.ix_(idx_i, idx_j)] -= y
        Y[np.ix_(idx_j, idx_i)] -= y

    YLL = Y[n_slack:, n_slack:]
    rcond = 1.0 / np.linalg.cond(YLL) if YLL.size else 0.0
    if not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise NumericalError(
            f"non-slack admittance block is near singular (rcond={rcond:.2e}); "
            "check for phases with no path to the slack bus"
        )
    return MultiphaseAdmittance(
        Y00=Y[:n_slack, :n_slack],
        Y0L=Y[:n_slack, n_slack:],
        YL0=Y[n_slack:, :n_slack],
        YLL=YLL,
        ordering=tuple(load_ids),
        slack_ordering=tuple(slack_ids),
    )
