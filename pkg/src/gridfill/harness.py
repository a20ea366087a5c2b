"""End-to-end benchmark harness: availability sweeps with Monte Carlo
replicates, metric aggregation, and CSV/JSON emission.

Seed discipline: every (cell, replicate) derives two integer seeds from
the master seed via ``SeedSequence(master, spawn_key=(cell, replicate))``
-- one for the observation mask, one for the noise -- so any single
replicate can be reproduced in isolation.  Cells are enumerated in
(T, fraction) order as configured.

Determinism: metrics.csv, spectrum.csv and the trace files depend only
on (config, master seed).  Wall-clock measurements are inherently
nondeterministic and are therefore written to a separate timing.csv.
"""

from __future__ import annotations

import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .errors import ConfigError, GridfillError, NumericalError
from .estimator import (
    EstimatorConfig,
    IterationTrace,
    SelectorMaps,
    extract_state,
    run_alternating_minimization,
    svt_complete,
)
from .feeder import Feeder
from .linmodel import StackedLinearModel, build_block_model, linearize_power_flow
from .measurements import (
    GroundTruthSeries,
    LoadProfile,
    MeasurementMatrix,
    NoiseSpec,
    apply_observation_mask,
    build_measurement_matrix,
    inject_noise,
    singular_value_spectrum,
    simulate_timeseries,
)
from .feeder import assemble_admittance
from .metrics import MetricsRecord, compute_mae_angle, compute_mape_magnitude

WORKERS_ENV = "GRIDFILL_WORKERS"


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one benchmark invocation needs."""

    feeder_path: str
    profile: str                       # CSV path or "synthetic:key=value,..."
    t_values: tuple[int, ...] = (1,)
    fractions: tuple[float, ...] = (0.5,)
    noise_std: float = 0.01
    runs: int = 50
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    baseline_svt: bool = False
    svt_steps: int = 200
    master_seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ConfigError("fractions must lie in [0, 1]")
        if any(t < 1 for t in self.t_values):
            raise ConfigError("every T must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise std must be >= 0")

    def effective_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))


@dataclass
class ScenarioResult:
    records: list[MetricsRecord]
    spectra: dict[int, tuple[np.ndarray, np.ndarray]]
    traces: dict[str, IterationTrace]
    failures: list[dict]
    meta: dict


def derive_seeds(master_seed: int, cell_index: int, replicate: int) -> tuple[int, int]:
    """Two independent integer seeds (mask, noise) for one replicate."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(cell_index, replicate))
    state = ss.generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def cell_label(T: int, fraction: float) -> str:
    return f"T{T}_f{fraction:g}"


def _resolve_profile(config: ScenarioConfig, feeder: Feeder, max_T: int) -> LoadProfile:
    from .synthetic import synthetic_profile

    if config.profile.startswith("synthetic:") or config.profile == "synthetic":
        kwargs = {}
        spec = config.profile.partition(":")[2]
        for item in filter(None, spec.split(",")):
            key, _, value = item.partition("=")
            kwargs[key.strip()] = float(value)
        seed = int(kwargs.pop("seed", 77))
        profile = synthetic_profile(feeder, T=max_T, seed=seed, **kwargs)
    else:
        profile = LoadProfile.load_csv(config.profile)
    if profile.T < max_T:
        raise ConfigError(
            f"profile has {profile.T} steps but the scenario needs {max_T}"
        )
    return profile


def _run_replicate(
    M: MeasurementMatrix,
    model: StackedLinearModel,
    truth_mag: np.ndarray,
    truth_ang: np.ndarray,
    config: ScenarioConfig,
    cell_index: int,
    T: int,
    fraction: float,
    replicate: int,
):
    """One (mask, noise, estimate, score) cycle.  Returns
    (records, trace, failure_dict_or_None)."""
    mask_seed, noise_seed = derive_seeds(config.master_seed, cell_index, replicate)
    records: list[MetricsRecord] = []
    trace = None
    try:
        mask = apply_observation_mask(M, fraction, mask_seed)
        noisy = inject_noise(M, mask, NoiseSpec(config.noise_std, noise_seed))
        tic = time.perf_counter()
        result = run_alternating_minimization(
            noisy, mask, model, config.estimator,
            seeds={"mask": mask_seed, "noise": noise_seed},
        )
        wall = time.perf_counter() - tic
        records.append(
            MetricsRecord(
                method="am",
                T=T,
                fraction=fraction,
                replicate=replicate,
                mask_seed=mask_seed,
                noise_seed=noise_seed,
                mape_vmag_pct=compute_mape_magnitude(result.magnitudes, truth_mag),
                mae_angle_deg=compute_mae_angle(result.angles_deg, truth_ang),
                iterations=result.trace.iterations,
                final_objective=result.trace.objectives[-1],
                wall_seconds=wall,
            )
        )
        trace = result.trace
        if config.baseline_svt:
            tic = time.perf_counter()
            X = svt_complete(noisy, mask, config.estimator.mu, config.svt_steps)
            wall = time.perf_counter() - tic
            mag, ang = extract_state(X, SelectorMaps(T))
            W = mask.as_bool(M.shape)
            misfit = np.where(W, X - noisy.values, 0.0)
            svt_obj = float(
                np.linalg.svd(X, compute_uv=False).sum()
                + 0.5 * config.estimator.mu * np.sum(misfit * misfit)
            )
            records.append(
                MetricsRecord(
                    method="svt",
                    T=T,
                    fraction=fraction,
                    replicate=replicate,
                    mask_seed=mask_seed,
                    noise_seed=noise_seed,
                    mape_vmag_pct=compute_mape_magnitude(mag, truth_mag),
                    mae_angle_deg=compute_mae_angle(ang, truth_ang),
                    iterations=config.svt_steps,
                    final_objective=svt_obj,
                    wall_seconds=wall,
                )
            )
        return records, trace, None
    except GridfillError as exc:
        failure = {
            "cell": cell_label(T, fraction),
            "replicate": replicate,
            "error": f"{type(exc).__name__}: {exc}",
        }
        return records, trace, failure


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run the full (T, fraction) grid of Monte Carlo cells."""
    feeder = Feeder.from_json(config.feeder_path)
    max_T = max(config.t_values)
    profile = _resolve_profile(config, feeder, max_T)

    adm = assemble_admittance(feeder)
    lin = linearize_power_flow(adm, feeder.slack_voltage)
    series_full = simulate_timeseries(feeder, profile.head(max_T))

    per_T: dict[int, tuple] = {}
    spectra: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for T in sorted(set(config.t_values)):
        series = GroundTruthSeries(states=series_full.states[:T])
        M = build_measurement_matrix(series, ordering=tuple(feeder.phase_ids))
        v = series.voltages()
        per_T[T] = (
            M,
            build_block_model(lin, T),
            np.abs(v),
            np.degrees(np.angle(v)),
        )
        spectra[T] = singular_value_spectrum(M)

    cells = list(product(config.t_values, config.fractions))
    records: list[MetricsRecord] = []
    traces: dict[str, IterationTrace] = {}
    failures: list[dict] = []

    workers = config.effective_workers()
    for cell_index, (T, fraction) in enumerate(cells):
        M, model, truth_mag, truth_ang = per_T[T]

        def task(rep, _ci=cell_index, _T=T, _f=fraction, _M=M, _model=model,
                 _tm=truth_mag, _ta=truth_ang):
            return _run_replicate(_M, _model, _tm, _ta, config, _ci, _T, _f, rep)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(task, range(config.runs)))
        else:
            outcomes = [task(rep) for rep in range(config.runs)]

        cell_ok = False
        for rep, (recs, trace, failure) in enumerate(outcomes):
            records.extend(recs)
            if failure is not None:
                failures.append(failure)
            else:
                cell_ok = True
                if rep == 0 and trace is not None:
                    traces[cell_label(T, fraction)] = trace
        if not cell_ok:
            raise NumericalError(
                f"every replicate failed in cell {cell_label(T, fraction)}; "
                f"first error: {failures[-config.runs]['error']}"
            )

    meta = {
        "phases_nonslack": len(feeder.phase_ids),
        "phases_total": feeder.n_phases_total,
        "linearization": lin.linearization,
        "workers": workers,
        "cells": [cell_label(T, f) for T, f in cells],
    }
    return ScenarioResult(
        records=records, spectra=spectra, traces=traces, failures=failures, meta=meta
    )


# -- aggregation and output --------------------------------------------------

def aggregate_records(records: list[MetricsRecord]) -> list[dict]:
    """Per-(method, T, fraction) mean and population std of both metrics."""
    groups: dict[tuple, list[MetricsRecord]] = {}
    order: list[tuple] = []
    for rec in records:
        key = (rec.method, rec.T, rec.fraction)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(rec)
    rows = []
    for key in order:
        method, T, fraction = key
        mapes = np.array([r.mape_vmag_pct for r in groups[key]])
        maes = np.array([r.mae_angle_deg for r in groups[key]])
        rows.append(
            {
                "method": method,
                "T": T,
                "fraction": fraction,
                "n": len(groups[key]),
                "mape_mean": float(mapes.mean()),
                "mape_std": float(mapes.std()),
                "mae_mean": float(maes.mean()),
                "mae_std": float(maes.std()),
            }
        )
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_outputs(
    records: list[MetricsRecord],
    spectra: dict[int, tuple[np.ndarray, np.ndarray]],
    traces: dict[str, IterationTrace],
    outdir,
    config: ScenarioConfig | None = None,
    failures: list[dict] | None = None,
    meta: dict | None = None,
) -> list[Path]:
    """Write metrics.csv, timing.csv, spectrum.csv, per-cell traces and
    manifest.json into ``outdir``; returns the written paths."""
    if not records:
        raise ConfigError("no records to emit")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics_path = outdir / "metrics.csv"
    with open(metrics_path, "w") as fh:
        fh.write(
            "kind,method,T,fraction,replicate,mask_seed,noise_seed,"
            "mape_vmag_pct,mae_angle_deg,iterations,final_objective\n"
        )
        for r in records:
            fh.write(
                ",".join(
                    [
                        "replicate",
                        r.method,
                        str(r.T),
                        _fmt(r.fraction),
                        str(r.replicate),
                        str(r.mask_seed),
                        str(r.noise_seed),
                        _fmt(r.mape_vmag_pct),
                        _fmt(r.mae_angle_deg),
                        str(r.iterations),
                        _fmt(r.final_objective),
                    ]
                )
                + "\n"
            )
        for row in aggregate_records(records):
            for kind, mape, mae in (
                ("aggregate_mean", row["mape_mean"], row["mae_mean"]),
                ("aggregate_std", row["mape_std"], row["mae_std"]),
            ):
                fh.write(
                    ",".join(
                        [
                            kind,
                            row["method"],
                            str(row["T"]),
                            _fmt(row["fraction"]),
                            str(row["n"]),
                            "",
                            "",
                            _fmt(mape),
                            _fmt(mae),
                            "",
                            "",
                        ]
                    )
                    + "\n"
                )
    written.append(metrics_path)

    timing_path = outdir / "timing.csv"
    with open(timing_path, "w") as fh:
        fh.write("method,T,fraction,replicate,wall_seconds\n")
        for r in records:
            fh.write(
                f"{r.method},{r.T},{_fmt(r.fraction)},{r.replicate},"
                f"{_fmt(r.wall_seconds)}\n"
            )
    written.append(timing_path)

    spectrum_path = outdir / "spectrum.csv"
    with open(spectrum_path, "w") as fh:
        fh.write("T,index,normalized_sv,cumulative\n")
        for T in sorted(spectra):
            sv, cum = spectra[T]
            for i, (a, b) in enumerate(zip(sv, cum)):
                fh.write(f"{T},{i},{_fmt(float(a))},{_fmt(float(b))}\n")
    written.append(spectrum_path)

    for label, trace in traces.items():
        trace_path = outdir / f"trace_{label}.csv"
        with open(trace_path, "w") as fh:
            fh.write("iteration,objective,u_step_norm,v_step_norm\n")
            fh.write(f"0,{_fmt(trace.objectives[0])},,\n")
            for i in range(trace.iterations):
                fh.write(
                    f"{i + 1},{_fmt(trace.objectives[i + 1])},"
                    f"{_fmt(trace.u_step_norms[i])},{_fmt(trace.v_step_norms[i])}\n"
                )
        written.append(trace_path)

    manifest = {
        "versions": {
            "gridfill": _pkg_version,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "config": None if config is None else _config_dict(config),
        "failures": failures or [],
        "meta": meta or {},
    }
    try:
        import scipy

        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    manifest_path = outdir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    written.append(manifest_path)
    return written


def _config_dict(config: ScenarioConfig) -> dict:
    doc = asdict(config)
    doc["estimator"] = asdict(config.estimator)
    return doc


def run_and_emit(config: ScenarioConfig, outdir) -> ScenarioResult:
    """Convenience pipeline: run the scenario, then write all outputs."""
    result = run_scenario(config)
    emit_outputs(
        result.records,
        result.spectra,
        result.traces,
        outdir,
        config=config,
        failures=result.failures,
        meta=result.meta,
    )
    return result
