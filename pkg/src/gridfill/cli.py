"""Command line interface.

Subcommands:
  generate    feeder + profile -> ground truth and (optionally) masked matrix
  spectrum    matrix CSV -> normalized singular value spectrum
  linearize   feeder -> linear voltage model export (.npz)
  estimate    masked matrix + model -> state estimate (single run)
  benchmark   full availability / time-step sweep with Monte Carlo replicates

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridfillError
from .estimator import EstimatorConfig, SelectorMaps, run_alternating_minimization
from .feeder import Feeder, assemble_admittance
from .harness import ScenarioConfig, run_and_emit
from .linmodel import build_block_model, linearize_power_flow, load_linear_model, save_linear_model
from .measurements import (
    LoadProfile,
    NoiseSpec,
    apply_observation_mask,
    build_measurement_matrix,
    inject_noise,
    load_measurement_csv,
    save_measurement_csv,
    singular_value_spectrum,
    simulate_timeseries,
)
from .metrics import wrap_angle_deg


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rank", type=int, default=4, help="factor rank")
    p.add_argument("--mu", type=float, default=100.0, help="data-misfit weight")
    p.add_argument("--nu", type=float, default=10.0, help="physics-penalty weight")
    p.add_argument("--iters", type=int, default=100, help="iteration cap")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative objective-change stopping tolerance")
    p.add_argument("--no-early-stop", action="store_true",
                   help="always run the full iteration count")
    p.add_argument("--method", choices=("direct", "cg"), default="direct")


def _estimator_config(args) -> EstimatorConfig:
    return EstimatorConfig(
        rank=args.rank,
        mu=args.mu,
        nu=args.nu,
        max_iter=args.iters,
        tol=args.tol,
        early_stop=not args.no_early_stop,
        method=args.method,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridfill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate ground truth and mask it")
    p.add_argument("--feeder", required=True)
    p.add_argument("--profile", required=True,
                   help="profile CSV path or 'synthetic:seed=N,...'")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--fraction", type=float, default=None,
                   help="if set, also emit a masked & noisy matrix")
    p.add_argument("--noise-std", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("spectrum", help="singular value spectrum of a matrix CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("linearize", help="export the linear voltage model")
    p.add_argument("--feeder", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="single estimation run")
    p.add_argument("--matrix", required=True, help="masked matrix CSV (with sidecar)")
    p.add_argument("--model", required=True, help="linear model .npz")
    p.add_argument("--truth", default=None, help="clean matrix CSV for scoring")
    _add_estimator_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="full Monte Carlo sweep")
    p.add_argument("--feeder", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--T", type=int, nargs="+", default=[1])
    p.add_argument("--fractions", type=float, nargs="+",
                   default=[0.1, 0.3, 0.5, 0.7])
    p.add_argument("--noise-std", type=float, default=0.01)
    p.add_argument("--runs", type=int, default=50)
    _add_estimator_flags(p)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--baseline-svt", action="store_true")
    p.add_argument("--svt-steps", type=int, default=200)
    p.add_argument("--out", required=True)
    return parser


def _cmd_generate(args) -> int:
    feeder = Feeder.from_json(args.feeder)
    if args.profile.startswith("synthetic"):
        from .synthetic import synthetic_profile

        profile = synthetic_profile(feeder, T=args.T, seed=args.seed)
    else:
        profile = LoadProfile.load_csv(args.profile).head(args.T)
    series = simulate_timeseries(feeder, profile)
    M = build_measurement_matrix(series, ordering=tuple(feeder.phase_ids))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_measurement_csv(M, outdir / "ground_truth.csv")
    profile.save_csv(outdir / "profile.csv")
    if args.fraction is not None:
        mask = apply_observation_mask(M, args.fraction, args.seed)
        noisy = inject_noise(M, mask, NoiseSpec(args.noise_std, args.seed + 1))
        save_measurement_csv(
            noisy,
            outdir / "masked.csv",
            mask=mask,
            seeds={"mask": args.seed, "noise": args.seed + 1},
            extra={"noise_std": args.noise_std},
        )
    print(f"wrote ground truth for T={M.T}, {M.n} phases to {outdir}")
    return 0


def _cmd_spectrum(args) -> int:
    M, _, _ = load_measurement_csv(args.matrix)
    sv, cum = singular_value_spectrum(M)
    out = Path(args.out)
    if out.is_dir() or out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "spectrum.csv"
    with open(out, "w") as fh:
        fh.write("index,normalized_sv,cumulative\n")
        for i, (a, b) in enumerate(zip(sv, cum)):
            fh.write(f"{i},{a!r},{b!r}\n")
    print(f"wrote {out}")
    return 0


def _cmd_linearize(args) -> int:
    feeder = Feeder.from_json(args.feeder)
    adm = assemble_admittance(feeder)
    lin = linearize_power_flow(adm, feeder.slack_voltage)
    out = Path(args.out)
    if out.is_dir() or out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "linear_model.npz"
    save_linear_model(lin, out)
    print(f"wrote {out} ({lin.n} phases, {lin.linearization} linearization)")
    return 0


def _cmd_estimate(args) -> int:
    M, mask, sidecar = load_measurement_csv(args.matrix)
    if mask is None:
        raise ConfigError("matrix sidecar carries no observation mask")
    lin = load_linear_model(args.model)
    model = build_block_model(lin, M.T)
    config = _estimator_config(args)
    result = run_alternating_minimization(
        M, mask, model, config, seeds=sidecar.get("seeds", {})
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    labels = sidecar.get("phases") or [str(j) for j in range(M.n)]
    doc = {
        "config": {
            "rank": config.rank,
            "mu": config.mu,
            "nu": config.nu,
            "max_iter": config.max_iter,
            "tol": config.tol,
            "method": config.method,
        },
        "seeds": result.seeds,
        "iterations": result.trace.iterations,
        "objective": result.trace.objectives,
        "u_step_norms": result.trace.u_step_norms,
        "v_step_norms": result.trace.v_step_norms,
        "phases": labels,
        "magnitude_pu": result.magnitudes.tolist(),
        "angle_deg": result.angles_deg.tolist(),
    }
    with open(outdir / "estimate.json", "w") as fh:
        json.dump(doc, fh)

    if args.truth:
        truth_M, _, _ = load_measurement_csv(args.truth)
        truth_v = truth_M.voltage_phasors()
        mag_t = np.abs(truth_v)
        ang_t = np.degrees(np.angle(truth_v))
        with open(outdir / "errors.csv", "w") as fh:
            fh.write("time,phase,mag_true,mag_est,mag_err_pct,"
                     "ang_true_deg,ang_est_deg,ang_err_deg\n")
            for t in range(M.T):
                for j, label in enumerate(labels):
                    mag_err = 100.0 * abs(
                        (result.magnitudes[t, j] - mag_t[t, j]) / mag_t[t, j]
                    )
                    ang_err = abs(
                        float(wrap_angle_deg(result.angles_deg[t, j] - ang_t[t, j]))
                    )
                    fh.write(
                        f"{t},{label},{mag_t[t, j]!r},{result.magnitudes[t, j]!r},"
                        f"{mag_err!r},{ang_t[t, j]!r},"
                        f"{result.angles_deg[t, j]!r},{ang_err!r}\n"
                    )
    print(f"estimate finished in {result.trace.iterations} iterations; "
          f"wrote {outdir}")
    return 0


def _cmd_benchmark(args) -> int:
    config = ScenarioConfig(
        feeder_path=args.feeder,
        profile=args.profile,
        t_values=tuple(args.T),
        fractions=tuple(args.fractions),
        noise_std=args.noise_std,
        runs=args.runs,
        estimator=_estimator_config(args),
        baseline_svt=args.baseline_svt,
        svt_steps=args.svt_steps,
        master_seed=args.seed,
    )
    result = run_and_emit(config, args.out)
    print(
        f"benchmark complete: {len(result.records)} records, "
        f"{len(result.failures)} failures -> {args.out}"
    )
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "spectrum": _cmd_spectrum,
    "linearize": _cmd_linearize,
    "estimate": _cmd_estimate,
    "benchmark": _cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GridfillError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
