"""Command-line front end.

Subcommands: ``fit`` (estimate from a survey file and emit tables and
figures), ``simulate`` (write a synthetic survey file from a scenario
preset or file), ``verify`` (run the built-in verification suite),
``report`` (summarize a run directory and regenerate its figures).

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 singular system.
The output directory defaults to ``$CTREND_OUT_DIR`` when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .domain import DomainError
from .ingest import ingest_file
from .pipeline import FitOptions, batch_fit, build_manifest, run_fit
from .report import (
    manifest_digest,
    render_bundle_svgs,
    write_comparison_sheet,
    write_fit_bundle,
)
from .simulate import PRESETS, Scenario, SurveyPlan, preset, simulate, write_records
from .solve import SingularSystemError
from .verify import run_verification

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_SINGULAR = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrend",
        description="Estimate birth-cohort trends from independent cross-sectional surveys.",
    )
    parser.add_argument("--version", action="version", version=f"ctrend {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a survey data file and write the output bundle")
    fit.add_argument("data", help="survey file (see the README for the format)")
    fit.add_argument("--out", default=None, help="output directory (default: $CTREND_OUT_DIR or ./ctrend-out)")
    fit.add_argument("--config", default=None, help="JSON config file; flags override its entries")
    fit.add_argument("--trend-target", type=float, default=None, help="reference adjacent-trend correlation (default 0.9)")
    fit.add_argument("--level-target", type=float, default=None, help="reference initial-level correlation (default 0.7)")
    fit.add_argument("--trend-accuracy", type=float, default=None, help="stopping accuracy for the trend gap (default 0.05)")
    fit.add_argument("--level-accuracy", type=float, default=None, help="stopping accuracy for the level gap (default 0.05)")
    fit.add_argument("--trend-weight-init", type=float, default=None, help="initial trend smoothing weight (default 1.0)")
    fit.add_argument("--level-weight-init", type=float, default=None, help="initial level smoothing weight (default 1.0)")
    fit.add_argument("--max-iter", type=int, default=None, help="iteration budget (default 100)")
    fit.add_argument("--damping", type=float, default=None, help="weight-update damping exponent in (0, 1] (default 1.0)")
    fit.add_argument("--cell-min-count", type=int, default=None, help="exclude cells with at most this many records (default 5)")
    fit.add_argument("--domain-mode", type=int, choices=(1, 2), default=None, help="1: all cohort segments; 2: cohorts with 2+ data cells (default 1)")
    fit.add_argument("--age-window", type=int, default=None, help="cluster width in ages (default 5)")
    fit.add_argument("--year-window", type=int, default=None, help="cluster width in years (default 5)")
    fit.add_argument("--cohort", type=int, default=None, help="birth year for the cohort-track figure (default: best-covered cohort)")
    fit.add_argument("--weight-by-count", action="store_true", default=None, help="weight data rows by cell record counts")
    fit.add_argument("--literal-level-denominator", action="store_true", default=None, help="use the slot count instead of the link count in the level smoothness mean")
    fit.add_argument(
        "--pair",
        action="append",
        metavar="LEVEL:TREND",
        help="reference pair for batch mode, repeatable (e.g. --pair 0.7:0.9)",
    )

    sim = sub.add_parser("simulate", help="write a synthetic survey file")
    sim.add_argument("--preset", choices=sorted(PRESETS), default="table")
    sim.add_argument("--scenario", default=None, help="JSON scenario file (overrides --preset)")
    sim.add_argument("--out", required=True, help="output data file")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--noise", type=float, default=None, help="noise standard deviation")
    sim.add_argument("--samples", type=int, default=None, help="records per survey-age cell")

    ver = sub.add_parser("verify", help="run the built-in verification suite")
    ver.add_argument(
        "--negative-control",
        action="store_true",
        help="perturb the solver outputs; the checks must then fail",
    )

    rep = sub.add_parser("report", help="summarize a run directory and regenerate figures")
    rep.add_argument("rundir")
    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(config) - set(FitOptions().as_dict())
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return config


def _fit_options(args) -> FitOptions:
    values = FitOptions().as_dict()
    values.update(_load_config(args.config))
    overrides = {
        "trend_target": args.trend_target,
        "level_target": args.level_target,
        "trend_accuracy": args.trend_accuracy,
        "level_accuracy": args.level_accuracy,
        "trend_weight_init": args.trend_weight_init,
        "level_weight_init": args.level_weight_init,
        "max_iter": args.max_iter,
        "damping": args.damping,
        "cell_min_count": args.cell_min_count,
        "domain_mode": args.domain_mode,
        "age_window": args.age_window,
        "year_window": args.year_window,
        "cohort_birth_year": args.cohort,
        "weight_by_count": args.weight_by_count,
        "literal_level_denominator": args.literal_level_denominator,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return FitOptions(**values)


def _parse_pairs(specs):
    pairs = []
    for spec in specs:
        try:
            level, trend = spec.split(":")
            pairs.append((float(level), float(trend)))
        except ValueError:
            raise ValueError(f"bad --pair {spec!r}, expected LEVEL:TREND like 0.7:0.9")
    return pairs


def _cleanup(paths):
    for path in paths:
        try:
            os.unlink(path)
        except OSError:
            pass


def cmd_fit(args) -> int:
    outdir = args.out or os.environ.get("CTREND_OUT_DIR") or "ctrend-out"
    written = []
    try:
        options = _fit_options(args)
        ingest_result = ingest_file(args.data, cell_min_count=options.cell_min_count)
        if args.pair:
            pairs = _parse_pairs(args.pair)
            runs = batch_fit(ingest_result, options, pairs)
            digests = []
            for pair, fit in sorted(runs.items()):
                subdir = os.path.join(outdir, f"R_{pair[0]:g}_{pair[1]:g}")
                os.makedirs(subdir, exist_ok=True)
                manifest = build_manifest(fit, [os.path.abspath(args.data)])
                digests.append(manifest["digest"])
                written += write_fit_bundle(subdir, fit, manifest)
                status = "converged" if fit.iteration.converged else fit.iteration.reason
                print(f"R({pair[0]:g}, {pair[1]:g}): {status} in {fit.iteration.iterations} "
                      f"iteration(s), R^2 = {fit.solution.r2:.4f} -> {subdir}")
            written += write_comparison_sheet(outdir, runs, manifest_digest({"runs": digests}))
            if not all(fit.iteration.converged for fit in runs.values()):
                return EXIT_NO_CONVERGENCE
            return EXIT_OK
        fit = run_fit(ingest_result, options)
        manifest = build_manifest(fit, [os.path.abspath(args.data)])
        os.makedirs(outdir, exist_ok=True)
        written += write_fit_bundle(outdir, fit, manifest)
        status = "converged" if fit.iteration.converged else fit.iteration.reason
        print(
            f"{status} in {fit.iteration.iterations} iteration(s); "
            f"R^2 = {fit.solution.r2:.4f}, weights = ({fit.solution.trend_weight:.4g}, "
            f"{fit.solution.level_weight:.4g}); outputs in {outdir}"
        )
        if not fit.iteration.converged:
            return EXIT_NO_CONVERGENCE
        return EXIT_OK
    except SingularSystemError as err:
        _cleanup(written)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SINGULAR
    except (OSError, ValueError, DomainError) as err:
        _cleanup(written)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


def _scenario_from_file(path: str, seed: int) -> Scenario:
    from .grid import ObservationalFrame
    import numpy as np

    with open(path) as fh:
        spec = json.load(fh)
    frame = ObservationalFrame(
        float(spec["frame"]["y_min"]),
        float(spec["frame"]["y_max"]),
        float(spec["frame"]["a_min"]),
        float(spec["frame"]["a_max"]),
    )
    surveys = [
        SurveyPlan(
            year=int(s["year"]),
            age_min=int(s["age_min"]),
            age_max=int(s["age_max"]),
            samples_per_age=int(s.get("samples_per_age", 10)),
            start_month=int(s.get("start_month", 1)),
            duration_months=int(s.get("duration_months", 4)),
        )
        for s in spec["surveys"]
    ]
    slots = np.arange(frame.cohort_count, dtype=float)
    lv = spec.get("initial_levels", {})
    levels = float(lv.get("base", 24.0)) + float(lv.get("per_slot", 0.0)) * slots
    tr = spec.get("trends", {})
    ii, jj = np.meshgrid(
        np.arange(frame.year_cells, dtype=float),
        np.arange(frame.age_cells, dtype=float),
        indexing="ij",
    )
    trends = (
        float(tr.get("base", 0.1))
        + float(tr.get("per_year", 0.0)) * ii
        + float(tr.get("per_age", 0.0)) * jj
    )
    return Scenario(
        frame=frame,
        initial_levels=levels,
        trends=trends,
        surveys=surveys,
        noise_sd=float(spec.get("noise_sd", 0.0)),
        seed=int(spec.get("seed", seed)),
        label=spec.get("label", os.path.basename(path)),
    )


def cmd_simulate(args) -> int:
    try:
        if args.scenario:
            scenario = _scenario_from_file(args.scenario, args.seed)
        else:
            kwargs = {"seed": args.seed}
            if args.noise is not None:
                kwargs["noise_sd"] = args.noise
            if args.samples is not None:
                kwargs["samples_per_age"] = args.samples
            scenario = preset(args.preset, **kwargs)
        records = simulate(scenario)
        write_records(records, args.out)
        print(f"wrote {len(records)} records ({scenario.label or 'scenario'}) to {args.out}")
        return EXIT_OK
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


def cmd_verify(args) -> int:
    passed = run_verification(negative_control=args.negative_control)
    return EXIT_OK if passed else 1


def cmd_report(args) -> int:
    manifest_path = os.path.join(args.rundir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        result = manifest.get("result", {})
        print(f"run {manifest.get('digest', '?')} (ctrend {manifest.get('tool', {}).get('version', '?')})")
        print(f"  inputs:     {', '.join(manifest.get('inputs', []))}")
        ref = manifest.get("references", {})
        print(f"  references: trend {ref.get('trend_target')}, level {ref.get('level_target')}")
        print(f"  status:     {'converged' if result.get('converged') else result.get('reason')}"
              f" in {result.get('iterations')} iteration(s)")
        print(f"  R^2:        {result.get('r2')}")
        print(f"  weights:    trend {result.get('trend_weight')}, level {result.get('level_weight')}")
        rendered = render_bundle_svgs(args.rundir)
        print(f"  regenerated {len(rendered)} figure(s)")
        return EXIT_OK
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {
        "fit": cmd_fit,
        "simulate": cmd_simulate,
        "verify": cmd_verify,
        "report": cmd_report,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
