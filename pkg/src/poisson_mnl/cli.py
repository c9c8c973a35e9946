"""Command-line front end: run, validate, list, plotdata.

Configuration precedence is CLI flags > PMNL_* environment variables > run
spec file > scenario defaults; the run manifest records the fully resolved
configuration together with the RNG identity, so a manifest alone reproduces
a run bit-exactly (CSV outputs are byte-stable across reruns).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .baselines import POLICY_NAMES
from .errors import PoissonMnlError
from .scenarios import SHIPPED, load_scenario, validate_scenario
from .simulate import RNG_IDENTITY, make_policy_config, monte_carlo

ENV_PREFIX = "PMNL_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _env_default(name: str, cast, fallback=None):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return fallback
    return cast(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisson-mnl",
        description="Simulate arrival-aware assortment-pricing policies and "
                    "compare their regret.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run scenario replications and write traces")
    run.add_argument("--scenario", help="shipped name or scenario file path")
    run.add_argument("--policies", help="comma-separated policy names")
    run.add_argument("--reps", type=int, help="Monte-Carlo replications")
    run.add_argument("--seed", type=int, help="base seed for the stream tree")
    run.add_argument("--horizon", type=int, help="override the scenario horizon T")
    run.add_argument("--out", help="output directory")
    run.add_argument("--grid", type=int, help="price grid resolution override")
    run.add_argument("--bonus-scale", type=float,
                     help="confidence-bonus multiplier (1.0 = faithful)")
    run.add_argument("--normalize-features", action="store_true", default=None,
                     help="rescale feature draws to unit norm")
    run.add_argument("--spec", help="run-spec JSON file with the same keys")
    run.add_argument("--figures", dest="figures", action="store_true",
                     default=None, help="render report figures (default)")
    run.add_argument("--no-figures", dest="figures", action="store_false",
                     help="skip figure rendering")

    val = sub.add_parser("validate", help="check a scenario against the assumptions")
    val.add_argument("scenario", help="shipped name or scenario file path")

    sub.add_parser("list", help="print shipped scenarios and policies")

    plot = sub.add_parser("plotdata", help="reshape run aggregates to long CSV")
    plot.add_argument("trace_dir", help="output directory of a previous run")
    plot.add_argument("--out", help="write CSV here instead of stdout")
    return parser


def _resolve_runspec(args) -> dict:
    spec_file = {}
    spec_path = args.spec or _env_default("spec", str)
    if spec_path:
        with open(spec_path, encoding="utf-8") as fh:
            spec_file = json.load(fh)

    def pick(name, cast, fallback):
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            return cli_val
        env_val = _env_default(name, cast)
        if env_val is not None:
            return env_val
        if name in spec_file and spec_file[name] is not None:
            return cast(spec_file[name])
        return fallback

    return {
        "scenario": pick("scenario", str, "sim1"),
        "policies": pick("policies", str, "pmnl,fixed_ucb"),
        "reps": pick("reps", int, None),
        "seed": pick("seed", int, 0),
        "horizon": pick("horizon", int, None),
        "out": pick("out", str, "runs/out"),
        "grid": pick("grid", int, None),
        "bonus_scale": pick("bonus_scale", float, None),
        "normalize_features": pick("normalize_features",
                                   lambda s: s.lower() in ("1", "true"), None),
        "figures": pick("figures", lambda s: s.lower() in ("1", "true"), True),
    }


def cmd_run(args) -> int:
    spec = _resolve_runspec(args)
    try:
        scenario = load_scenario(spec["scenario"])
        findings = validate_scenario(scenario)
        for level, assumption, msg in findings:
            print(f"{level}: {assumption}: {msg}", file=sys.stderr)
        errors = [f for f in findings if f[0] == "error"]
        if errors:
            return EXIT_CONFIG
        config = make_policy_config(
            scenario, T=spec["horizon"], bonus_scale=spec["bonus_scale"],
            grid_points=spec["grid"],
            normalize_features=spec["normalize_features"])
    except PoissonMnlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    policies = [p.strip() for p in spec["policies"].split(",") if p.strip()]
    unknown = [p for p in policies if p not in POLICY_NAMES]
    if unknown:
        print(f"error: unknown policies {unknown}; known: {POLICY_NAMES}",
              file=sys.stderr)
        return EXIT_CONFIG

    out = Path(spec["out"])
    try:
        results = monte_carlo(policies, scenario, n_reps=spec["reps"],
                              base_seed=spec["seed"], config=config)
    except PoissonMnlError as exc:
        diag = out / "failure.json"
        out.mkdir(parents=True, exist_ok=True)
        diag.write_text(json.dumps({"error": str(exc)}, indent=2) + "\n",
                        encoding="utf-8")
        print(f"runtime policy failure: {exc} (diagnostics: {diag})",
              file=sys.stderr)
        return EXIT_RUNTIME

    out.mkdir(parents=True, exist_ok=True)
    for name, res in results.items():
        pdir = out / name
        pdir.mkdir(parents=True, exist_ok=True)
        for rep, trace in enumerate(res.traces):
            (pdir / f"trace_rep{rep:04d}.csv").write_text(trace.to_csv(),
                                                          encoding="utf-8")
            meta = dict(trace.metadata)
            (pdir / f"trace_rep{rep:04d}.meta.json").write_text(
                json.dumps(meta, sort_keys=True, indent=2) + "\n",
                encoding="utf-8")
            with (pdir / f"diagnostics_rep{rep:04d}.jsonl").open(
                    "w", encoding="utf-8", newline="\n") as fh:
                for rec in trace.diagnostics:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (pdir / "aggregate.csv").write_text(res.aggregate_csv(),
                                            encoding="utf-8")

    manifest = {
        "version": __version__,
        "rng": RNG_IDENTITY,
        "scenario": json.loads(scenario.to_json()),
        "resolved": {
            "policies": policies,
            "reps": spec["reps"] or scenario.n_reps,
            "seed": spec["seed"],
            "horizon": config.T,
            "grid": config.search.grid_points,
            "bonus_scale": config.bonus_scale,
            "normalize_features": spec["normalize_features"],
            "figures": bool(spec["figures"]),
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    if spec["figures"]:
        from .report import render_price_figure, render_regret_figure

        figdir = out / "figures"
        figdir.mkdir(parents=True, exist_ok=True)
        render_regret_figure(results, figdir / "regret.png")
        render_price_figure(results, figdir / "prices.png")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (PoissonMnlError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    findings = validate_scenario(scenario)
    for level, assumption, msg in findings:
        print(f"{level}: {assumption}: {msg}")
    if any(level == "error" for level, _, _ in findings):
        return EXIT_CONFIG
    print(f"scenario {scenario.name!r} is valid "
          f"({sum(1 for f in findings if f[0] == 'warning')} warning(s))")
    return EXIT_OK


def cmd_list(_args) -> int:
    print("scenarios:")
    for name in SHIPPED:
        print(f"  {name}")
    print("policies:")
    for name in POLICY_NAMES:
        print(f"  {name}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    root = Path(args.trace_dir)
    if not root.is_dir():
        print(f"error: {root} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for pdir in sorted(p for p in root.iterdir() if p.is_dir()
                       and (p / "aggregate.csv").exists()):
        with (pdir / "aggregate.csv").open(encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                for stat in ("mean", "p10", "p90"):
                    rows.append((pdir.name, rec["period"], stat, rec[stat]))
    if not rows:
        print("error: no aggregate.csv files found", file=sys.stderr)
        return EXIT_CONFIG
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "period", "statistic", "value"])
    writer.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "validate": cmd_validate,
               "list": cmd_list, "plotdata": cmd_plotdata}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
