"""Command line entry point: ``ipfc-relay {run,pair,sweep,reproduce-paper}``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .grid import GridConfigError, SingularNetworkError, load_grid
from .output import emit_outputs, fmt
from .relay import classify_reach
from .scenario import (
    RunResult,
    Scenario,
    ScenarioError,
    SimulationError,
    load_scenario,
    run_pair,
    run_scenario,
    with_field,
)

log = logging.getLogger("ipfc_relay")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

# Expected verdicts for the single-exchange presets against the idle baseline.
EXPECTED_MATRIX = (
    ("off", "nominal"),
    ("preset_q_inject", "over_reach_tendency"),
    ("preset_q_absorb", "under_reach_tendency"),
    ("preset_p_inject", "over_reach_tendency"),
    ("preset_p_absorb", "under_reach_tendency"),
)


def _formats(args) -> set[str]:
    return {"csv", "summary", "svg"} if args.plot else {"csv", "summary"}


def _apply_overrides(s: Scenario, args) -> Scenario:
    if args.freeze_on_fault:
        s = replace(s, freeze_on_fault=True)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    return s


def _with_verdict(base: RunResult, variant: Scenario, model) -> RunResult:
    var = run_scenario(variant, model)
    v = classify_reach(
        base.trace, var.trace, var.settings,
        tolerance=variant.reach_tolerance, window=variant.settle_window,
    )
    return replace(var, verdict=v, baseline=base)


def cmd_run(args) -> int:
    s = _apply_overrides(load_scenario(args.config), args)
    r = run_scenario(s)
    manifest = emit_outputs(r, args.out, _formats(args))
    print(f"{s.name}: wrote {len(manifest) + 1} files to {args.out}")
    return EXIT_OK


def cmd_pair(args) -> int:
    base = _apply_overrides(load_scenario(args.baseline), args)
    var = _apply_overrides(load_scenario(args.variant), args)
    r = run_pair(base, var)
    out = Path(args.out)
    emit_outputs(r.baseline, out / "baseline", _formats(args))
    emit_outputs(r, out / "variant", _formats(args))
    v = r.verdict
    print(f"verdict: {v.classification} (relative |z| change {fmt(v.relative_change)})")
    return EXIT_OK


def parse_range(spec: str, seed: int = 0) -> list:
    """``a:b:k`` -> k evenly spaced values, ``rand:a:b:k`` -> k seeded uniform
    draws, otherwise a comma-separated list (kept as strings)."""
    parts = spec.split(":")
    try:
        if parts[0] == "rand" and len(parts) == 4:
            lo, hi, k = float(parts[1]), float(parts[2]), int(parts[3])
            return np.random.default_rng(seed).uniform(lo, hi, k).tolist()
        if len(parts) == 3:
            lo, hi, k = float(parts[0]), float(parts[1]), int(parts[2])
            return np.linspace(lo, hi, k).tolist()
    except ValueError:
        raise ScenarioError(f"bad range {spec!r}") from None
    if len(parts) != 1:
        raise ScenarioError(f"bad range {spec!r}")
    return [v.strip() for v in spec.split(",") if v.strip()]


def _sweep_job(job: tuple[int, Scenario, str, object, str, frozenset]) -> str:
    i, s, field_name, value, out, formats = job
    model = load_grid(s.grid_file)
    if s.ipfc_mode == "off":
        r = run_scenario(s, model)
        verdict = "baseline"
    else:
        base = run_scenario(replace(s, ipfc_mode="off", name=s.name + "_off"), model)
        r = _with_verdict(base, s, model)
        verdict = r.verdict.classification
    emit_outputs(r, Path(out) / f"run_{i:03d}", formats)
    w = r.trace.settled_window(s.settle_window)
    z = complex(np.median(w.real), np.median(w.imag))
    zone = bool(r.trace.in_zone1[-1])
    return f"{i},{field_name},{value},{fmt(z.real)},{fmt(z.imag)},{int(zone)},{verdict}"


def cmd_sweep(args) -> int:
    base = _apply_overrides(load_scenario(args.template), args)
    field_name, sep, spec = args.vary.partition("=")
    if not sep:
        raise ScenarioError("--vary expects <field>=<range>")
    values = parse_range(spec, base.seed)
    jobs = []
    for i, v in enumerate(values):
        val = fmt(v) if isinstance(v, float) else v
        s = replace(with_field(base, field_name, val), name=f"{base.name}_{i:03d}")
        if base.grid_file != "builtin:grid8":
            s = replace(s, grid_file=base.grid_file)
        jobs.append((i, s, field_name, val, args.out, frozenset(_formats(args))))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = "index,field,value,z_r_pu,z_x_pu,final_in_zone1,verdict\n"
    (out / "sweep_summary.csv").write_text(header + "\n".join(rows) + "\n", encoding="utf-8")
    print(f"sweep: {len(rows)} runs written to {out}")
    return EXIT_OK


def run_reference_suite(out: str | Path, formats=frozenset({"csv", "summary"}), base: Scenario | None = None):
    """Run the idle baseline and the four single-exchange presets; return matrix rows."""
    base = base if base is not None else Scenario(name="off")
    base = replace(base, ipfc_mode="off", name="off")
    model = load_grid(base.grid_file)
    out = Path(out)
    b = run_scenario(base, model)
    rows = []
    for mode, expected in EXPECTED_MATRIX:
        r = _with_verdict(b, replace(base, ipfc_mode=mode, name=mode), model)
        emit_outputs(r, out / mode, formats)
        v = r.verdict
        rows.append({
            "mode": mode, "expected": expected, "observed": v.classification,
            "delta_r_pu": v.delta_r, "delta_x_pu": v.delta_x,
            "relative_change": v.relative_change, "match": v.classification == expected,
        })
    lines = ["mode,expected,observed,delta_r_pu,delta_x_pu,relative_change,match"]
    for row in rows:
        lines.append(
            f"{row['mode']},{row['expected']},{row['observed']},{fmt(row['delta_r_pu'])},"
            f"{fmt(row['delta_x_pu'])},{fmt(row['relative_change'])},{'yes' if row['match'] else 'NO'}"
        )
    (out / "verdict_matrix.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def cmd_reproduce(args) -> int:
    base = _apply_overrides(Scenario(), args)
    rows = run_reference_suite(args.out, frozenset(_formats(args)), base)
    bad = 0
    for row in rows:
        flag = "ok" if row["match"] else "MISMATCH"
        bad += not row["match"]
        print(f"{row['mode']:<16} expected {row['expected']:<21} observed {row['observed']:<21} "
              f"dR={fmt(row['delta_r_pu'])} dX={fmt(row['delta_x_pu'])} {flag}")
    return EXIT_MISMATCH if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--plot", action="store_true", help="also write an SVG R-X plot")
    common.add_argument("--freeze-on-fault", action="store_true",
                        help="latch the converter commands at their prefault values")
    common.add_argument("--seed", type=int, default=None)

    p = argparse.ArgumentParser(prog="ipfc-relay", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("pair", parents=[common], help="run a baseline/variant pair and classify reach")
    pr.add_argument("baseline")
    pr.add_argument("variant")
    pr.set_defaults(func=cmd_pair)

    sw = sub.add_parser("sweep", parents=[common], help="vary one field over a range")
    sw.add_argument("template")
    sw.add_argument("--vary", required=True, metavar="FIELD=RANGE",
                    help="e.g. fault.n=0.1:0.9:9, fault.rf=rand:0:0.05:10, scenario.ipfc_mode=off,closed_loop")
    sw.add_argument("--workers", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("reproduce-paper", parents=[common],
                        help="idle baseline vs the four single-exchange presets")
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, GridConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, SingularNetworkError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
