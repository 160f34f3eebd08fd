"""Command line: ``nsverify shrink | integrate | report``.

Exit codes are 0 on success, 1 for bad arguments or configuration and 2
when a constrained sampler stalls.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import SamplerStalled
from .integrator import NSConfig, NSResult, ns_run
from .problems import get_problem
from .samplers import DRAW_VARIANTS, NEAR_POINT, REGION, SamplerSpec
from .shrinkage import ShrinkageReport, run_shrinkage_test, shrinkage_ks, shrinkage_series

log = logging.getLogger("nsverify")

EXIT_OK, EXIT_USAGE, EXIT_STALLED = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class BenchmarkSummary:
    """Repeated evidence runs reduced to the mean estimate and two error
    measures: the actual scatter A and the mean reported error C."""

    problem: str
    sampler: str
    n_live: int
    n_repeats: int
    mean_log_z: float
    actual_scatter: float
    mean_reported_err: float
    mean_evaluations: float
    true_log_z: Optional[float] = None
    scatter_about_truth: bool = True
    mean_iterations: float = 0.0
    seeds: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[dict], true_log_z: Optional[float] = None) -> "BenchmarkSummary":
        if not records:
            raise ValueError("need at least one run")
        z = np.array([r["log_z"] for r in records], float)
        if true_log_z is not None:
            scatter = float(np.sqrt(np.mean((z - true_log_z) ** 2)))
        else:
            scatter = float(np.std(z, ddof=1)) if len(z) > 1 else 0.0
        first = records[0]
        return cls(
            problem=first["problem"],
            sampler=first["sampler"],
            n_live=int(first["n_live"]),
            n_repeats=len(records),
            mean_log_z=float(z.mean()),
            actual_scatter=scatter,
            mean_reported_err=float(np.mean([r["log_z_err"] for r in records])),
            mean_evaluations=float(np.mean([r["n_evaluations"] for r in records])),
            true_log_z=true_log_z,
            scatter_about_truth=true_log_z is not None,
            mean_iterations=float(np.mean([r["n_iterations"] for r in records])),
            seeds=[r.get("seed") for r in records],
        )

    @classmethod
    def from_results(cls, results: Sequence[NSResult], true_log_z: Optional[float] = None):
        return cls.from_records([r.to_record() for r in results], true_log_z)

    def to_record(self) -> dict:
        rec = {"kind": "integrate-summary"}
        rec.update(asdict(self))
        if not self.scatter_about_truth:
            rec["warning"] = "true log Z unknown; A is the sample standard deviation"
        return rec


# ---------------------------------------------------------------- config


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def _truthy(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> dict:
    """Install file values as parser defaults so explicit flags win.
    Returns the ``problem.*`` overrides."""
    actions = {a.dest: a for a in sub._actions}
    defaults, problem = {}, {}
    for key, value in values.items():
        if key.startswith("problem."):
            problem[key[len("problem."):]] = value
            continue
        dest = key.lstrip("-").replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(act, argparse._StoreTrueAction):
            defaults[dest] = _truthy(value)
        else:
            # argparse runs string defaults through the option's type
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return problem


# ---------------------------------------------------------------- parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base seed; repeats use seed+i")
    common.add_argument("--out", default="./runs", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel repeats")
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    sampler_opts = _Parser(add_help=False)
    sampler_opts.add_argument("--sampler", required=False, default=None,
                              help="rejection, radfriends, supfriends, mcmc-adapt-<steps>, "
                                   "mcmc-fixed-<sigma>-<steps>")
    sampler_opts.add_argument("--live", type=int, default=400, help="number of live points")
    sampler_opts.add_argument("--update-interval", type=int, default=1,
                              help="recompute the region radius every this many iterations")
    sampler_opts.add_argument("--draw-variant", choices=DRAW_VARIANTS, default=NEAR_POINT,
                              help="region draw method")

    parser = _Parser(prog="nsverify", description="Nested sampling verification toolkit.")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    sh = subs.add_parser("shrink", parents=[common, sampler_opts],
                         help="Shrinkage Test on the hyper-pyramid")
    sh.add_argument("--dim", type=int, default=2)
    sh.add_argument("--iters", type=int, default=10_000)
    sh.add_argument("--repeats", type=int, default=1, help="pooled runs with seeds seed+i")

    it = subs.add_parser("integrate", parents=[common, sampler_opts],
                         help="repeated evidence runs on a benchmark problem")
    it.add_argument("--problem", default=None, help="pyramid-<d>, eggbox or loggamma-<d>")
    it.add_argument("--repeats", type=int, default=10)
    it.add_argument("--tol", type=float, default=1e-3, help="evidence tolerance")
    it.add_argument("--iters", type=int, default=None, help="fixed iteration count instead of --tol")

    rp = subs.add_parser("report", parents=[common], help="tabulate a directory of run JSONs")
    rp.add_argument("directory", nargs="?", default=None)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing command (shrink, integrate or report)")
    overrides = {}
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        overrides = _apply_config(sub, read_config(args.config))
        args = parser.parse_args(argv)
    args.problem_overrides = overrides
    return args


# ---------------------------------------------------------------- helpers


def _spec(args) -> SamplerSpec:
    if not args.sampler:
        raise UsageError("--sampler is required")
    try:
        spec = SamplerSpec.parse(args.sampler)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if spec.kind == REGION:
        spec = SamplerSpec.parse(args.sampler, update_interval=args.update_interval,
                                 draw_variant=args.draw_variant)
    return spec


def _problem(name: str, overrides: dict):
    try:
        return get_problem(name, **overrides)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from None


def _write_json(path: Path, record: dict) -> None:
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in text)


def _plot(fn, *a):
    try:
        fn(*a)
    except ImportError:
        log.warning("matplotlib not available; figures skipped")


# ---------------------------------------------------------------- commands


def _write_shrink(report: ShrinkageReport, out: Path, plots: bool, extra: dict | None = None) -> Path:
    stem = out / _slug(f"shrink-{report.sampler}-d{report.dim}-n{report.n_live}-seed{report.seed}")
    rec = report.to_record()
    rec.update(extra or {})
    _write_json(stem.with_suffix(".json"), rec)
    report.samples.write_csv(f"{stem}-samples.csv")
    report.write_histogram_csv(f"{stem}-hist.csv")
    report.write_cdf_csv(f"{stem}-cdf.csv")
    if plots:
        from .plotting import shrinkage_figure

        _plot(shrinkage_figure, report, f"{stem}.png")
    return stem


def cmd_shrink(args) -> int:
    spec = _spec(args)
    if args.iters < 1:
        raise UsageError("iterations must be positive")
    if args.dim < 1:
        raise UsageError("dimension must be positive")
    if args.live < 2:
        raise UsageError("need at least 2 live points")
    if args.repeats < 1:
        raise UsageError("repeats must be positive")
    problem = _problem(f"pyramid-{args.dim}", args.problem_overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_shrinkage_test(spec, args.dim, args.live, args.iters, args.seed,
                                    args.repeats, args.jobs, args.problem_overrides)
    except SamplerStalled as exc:
        part = exc.partial
        msg = f"{spec}: {exc}"
        if isinstance(part, NSResult) and part.n_iterations >= 2:
            msg += f" at iteration {part.n_iterations} after {part.n_evaluations} evaluations"
            try:
                series = shrinkage_series(part, problem)
            except ValueError as err:
                log.warning("partial run not written: %s", err)
            else:
                partial = ShrinkageReport(str(spec), args.dim, args.live, series,
                                          shrinkage_ks(series, args.dim, args.live),
                                          part.n_iterations, part.n_evaluations, part.seed,
                                          update_interval=spec.update_interval)
                _write_shrink(partial, out, False, {"stalled": True})
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_STALLED
    _write_shrink(report, out, not args.no_plots)
    pooled = f" (pooled over {args.repeats} runs)" if report.pooled else ""
    print(f"{report.sampler} d={report.dim} ks_p={report.ks.p_value:.4g} "
          f"efficiency={report.efficiency:.2%}{pooled}")
    return EXIT_OK


def _integrate_one(problem_name, overrides, spec, cfg) -> NSResult:
    problem = get_problem(problem_name, **overrides)
    return ns_run(problem, spec, cfg)


def cmd_integrate(args) -> int:
    spec = _spec(args)
    if not args.problem:
        raise UsageError("--problem is required")
    problem = _problem(args.problem, args.problem_overrides)
    if args.repeats < 1:
        raise UsageError("repeats must be positive")
    if args.live < 2:
        raise UsageError("need at least 2 live points")
    try:
        if args.iters is not None:
            base = NSConfig.fixed(args.iters, n_live=args.live)
            stop = {"stop": "iterations", "iterations": args.iters}
        else:
            base = NSConfig.tolerance(args.tol, n_live=args.live)
            stop = {"stop": "tolerance", "tolerance": args.tol}
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed + i for i in range(args.repeats)]
    cfgs = [NSConfig(**{**asdict(base), "seed": s}) for s in seeds]
    stem = _slug(f"integrate-{problem.name}-{spec}-n{args.live}")

    results, stalled = [], None
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_integrate_one, args.problem, args.problem_overrides, spec, c) for c in cfgs]
            for f in futs:
                try:
                    results.append(f.result())
                except SamplerStalled as exc:
                    stalled = stalled or exc
    else:
        for c in cfgs:
            try:
                results.append(ns_run(problem, spec, c))
            except SamplerStalled as exc:
                stalled = exc
                break

    for r in results:
        r.meta.update(stop)
        if spec.kind == REGION:
            r.meta["draw_variant"] = spec.draw_variant
        _write_json(out / f"{stem}-seed{r.seed}.json", r.to_record())
        r.write_iterations_csv(out / f"{stem}-seed{r.seed}-iterations.csv")
    if stalled is not None:
        print(f"error: {spec} on {problem.name}: {stalled}", file=sys.stderr)
        return EXIT_STALLED

    summary = BenchmarkSummary.from_results(results, problem.true_log_z)
    sum_stem = out / f"{stem}-seed{args.seed}x{args.repeats}-summary"
    _write_json(sum_stem.with_suffix(".json"), summary.to_record())
    with open(f"{sum_stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "log_z", "log_z_err", "n_iterations", "n_evaluations"])
        for r in results:
            w.writerow([r.seed, repr(r.log_z), repr(r.log_z_err), r.n_iterations, r.n_evaluations])
    if not args.no_plots:
        from .plotting import benchmark_figure

        _plot(benchmark_figure, summary, [r.log_z for r in results], [r.log_z_err for r in results],
              [r.n_evaluations for r in results], f"{sum_stem}.png")

    line = (f"{problem.name} {spec} N={args.live} x{len(results)}: "
            f"log Z = {summary.mean_log_z:.4f} +- {summary.mean_reported_err:.4f} (C)")
    if summary.scatter_about_truth:
        line += f", A = {summary.actual_scatter:.4f} (true {problem.true_log_z:g})"
    else:
        line += f", sample sd = {summary.actual_scatter:.4f} (true value unknown)"
    line += f", evaluations {summary.mean_evaluations:.0f}"
    print(line)
    return EXIT_OK


REPORT_COLUMNS = ["section", "problem", "sampler", "n_live", "p_or_log_z", "A", "C",
                  "iterations", "evaluations", "efficiency"]


def _load_records(directory: Path) -> list:
    records = []
    for path in sorted(directory.glob("*.json")):
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        if not isinstance(rec, dict) or rec.get("kind") not in ("shrink", "integrate", "integrate-summary"):
            log.warning("skipping %s: not a run report", path.name)
            continue
        records.append(rec)
    return records


def _true_log_z(name: str):
    try:
        return get_problem(name).true_log_z
    except (KeyError, ValueError):
        return None


def report_rows(records: list) -> list:
    """One row per shrink report and per (problem, sampler, n_live) group
    of evidence runs."""
    rows = []
    for r in records:
        if r["kind"] != "shrink":
            continue
        try:
            rows.append({
                "section": "shrink", "problem": f"pyramid-{r['dim']}", "sampler": r["sampler"],
                "n_live": r["n_live"], "p_or_log_z": r["ks_p"], "A": "", "C": "",
                "iterations": r["n_iterations"], "evaluations": r["n_evaluations"],
                "efficiency": r["n_iterations"] / r["n_evaluations"],
            })
        except (KeyError, TypeError, ZeroDivisionError) as exc:
            log.warning("skipping malformed shrink report: %s", exc)
    groups = {}
    for r in records:
        if r["kind"] == "integrate":
            try:
                groups.setdefault((r["problem"], r["sampler"], int(r["n_live"])), []).append(r)
            except (KeyError, TypeError, ValueError) as exc:
                log.warning("skipping malformed integrate report: %s", exc)
    for key in sorted(groups):
        runs = sorted(groups[key], key=lambda r: r.get("seed", 0))
        try:
            s = BenchmarkSummary.from_records(runs, _true_log_z(key[0]))
        except (KeyError, TypeError) as exc:
            log.warning("skipping group %s: %s", key, exc)
            continue
        rows.append({
            "section": "integrate", "problem": s.problem, "sampler": s.sampler,
            "n_live": s.n_live, "p_or_log_z": s.mean_log_z, "A": s.actual_scatter,
            "C": s.mean_reported_err, "iterations": s.mean_iterations,
            "evaluations": s.mean_evaluations,
            "efficiency": s.mean_iterations / s.mean_evaluations if s.mean_evaluations else 0.0,
        })
    return rows


def format_report(rows: list) -> str:
    lines = []
    shrink = [r for r in rows if r["section"] == "shrink"]
    integ = [r for r in rows if r["section"] == "integrate"]
    if shrink:
        lines.append("Shrinkage Test")
        lines.append(f"{'sampler':<24} {'dim':>4} {'N':>5} {'p':>8} {'iterations':>11} "
                     f"{'evaluations':>12} {'efficiency':>10}")
        for r in shrink:
            p = r["p_or_log_z"]
            flag = "*" if p < 0.05 else " "
            lines.append(f"{r['sampler']:<24} {r['problem'].split('-')[-1]:>4} {r['n_live']:>5} "
                         f"{flag}{p:.4f} {r['iterations']:>11} {r['evaluations']:>12} "
                         f"{r['efficiency']:>10.2%}")
    if integ:
        if lines:
            lines.append("")
        lines.append("Evidence")
        lines.append(f"{'problem':<14} {'sampler':<20} {'N':>5} {'log Z':>10} {'A':>8} {'C':>8} "
                     f"{'iterations':>11} {'evaluations':>12} {'efficiency':>10}")
        for r in integ:
            lines.append(f"{r['problem']:<14} {r['sampler']:<20} {r['n_live']:>5} "
                         f"{r['p_or_log_z']:>10.4f} {r['A']:>8.4f} {r['C']:>8.4f} "
                         f"{r['iterations']:>11.0f} {r['evaluations']:>12.0f} {r['efficiency']:>10.2%}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    directory = Path(args.directory or args.out)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    records = _load_records(directory)
    if not records:
        print(f"error: no run reports in {directory}", file=sys.stderr)
        return EXIT_USAGE
    rows = report_rows(records)
    text = format_report(rows)
    (directory / "report.txt").write_text(text, encoding="utf-8")
    with open(directory / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"shrink": cmd_shrink, "integrate": cmd_integrate, "report": cmd_report}


def _setup_logging():
    name = os.environ.get("NV_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("matplotlib").setLevel(max(level, logging.WARNING))
    if name not in LOG_LEVELS:
        log.warning("NV_LOG=%s not understood; using info", name)


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = parse_args(list(sys.argv[1:] if argv is None else argv))
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
