"""Command line front end.

``lfdr analyze`` reads a file of statistics and writes ``cases.csv``,
``summary.json`` and ``plot.svg``. ``lfdr simulate`` runs one replication
study. ``lfdr project`` reports projected Efdr1 for larger sample sizes.

Exit codes: 0 success, 1 usage, 2 bad data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, accuracy, power
from .density import BasisSpec, fit_mixture_density
from .errors import InvalidConfigError, LfdrError
from .fdr import LEFT, RIGHT, fdr_report, tail_fdr_at, threshold_report
from .ingest import DEFAULT_BINS, ZSample, bin_z_values, read_statistics, t_to_z
from .nulls import (
    DEFAULT_CENTRAL_FRACTION,
    DEFAULT_X0,
    central_matching,
    mle_fit,
    theoretical_null,
)
from .simulate import run_study

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MAX_BAD_FRACTION = 0.01
NULL_CHOICES = {"theoretical": "theoretical", "cm": "central-matching", "mle": "mle"}
BASIS_CHOICES = {"nspline": "natural-spline", "poly": "polynomial"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class AnalysisConfig:
    input: str = ""
    column: str | None = None
    stat: str = "z"
    df: float | None = None
    bins: int = DEFAULT_BINS
    range: tuple | None = None
    basis: str = "nspline"
    basis_df: int = 7
    null: str = "cm"
    x0: float = DEFAULT_X0
    pct0: float = DEFAULT_CENTRAL_FRACTION
    threshold: float = 0.2
    project: list = field(default_factory=list)
    mode: str = "crude"
    out: str = "."


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like LO:HI, got {text!r}")
    if not lo < hi:
        raise argparse.ArgumentTypeError("range LO must be below HI")
    return (lo, hi)


def _parse_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("expansion factors must be >= 1")
    return vals


def _add_analysis_flags(p):
    p.add_argument("--input", required=True, help="one statistic per line, or a CSV with --column")
    p.add_argument("--column", help="CSV column holding the statistics")
    p.add_argument("--stat", choices=["z", "t"], default="z", help="statistic kind (default z)")
    p.add_argument("--df", type=float, help="degrees of freedom for --stat t")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS, help="number of bins (default 120)")
    p.add_argument("--range", type=_parse_range, help="first and last bin centers, LO:HI (default data range)")
    p.add_argument("--basis", choices=sorted(BASIS_CHOICES), default="nspline", help="density basis")
    p.add_argument("--basis-df", type=int, default=7, help="basis degrees of freedom (default 7)")
    p.add_argument("--null", choices=sorted(NULL_CHOICES), default="cm",
                   help="null used for fdr: theoretical, cm (central matching) or mle (default cm)")
    p.add_argument("--x0", type=float, default=DEFAULT_X0, help="MLE truncation half-width (default 2)")
    p.add_argument("--pct0", type=float, default=DEFAULT_CENTRAL_FRACTION,
                   help="count fraction cut from each side to define the central bins (default 0.25)")
    p.add_argument("--threshold", type=float, default=0.2, help="fdr threshold for flagging (default 0.2)")
    p.add_argument("--mode", choices=["crude", "adjusted"], default="crude", help="projection mode")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfdr", description="Local false discovery rate analysis.")
    parser.add_argument("--version", action="version", version=f"lfdr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="fdr analysis of a statistics file")
    _add_analysis_flags(a)
    a.add_argument("--project", type=_parse_list, default=[], help="expansion factors, e.g. 1.5,2,3")

    s = sub.add_parser("simulate", help="run a replication study")
    s.add_argument("--table", choices=["1", "3", "4"], required=True)
    s.add_argument("--reps", type=int, help="replications (default 100, or 250 for table 4)")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", help="directory for table<N>.csv (default: print only)")

    pj = sub.add_parser("project", help="projected Efdr1 for larger samples")
    _add_analysis_flags(pj)
    pj.add_argument("--c", dest="project", type=_parse_list, default=[1.0, 1.5, 2.0, 2.5, 3.0],
                    help="expansion factors (default 1,1.5,2,2.5,3)")
    return parser


def _config(args) -> AnalysisConfig:
    return AnalysisConfig(
        input=args.input, column=args.column, stat=args.stat, df=args.df, bins=args.bins,
        range=args.range, basis=args.basis, basis_df=args.basis_df, null=args.null, x0=args.x0,
        pct0=args.pct0, threshold=args.threshold, project=list(args.project), mode=args.mode,
        out=args.out,
    )


def load_z(cfg: AnalysisConfig):
    """Read, validate and transform the input. Returns (z, bad_rows, n_rows)."""
    if cfg.stat == "t" and cfg.df is None:
        raise UsageError("--stat t needs --df")
    if cfg.stat == "z" and cfg.df is not None:
        raise UsageError("--df only applies to --stat t")
    path = Path(cfg.input)
    if not path.is_file():
        raise UsageError(f"input file {cfg.input} not found")
    res = read_statistics(path, cfg.column)
    if res.n_rows == 0:
        raise UsageError(f"input file {cfg.input} is empty")
    if len(res.bad_rows) > MAX_BAD_FRACTION * res.n_rows:
        shown = ", ".join(f"line {n}: {t!r}" for n, t in res.bad_rows[:5])
        raise DataError(f"{len(res.bad_rows)} of {res.n_rows} rows unparseable ({shown})")
    z = t_to_z(res.values, cfg.df) if cfg.stat == "t" else res.values
    return np.asarray(z, dtype=float), res.bad_rows, res.n_rows


def _null_entry(fit, null):
    _, sd, notes = accuracy.cov_params(fit, null)
    return {
        "delta0": null.delta0, "sigma0": null.sigma0, "p0": null.p0,
        "sd_delta0": float(sd[1]), "sd_sigma0": float(sd[2]), "sd_p0": float(sd[0]),
        "warnings": list(null.warnings) + list(notes),
    }


def analyze_data(z, cfg: AnalysisConfig) -> dict:
    """All computations for one analysis; nothing is written here."""
    if not 0 < cfg.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    sample = ZSample(z)
    counts = bin_z_values(sample, cfg.bins, cfg.range)
    spec = BasisSpec(BASIS_CHOICES[cfg.basis], cfg.basis_df)
    fit = fit_mixture_density(counts, spec)
    builders = {
        "theoretical": lambda: theoretical_null(fit, cfg.pct0),
        "central-matching": lambda: central_matching(fit, cfg.pct0),
        "mle": lambda: mle_fit(sample, cfg.x0),
    }
    chosen = NULL_CHOICES[cfg.null]
    nulls, entries = {}, {}
    for name, build in builders.items():
        try:
            nulls[name] = build()
            entries[name] = _null_entry(fit, nulls[name])
        except LfdrError as exc:
            if name == chosen:
                raise
            entries[name] = {"error": f"{exc.module}: {exc}"}
    null = nulls[chosen]
    rep = fdr_report(fit, null, sample.values, cfg.threshold)
    acc = accuracy.accuracy_report(fit, null)
    pw = power.power_report(fit, null, factors=cfg.project, mode=cfg.mode)
    summ = threshold_report(rep, cfg.threshold)
    return {"sample": sample, "counts": counts, "fit": fit, "null": null, "nulls": entries,
            "fdr": rep, "accuracy": acc, "power": pw, "threshold": summ}


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    return f"{v:.6g}"


def cases_csv(res) -> str:
    z = res["sample"].values
    fit, null, rep = res["fit"], res["null"], res["fdr"]
    left = np.atleast_1d(tail_fdr_at(fit, null, z, LEFT))
    right = np.atleast_1d(tail_fdr_at(fit, null, z, RIGHT))
    sd = np.interp(z, fit.centers, res["accuracy"].sd_lfdr)
    flagged = rep.per_case_fdr <= res["threshold"].threshold
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "z", "fdr", "Fdr_left", "Fdr_right", "sd_log_fdr", "flagged"])
    for i in range(z.size):
        w.writerow([i + 1, _fmt(z[i]), _fmt(rep.per_case_fdr[i]), _fmt(left[i]), _fmt(right[i]),
                    _fmt(sd[i]), int(flagged[i])])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def summary_json(res, cfg: AnalysisConfig, bad_rows, n_rows) -> str:
    fit, null, pw, th = res["fit"], res["null"], res["power"], res["threshold"]
    warn = list(fit.warnings) + list(res["accuracy"].warnings) + list(pw.warnings)
    for entry in res["nulls"].values():
        warn += entry.get("warnings", [])
    out = {
        "version": __version__,
        "config": asdict(cfg),
        "input": {"rows": n_rows, "cases": res["sample"].n, "bad_rows": [list(b) for b in bad_rows],
                  "excluded_outside_range": res["counts"].n_excluded},
        "grid": {"first_center": float(fit.centers[0]), "last_center": float(fit.centers[-1]),
                 "bins": res["counts"].k, "width": fit.width},
        "density": {"deviance": fit.deviance, "iterations": fit.n_iter},
        "null_used": null.method,
        "nulls": res["nulls"],
        "efdr1": pw.efdr1,
        "p1": pw.p1_hat,
        "g1": {"t": pw.g1_curve[:, 0], "G1": pw.g1_curve[:, 1]},
        "projections": {"mode": cfg.mode, "efdr1": {f"{c:g}": v for c, v in pw.projections.items()}},
        "threshold": {
            "value": th.threshold,
            "flagged": th.n_flagged,
            "flagged_left": int(th.flagged_left.size),
            "flagged_right": int(th.flagged_right.size),
            "bayes_factor_bound": th.bayes_factor_bound,
            "lehmann_alpha_left": res["fdr"].lehmann_alpha_left,
            "lehmann_alpha_right": res["fdr"].lehmann_alpha_right,
        },
        "warnings": list(dict.fromkeys(warn)),
    }
    return json.dumps(_jsonable(out), indent=2) + "\n"


def _nice_divisor(ratio):
    if ratio <= 1:
        return 1
    for d in (2, 5, 10, 20, 50, 100, 200, 500, 1000):
        if ratio <= d:
            return d
    return 10 ** math.ceil(math.log10(ratio))


def plot_svg(res, nonnull_scale=None) -> str:
    """Histogram with the fitted and null densities, the fdr curve, and
    nonnull counts drawn below the axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fit, null, pw, rep = res["fit"], res["null"], res["power"], res["fdr"]
    x, y, w = fit.centers, fit.counts.counts, fit.width
    y1 = pw.nonnull_counts
    div = nonnull_scale or _nice_divisor(3 * y1.max() / max(y.max(), 1))
    with plt.rc_context({"svg.hashsalt": "lfdr", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.bar(x, y, width=w, color="0.8", edgecolor="0.6", linewidth=0.3, label="counts")
        ax.bar(x, -y1 / div, width=w, color="tab:red", label=f"nonnull counts / {div}" if div > 1 else "nonnull counts")
        ax.plot(x, fit.expected_counts, color="k", lw=1.2, label="fitted")
        null_counts = np.exp(null.log_subdensity(x)) * fit.n * w
        ax.plot(x, null_counts, color="tab:blue", ls="--", lw=1.2,
                label=f"null N({null.delta0:.2f}, {null.sigma0:.2f}^2), p0={null.capped_p0:.2f}")
        ax.axhline(0, color="k", lw=0.5)
        ax.set_xlabel("z")
        ax.set_ylabel("count")
        ax2 = ax.twinx()
        ax2.plot(x, rep.per_bin_fdr, color="tab:green", lw=1.2, label="fdr")
        ax2.set_ylim(-0.05, 1.05)
        ax2.set_ylabel("fdr")
        h1, l1 = ax.get_legend_handles_labels()
        h2, l2 = ax2.get_legend_handles_labels()
        ax.legend(h1 + h2, l1 + l2, loc="upper right", fontsize=8)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def _write_all(out_dir: Path, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)


def cmd_analyze(args) -> int:
    cfg = _config(args)
    z, bad, n_rows = load_z(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = analyze_data(z, cfg)
    for wmsg in caught:
        logger.warning("%s", wmsg.message)
    files = {
        "cases.csv": cases_csv(res),
        "summary.json": summary_json(res, cfg, bad, n_rows),
        "plot.svg": plot_svg(res),
    }
    _write_all(Path(cfg.out), files)
    th = res["threshold"]
    print(f"{res['sample'].n} cases, null {res['null'].method}: "
          f"delta0={res['null'].delta0:.4f} sigma0={res['null'].sigma0:.4f} p0={res['null'].p0:.4f}")
    print(f"fdr <= {th.threshold:g}: {th.n_flagged} flagged "
          f"({th.flagged_left.size} left, {th.flagged_right.size} right); Efdr1={res['power'].efdr1:.4f}")
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = _config(args)
    z, bad, n_rows = load_z(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = analyze_data(z, cfg)
    pw = res["power"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["c", "efdr1"])
    for c, v in pw.projections.items():
        w.writerow([f"{c:g}", _fmt(v)])
    text = buf.getvalue()
    _write_all(Path(cfg.out), {"projection.csv": text})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.reps is not None and args.reps < 2:
        raise UsageError("--reps must be at least 2")
    result = run_study(args.table, args.reps, args.seed)
    text = result.to_csv()
    if args.out:
        _write_all(Path(args.out), {f"table{args.table}.csv": text})
    sys.stdout.write(text)
    for k, v in result.extra.items():
        print(f"# {k} = {v:.6g}")
    if result.n_dropped:
        print(f"# {result.n_dropped} replications dropped", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


_NUMERIC = (ArithmeticError, RuntimeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"analyze": cmd_analyze, "simulate": cmd_simulate, "project": cmd_project}[args.command]
    try:
        return handler(args)
    except (UsageError, InvalidConfigError) as exc:
        print(f"lfdr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"lfdr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LfdrError as exc:
        code = EXIT_NUMERIC if isinstance(exc, _NUMERIC) else EXIT_DATA
        kind = "numerical failure" if code == EXIT_NUMERIC else "data error"
        print(f"lfdr: {kind} in {exc.module}: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"lfdr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
