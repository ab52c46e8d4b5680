"""Command line interface: ``elsroc {fit,select,sroc,simulate}``.

Exit status: 0 success, 2 input error, 3 fit failure, 4 no selectable
model, 5 degenerate summary curve.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .criteria import CriterionKind, NoSelectableModel, fit_grid, rank_scores, score_fits
from .model_fit import FitError, ModelSpec, default_grid, fit
from .simulation import RANDOM, SCENARIOS, run_experiment
from .sroc import DEFAULT_GRID_SIZE, DegenerateCurveError, RegionKind, region, summary_curve, summary_point
from .study_data import DataFormatError, Dataset, read_dataset
from .transforms import ALPHA_GRID, TransformPair

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_NOSELECT, EXIT_DEGENERATE = 0, 2, 3, 4, 5
CRITERIA = [k.value for k in CriterionKind]


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _num(v):
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _json_safe(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class Writer:
    """Metadata + one or more tables, as ``#``-headed CSV or JSON lines."""

    def __init__(self, fmt):
        self.fmt = fmt
        self.meta = {}
        self.rows = []  # (columns, values)

    def add_meta(self, key, value):
        self.meta[key] = value

    def add_row(self, columns, values):
        self.rows.append((tuple(columns), tuple(values)))

    def render(self) -> str:
        out = []
        if self.fmt == "csv":
            for k, v in self.meta.items():
                out.append(f"# {k}={_num(v) if not isinstance(v, (list, dict, str)) else json.dumps(v)}")
            last = None
            for cols, vals in self.rows:
                if cols != last:
                    out.append(",".join(cols))
                    last = cols
                out.append(",".join(_num(v) for v in vals))
        else:
            out.append(json.dumps({"meta": {k: _json_safe(v) for k, v in self.meta.items()}}, sort_keys=True))
            for cols, vals in self.rows:
                out.append(json.dumps({c: _json_safe(v) for c, v in zip(cols, vals)}))
        return "\n".join(out) + "\n"


def _emit(args, writer):
    text = writer.render()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load(args) -> Dataset:
    if not args.input:
        raise CliError("--input is required")
    try:
        return Dataset.from_tables(read_dataset(args.input), args.correction)
    except DataFormatError as exc:
        raise CliError(f"input error: {exc}") from None
    except (OSError, ValueError) as exc:
        raise CliError(f"input error: {exc}") from None


def _grid(args):
    if not args.alphas:
        return default_grid()
    try:
        alphas = sorted({float(a) for a in args.alphas.split(",")})
        return default_grid(alphas)
    except ValueError as exc:
        raise CliError(f"bad --alphas: {exc}") from None


def _spec_from_flags(args):
    if args.family is None or args.alpha_p is None or args.alpha_q is None:
        return None
    try:
        return ModelSpec(args.family, TransformPair(args.alpha_p, args.alpha_q))
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _fit_meta(w, f):
    th = f.theta
    w.add_meta("spec", str(f.spec))
    w.add_meta("family", f.spec.family)
    w.add_meta("alpha_p", f.spec.pair.alpha_p)
    w.add_meta("alpha_q", f.spec.pair.alpha_q)
    w.add_meta("method", f.method)
    for name in ("mu_p", "mu_q", "sigma2_p", "sigma2_q", "sigma"):
        w.add_meta(name, getattr(th, name))
    w.add_meta("loglik_transformed", f.loglik_transformed)
    w.add_meta("loglik_y", f.loglik_y)
    w.add_meta("restricted_loglik", f.restricted_loglik)
    w.add_meta("converged", f.converged)
    w.add_meta("iterations", f.iterations)


def cmd_fit(args):
    data = _load(args)
    spec = _spec_from_flags(args)
    if spec is None:
        raise CliError("fit needs --family, --alpha-p and --alpha-q")
    try:
        f = fit(data, spec, args.method)
    except FitError as exc:
        raise CliError(f"fit failed: {exc}", EXIT_FIT) from None
    w = Writer(args.format)
    w.add_meta("command", "fit")
    w.add_meta("version", __version__)
    _fit_meta(w, f)
    cols = ("label", "sens", "fpr", "z_p", "z_q", "blup_p", "blup_q")
    for i, lab in enumerate(data.labels):
        w.add_row(cols, (lab, f.y[i, 0], f.y[i, 1], f.z[i, 0], f.z[i, 1], f.blups[i, 0], f.blups[i, 1]))
    _emit(args, w)
    return EXIT_OK if f.converged else EXIT_FIT


def _ranked(data, grid, kind, method):
    fits = fit_grid(data, grid, method)
    ranked = rank_scores(score_fits(fits, grid, [kind], data)[kind])
    return fits, ranked


def cmd_select(args):
    data = _load(args)
    grid = _grid(args)
    kind = CriterionKind.parse(args.criterion)
    _, ranked = _ranked(data, grid, kind, args.method)
    w = Writer(args.format)
    w.add_meta("command", "select")
    w.add_meta("version", __version__)
    w.add_meta("criterion", kind.label)
    w.add_meta("method", args.method)
    w.add_meta("n_studies", data.N)
    cols = ("rank", "family", "alpha_p", "alpha_q", "value", "feasible")
    for r, s in enumerate(ranked, start=1):
        w.add_row(cols, (r, s.spec.family, s.spec.pair.alpha_p, s.spec.pair.alpha_q, s.value, s.feasible))
    _emit(args, w)
    if not math.isfinite(ranked[0].value):
        print(f"no selectable model under {kind.label}", file=sys.stderr)
        return EXIT_NOSELECT
    return EXIT_OK


def cmd_sroc(args):
    data = _load(args)
    spec = _spec_from_flags(args)
    w = Writer(args.format)
    w.add_meta("command", "sroc")
    w.add_meta("version", __version__)
    if spec is None:
        if not args.criterion:
            raise CliError("sroc needs either --family/--alpha-p/--alpha-q or --criterion")
        kind = CriterionKind.parse(args.criterion)
        fits, ranked = _ranked(data, _grid(args), kind, args.method)
        if not math.isfinite(ranked[0].value):
            print(f"no selectable model under {kind.label}", file=sys.stderr)
            return EXIT_NOSELECT
        spec = ranked[0].spec
        f = next(x for x in fits if x is not None and x.spec == spec)
        w.add_meta("criterion", kind.label)
    else:
        try:
            f = fit(data, spec, args.method)
        except FitError as exc:
            raise CliError(f"fit failed: {exc}", EXIT_FIT) from None
    _fit_meta(w, f)
    w.add_meta("level", args.level)
    w.add_meta("grid_size", args.grid_size)
    cols = ("section", "index", "fpr", "sens")
    code = EXIT_OK
    try:
        fpr0, sens0 = summary_point(f)
    except ValueError:
        fpr0 = sens0 = None
    try:
        cur = summary_curve(f, args.grid_size)
    except DegenerateCurveError as exc:
        print(str(exc), file=sys.stderr)
        cur = None
        code = EXIT_DEGENERATE
    if cur is not None:
        w.add_meta("auc", cur.auc)
        for i, (u, s) in enumerate(zip(cur.fpr_grid, cur.sens_values)):
            w.add_row(cols, ("curve", i, u, s))
    w.add_row(cols, ("summary", 0, fpr0, sens0))
    for kind in RegionKind:
        reg = region(f, data, kind, args.level)
        for i, (u, s) in enumerate(reg.boundary):
            w.add_row(cols, (kind.value, i, u, s))
    _emit(args, w)
    return code


def cmd_simulate(args):
    if args.seed is None:
        raise CliError("simulate requires --seed")
    if args.n_studies not in (5, 10):
        print(f"warning: N={args.n_studies} is outside the studied settings (5, 10)", file=sys.stderr)
    crit = [c.strip() for c in args.criteria.split(",")] if args.criteria else None
    if crit:
        for c in crit:
            if c.lower() != RANDOM and c.lower() not in CRITERIA:
                raise CliError(f"unknown criterion {c!r}; valid: {', '.join(CRITERIA + [RANDOM])}")

    last = [-1]

    def progress(done, total):
        pct = (100 * done) // total
        if pct // 10 != last[0]:
            last[0] = pct // 10
            print(f"simulate: {done}/{total} replications", file=sys.stderr)

    rep = run_experiment(
        args.scenario, args.n_studies, args.reps, crit, args.method, args.seed,
        args.grid_size, args.workers, progress,
    )
    text = rep.to_csv() if args.format == "csv" else rep.to_jsonl()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return EXIT_OK


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _level(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elsroc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"elsroc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--output", default=None, help="output file (default stdout)")
        sp.add_argument("--format", choices=("csv", "json-lines"), default="csv")
        sp.add_argument("--method", type=str.upper, choices=("ML", "REML"), default="REML")
        sp.add_argument("--grid-size", type=_positive_int, default=DEFAULT_GRID_SIZE)
        if data:
            sp.add_argument("--input", required=True, help="delimited file with label,tp,fn,fp,tn")
            sp.add_argument("--correction", choices=("half", "none"), default="half")
            sp.add_argument("--alphas", default=None,
                            help=f"comma-separated alpha grid (default {','.join(map(str, ALPHA_GRID))})")

    def model_flags(sp):
        sp.add_argument("--family", type=int, choices=(1, 2), default=None)
        sp.add_argument("--alpha-p", type=float, default=None)
        sp.add_argument("--alpha-q", type=float, default=None)

    crit = dict(type=str.lower, choices=CRITERIA)

    sp = sub.add_parser("fit", help="fit one model")
    common(sp)
    model_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="rank all candidate models by one criterion")
    common(sp)
    sp.add_argument("--criterion", default="el-blup", **crit)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("sroc", help="summary curve, AUC and regions for one model")
    common(sp)
    model_flags(sp)
    sp.add_argument("--criterion", default=None, **crit)
    sp.add_argument("--level", type=_level, default=0.95)
    sp.set_defaults(func=cmd_sroc)

    sp = sub.add_parser("simulate", help="criterion-comparison experiment")
    common(sp, data=False)
    sp.add_argument("--scenario", type=str.lower, choices=[s.lower() for s in SCENARIOS], required=True)
    sp.add_argument("--n-studies", type=_positive_int, default=10)
    sp.add_argument("--reps", type=_positive_int, default=200)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--criteria", default=None,
                    help=f"comma-separated subset of {','.join(CRITERIA)},{RANDOM}")
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"elsroc: {exc}", file=sys.stderr)
        return exc.code
    except NoSelectableModel as exc:
        print(f"elsroc: {exc}", file=sys.stderr)
        return EXIT_NOSELECT


if __name__ == "__main__":
    sys.exit(main())
