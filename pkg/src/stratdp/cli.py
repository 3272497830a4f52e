"""Command-line experiment harness.

Every subcommand writes a CSV whose ``#`` header records the full
configuration, master seed and package version. Re-running with those
values reproduces the file byte for byte, except for the ``# generated``
timestamp line. SVG charts are derived from the same rows.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 degenerate
statistics under ``--strict``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import secrets
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .datagen import MixtureSpec, gaussian_mixture, write_sample_csv
from .experiments import (
    MEAN_METHODS,
    CoinpressSettings,
    coinpress_table_trial,
    mean_sweep_trial,
    summarize,
)
from .privacy import InvalidParameterError, RngHandle
from .svgplot import line_chart
from .tabular import (
    DataError,
    DegenerateResampleError,
    SchemaError,
    all_k_way_workload,
    dump_marginals,
    load_csv,
    load_numeric_columns,
    load_schema,
    parity_error_tabular,
    partition,
    strat_histogram_synth,
    workload_error,
)
from .theory import (
    AlphaSaturationWarning,
    DirichletParams,
    expected_sum_log_mc,
    fit_dirichlet_alpha,
    lemma1_max,
    sparse_ref,
    thm1_bound,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4
PAPER_EPS_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0)
SEED_ENV = "STRATDP_SEED"


class ConfigError(ValueError):
    pass


# ---- argument parsing helpers ----


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return vals[0], vals[1]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.12g}"
    return str(v)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return secrets.randbits(32)


# ---- output ----

_NON_CONFIG = {"out", "svg", "workers", "func", "strict", "seed"}


def _config_dict(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in _NON_CONFIG:
            continue
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


class Output:
    """Collects header notes and rows, then writes CSV (and optional SVG)."""

    def __init__(self, args, command: str, seed: int):
        self.args = args
        self.command = command
        self.seed = seed
        self.notes: list[str] = []
        self.path: Optional[Path] = Path(args.out) if getattr(args, "out", None) else None
        self.svg: Optional[Path] = Path(args.svg) if getattr(args, "svg", None) else None
        for p in (self.path, self.svg):
            if p is not None:
                _check_writable(p)

    def note(self, text: str) -> None:
        self.notes.append(text)
        print(f"notice: {text}", file=sys.stderr)

    def render(self, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
        lines = [
            f"# stratdp {self.command}",
            f"# version: {__version__}",
            f"# seed: {self.seed}",
            "# config: " + json.dumps(_config_dict(self.args), sort_keys=True),
        ]
        lines += [f"# note: {n}" for n in self.notes]
        lines.append("# generated: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
        lines.append(",".join(columns))
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        return "\n".join(lines) + "\n"

    def write(self, columns, rows, chart: Optional[Callable[[], str]] = None) -> None:
        text = self.render(columns, rows)
        if self.path is None:
            sys.stdout.write(text)
        else:
            self.path.write_text(text)
        if self.svg is not None and chart is not None:
            self.svg.write_text(chart())


def _check_writable(path: Path) -> None:
    try:
        existed = path.exists()
        with path.open("a"):
            pass
        if not existed:
            path.unlink()
    except OSError as exc:
        raise OSError(f"cannot write output file {path}: {exc.strerror or exc}") from None


def _run_tasks(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _coinpress_settings(args) -> CoinpressSettings:
    if args.rho_schedule is not None and len(args.rho_schedule) != args.t:
        raise ConfigError(f"--rho-schedule has {len(args.rho_schedule)} entries but --t is {args.t}")
    if args.t < 1:
        raise ConfigError("--t must be at least 1")
    return CoinpressSettings(
        t=args.t,
        rho_weights=tuple(args.rho_schedule) if args.rho_schedule else None,
        interval=tuple(args.range),
        beta=args.beta,
        sigma=args.sigma,
        per_group_sigma=getattr(args, "per_group_sigma", False),
    )


def _check_trials(args) -> None:
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")


# ---- subcommands ----


def _mean_task(task, settings, opts):
    n, k, alpha, eps, seed, trial = task
    return mean_sweep_trial(n, k, alpha, eps, seed, trial, coinpress=settings, **opts)


def cmd_mean_sweep(args) -> int:
    _check_trials(args)
    seed = _resolve_seed(args)
    settings = _coinpress_settings(args)
    out = Output(args, "mean-sweep", seed)
    out.note("Laplace methods run at epsilon; Coinpress methods at rho = epsilon^2/2")
    out.note("errors are relative to empirical means; global error is normalized by the pooled sd")
    if args.holdout_frac <= 0:
        out.note("holdout fraction is 0: pubstrat_coinpress omitted")
    methods = [m for m in MEAN_METHODS if m != "pubstrat_coinpress" or args.holdout_frac > 0]
    grid = [(n, k, a, e) for n in args.n_grid for k in args.k_grid for a in args.alpha for e in args.eps_grid]
    for n, k, _, _ in grid:
        if n < k:
            raise ConfigError(f"grid point n={n} is smaller than k={k}")
    tasks = [(n, k, a, e, seed, t) for (n, k, a, e) in grid for t in range(args.trials)]
    opts = dict(
        clip_R=args.clip_R,
        gamma=args.gamma,
        holdout_frac=args.holdout_frac,
        equal_sizes=args.equal_sizes,
        methods=tuple(methods),
    )
    results = _run_tasks(partial(_mean_task, settings=settings, opts=opts), tasks, args.workers)
    rows = []
    degenerate = 0
    for gi, (n, k, a, e) in enumerate(grid):
        chunk = results[gi * args.trials : (gi + 1) * args.trials]
        for m in methods:
            em, es, eb = summarize([r[m][0] for r in chunk])
            pm, ps, pb = summarize([r[m][1] for r in chunk])
            degenerate += eb + pb
            rows.append((n, k, a, e, m, args.trials, em, es, pm, ps, max(eb, pb)))
    if degenerate:
        out.note(f"{degenerate} trial statistics were undefined and excluded")

    def chart():
        multi = len({(k, a, e) for _, k, a, e in grid}) > 1
        series = {}
        for n, k, a, e, m, *_rest in rows:
            label = f"{m} k={k} a={a:g} eps={e:g}" if multi else m
            series.setdefault(label, []).append((n, _rest[1]))
        return line_chart(series, "Normalized global mean error", "n", "error", logx=True, logy=True)

    out.write(
        ["n", "k", "alpha", "eps", "method", "trials", "err_mean", "err_sd", "parity_mean", "parity_sd", "undefined"],
        rows,
        chart,
    )
    return EXIT_DEGENERATE if (degenerate and args.strict) else EXIT_OK


def cmd_bounds(args) -> int:
    _check_trials(args)
    seed = _resolve_seed(args)
    out = Output(args, "bounds", seed)
    if args.n <= args.k or args.k < 1:
        raise ConfigError("bounds need n > k >= 1")
    rng = RngHandle(seed)
    rows = []
    for i, a in enumerate(args.alpha_grid):
        params = DirichletParams(a, args.k)
        mc = expected_sum_log_mc(params, args.n, args.trials, rng.substream(i))
        rows.append((a, thm1_bound(params, args.n), lemma1_max(args.n, args.k), sparse_ref(args.n, args.k), mc.mean, mc.se))

    def chart():
        names = ["thm1", "lemma1_max", "sparse_ref", "mc_mean"]
        series = {nm: [(r[0], r[j + 1]) for r in rows] for j, nm in enumerate(names)}
        return line_chart(series, f"E[sum ln|G_i|], k={args.k}, n={args.n}", "alpha", "sum of log group sizes")

    out.write(["alpha", "thm1", "lemma1_max", "sparse_ref", "mc_mean", "mc_se"], rows, chart)
    return EXIT_OK


def _csv_task(task, values, index, ks, settings, holdout_frac):
    grid_id, eps, seed, trial = task
    return coinpress_table_trial(
        values[grid_id], index[grid_id], ks[grid_id], eps, seed, trial, grid_id, settings, holdout_frac
    )


def cmd_coinpress_csv(args) -> int:
    _check_trials(args)
    seed = _resolve_seed(args)
    settings = _coinpress_settings(args)
    out = Output(args, "coinpress-csv", seed)
    schema = load_schema(args.schema)
    data = load_csv(args.data, schema)
    targets = load_numeric_columns(args.data, args.targets)
    schema.indices(args.group_attrs)
    out.note("Coinpress runs at rho = epsilon^2/2; known sigma is the pooled sample sd unless --sigma is set")
    if args.holdout_frac <= 0:
        out.note("holdout fraction is 0: pubstrat_coinpress omitted")
    if not 0 <= args.holdout_frac < 1:
        raise ConfigError("--holdout-frac must lie in [0, 1)")

    combos = []  # (target, attrs, eps) with values / group index arrays
    values, index, ks = [], [], []
    for target in args.targets:
        col = targets[target]
        mask = np.isfinite(col)
        if not mask.any():
            raise DataError(f"target column {target!r} has no numeric values")
        sub = data.subset(mask)
        x = col[mask]
        if np.all(x == x[0]):
            out.note(f"target {target!r} is constant: normalized error undefined")
        for j in range(1, len(args.group_attrs) + 1):
            attrs = args.group_attrs[:j]
            part = partition(sub, attrs)
            gi = np.empty(len(sub), dtype=np.int64)
            for g, ix in enumerate(part.indices):
                gi[ix] = g
            for eps in args.eps_grid:
                combos.append((target, "+".join(attrs), eps, len(part.group_ids)))
                values.append(x)
                index.append(gi)
                ks.append(len(part.group_ids))
    tasks = [(c, combos[c][2], seed, t) for c in range(len(combos)) for t in range(args.trials)]
    fn = partial(_csv_task, values=values, index=index, ks=ks, settings=settings, holdout_frac=args.holdout_frac)
    results = _run_tasks(fn, tasks, args.workers)
    methods = ["coinpress", "strat_coinpress"] + (["pubstrat_coinpress"] if args.holdout_frac > 0 else [])
    rows = []
    degenerate = 0
    for c, (target, attrs, eps, k) in enumerate(combos):
        chunk = results[c * args.trials : (c + 1) * args.trials]
        for m in methods:
            em, es, eb = summarize([r[m][0] for r in chunk])
            pm, ps, pb = summarize([r[m][1] for r in chunk])
            degenerate += eb + pb
            rows.append((target, attrs, k, eps, m, args.trials, em, es, pm, ps, max(eb, pb)))
    if degenerate:
        out.note(f"{degenerate} trial statistics were undefined and excluded")

    def chart():
        series = {}
        for target, attrs, k, eps, m, _t, em, es, pm, *_ in rows:
            series.setdefault(f"{target} {m} parity", []).append((k, pm))
        return line_chart(series, "Parity error vs number of groups", "k", "parity error", logy=True)

    out.write(
        ["target", "group_attrs", "k", "eps", "method", "trials", "err_mean", "err_sd", "parity_mean", "parity_sd", "undefined"],
        rows,
        chart,
    )
    return EXIT_DEGENERATE if (degenerate and args.strict) else EXIT_OK


def cmd_fit_alpha(args) -> int:
    seed = _resolve_seed(args)
    out = Output(args, "fit-alpha", seed)
    if args.proportions is not None:
        props = np.asarray(args.proportions, dtype=float)
        if args.normalize:
            props = props / props.sum()
    else:
        if not (args.data and args.schema and args.group_attrs):
            raise ConfigError("give --proportions, or --data, --schema and --group-attrs")
        data = load_csv(args.data, load_schema(args.schema))
        props = partition(data, args.group_attrs).weights()
    lo, hi, steps = args.grid
    saturated = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AlphaSaturationWarning)
        alpha = fit_dirichlet_alpha(props, (lo, hi, int(steps)), method=args.method, draws=args.draws, seed=seed)
    for w in caught:
        if issubclass(w.category, AlphaSaturationWarning):
            saturated = True
            print(f"warning: {w.message} (saturated)", file=sys.stderr)
    print(f"alpha={_fmt(alpha)}")
    print("proportions=" + ",".join(_fmt(p) for p in props))
    if out.path is not None:
        if saturated:
            out.notes.append("fitted alpha saturated at the grid boundary")
        out.write(["alpha", "k", "method", "saturated", "proportions"], [(alpha, props.size, args.method, saturated, " ".join(_fmt(p) for p in props))])
    return EXIT_DEGENERATE if (saturated and args.strict) else EXIT_OK


def _synth_task(task, data, group_attrs, way):
    ei, eps, seed, trial = task
    rng = RngHandle(seed, trial, (ei,))
    workload = all_k_way_workload(data.schema, way)
    res = {}
    for variant, attrs in (("stratified", group_attrs), ("vanilla", [])):
        synth = strat_histogram_synth(data, attrs, eps, None, len(data), rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            par = parity_error_tabular(data, synth.data, group_attrs)
        res[variant] = (workload_error(data, synth.data, workload), par.aggregate, par.undefined)
    return res


def cmd_synth_eval(args) -> int:
    _check_trials(args)
    seed = _resolve_seed(args)
    out = Output(args, "synth-eval", seed)
    schema = load_schema(args.schema)
    data = load_csv(args.data, schema)
    if len(data) == 0:
        raise DataError(f"{args.data}: no records")
    schema.indices(args.group_attrs)
    way = args.way
    if way > len(schema.attributes):
        out.note(f"workload way {way} exceeds attribute count; using {len(schema.attributes)}")
        way = len(schema.attributes)
    out.note("stratified variant samples groups with the observed group proportions as public weights")
    tasks = [(ei, e, seed, t) for ei, e in enumerate(args.eps_grid) for t in range(args.trials)]
    try:
        results = _run_tasks(partial(_synth_task, data=data, group_attrs=args.group_attrs, way=way), tasks, args.workers)
    except DegenerateResampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    rows = []
    undefined = 0
    for ei, e in enumerate(args.eps_grid):
        chunk = results[ei * args.trials : (ei + 1) * args.trials]
        for variant in ("stratified", "vanilla"):
            wm, ws, _ = summarize([r[variant][0] for r in chunk])
            pm, ps, _ = summarize([r[variant][1] for r in chunk])
            und = sum(r[variant][2] for r in chunk)
            undefined += und
            rows.append((e, variant, args.trials, wm, ws, pm, ps, und))
    if undefined:
        out.note(f"{undefined} parity terms had zero true means and were skipped")

    def chart():
        series = {}
        for e, variant, _t, wm, ws, pm, ps, _u in rows:
            series.setdefault(f"{variant} workload", []).append((e, wm))
            series.setdefault(f"{variant} parity", []).append((e, pm))
        return line_chart(series, "Synthetic data error vs epsilon", "epsilon", "error", logx=True, logy=True)

    out.write(
        ["eps", "variant", "trials", "workload_mean", "workload_sd", "parity_mean", "parity_sd", "parity_undefined"],
        rows,
        chart,
    )
    return EXIT_DEGENERATE if (undefined and args.strict) else EXIT_OK


def cmd_marginals(args) -> int:
    schema = load_schema(args.schema)
    data = load_csv(args.data, schema)
    sets = [_names(s) for s in args.attrs.split(";") if s.strip()]
    text = dump_marginals(data, sets)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args)
    spec = MixtureSpec(args.n, args.k, args.alpha, equal_sizes=args.equal_sizes)
    data = gaussian_mixture(spec, RngHandle(seed))
    write_sample_csv(data.sample, args.out)
    return EXIT_OK


# ---- parser ----


def _add_common(p, trials_default: int) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (fallback: ${SEED_ENV}, else random)")
    p.add_argument("--trials", type=int, default=trials_default)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--svg", help="optional SVG chart path")
    p.add_argument("--strict", action="store_true", help="exit 4 on degenerate statistics")
    p.add_argument("--workers", type=int, default=1, help="worker processes (output does not depend on it)")


def _add_coinpress(p) -> None:
    p.add_argument("--t", type=int, default=4, help="Coinpress iterations")
    p.add_argument("--rho-schedule", type=_floats, default=None, help="relative per-step budgets (default 1,...,1,5)")
    p.add_argument("--range", type=_pair, default=(-100.0, 100.0), help="prior interval, e.g. --range=-100,100")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=None, help="known data sd (default: from the data)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratdp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"stratdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mean-sweep", help="private mean estimators on the Gaussian mixture")
    _add_common(p, 50)
    _add_coinpress(p)
    p.add_argument("--n-grid", type=_ints, default=[1000, 10000, 100000])
    p.add_argument("--k-grid", type=_ints, default=[4])
    p.add_argument("--alpha", type=_floats, default=[1.0], help="Dirichlet concentration(s)")
    p.add_argument("--eps-grid", type=_floats, default=[1.0])
    p.add_argument("--clip-R", type=float, default=3.0, help="bound on |mean| for the Laplace estimators")
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--holdout-frac", type=float, default=0.1, help="public holdout size as a fraction of n")
    p.add_argument("--equal-sizes", action="store_true", help="groups of size n/k instead of Dirichlet sizes")
    p.add_argument("--per-group-sigma", action="store_true", help="give each stratum its generating sd")
    p.set_defaults(func=cmd_mean_sweep)

    p = sub.add_parser("bounds", help="bound curves for sum of log group sizes vs alpha")
    _add_common(p, 100000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--alpha-grid", type=_floats, default=[round(0.2 + 0.1 * i, 1) for i in range(8)])
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("coinpress-csv", help="Coinpress variants on a tabular CSV, k growing with attributes")
    _add_common(p, 50)
    _add_coinpress(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--group-attrs", type=_names, required=True, help="attributes, combined as growing prefixes")
    p.add_argument("--targets", type=_names, required=True, help="numeric target columns")
    p.add_argument("--holdout-frac", type=float, default=0.1)
    p.add_argument("--eps-grid", type=_floats, default=[1.0])
    p.set_defaults(func=cmd_coinpress_csv)

    p = sub.add_parser("fit-alpha", help="fit a symmetric Dirichlet concentration to group proportions")
    p.add_argument("--proportions", type=_floats)
    p.add_argument("--normalize", action="store_true", help="rescale --proportions to sum to 1")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--group-attrs", type=_names)
    p.add_argument("--grid", type=_floats, default=[1e-3, 1e2, 25.0], help="lo,hi,steps")
    p.add_argument("--method", choices=["montecarlo", "mle"], default="montecarlo")
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_fit_alpha)

    p = sub.add_parser("synth-eval", help="stratified vs vanilla noisy-histogram synthesis across epsilon")
    _add_common(p, 5)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--group-attrs", type=_names, required=True)
    p.add_argument("--eps-grid", type=_floats, default=list(PAPER_EPS_GRID))
    p.add_argument("--way", type=int, default=3, help="marginal order of the all-way workload")
    p.set_defaults(func=cmd_synth_eval)

    p = sub.add_parser("marginals", help="dump exact marginals as S=...;counts=... lines")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--attrs", required=True, help="attribute sets separated by ';', e.g. 'SEX;SEX,RAC1P'")
    p.add_argument("--out")
    p.set_defaults(func=cmd_marginals)

    p = sub.add_parser("gen-data", help="write a Gaussian-mixture dataset as group_id,value CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--equal-sizes", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "grid", None) is not None and len(args.grid) != 3:
        parser.error("--grid expects lo,hi,steps")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        if isinstance(exc, FileNotFoundError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
