"""Command-line interface.

Configuration is flat ``key = value`` text with dotted keys, for example::

    regularizer.kind = huber
    regularizer.gamma = 0.01
    grid.spec = zero,log:-12:3:98,1e7

Command-line flags override file values. Each run writes its outputs and a
``manifest.txt`` (the fully resolved configuration) to the output directory;
feeding the manifest back through ``--config`` reproduces the run.
"""

import argparse
import configparser
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bilevel import (
    PAPER_GRID_SPEC,
    AlphaGrid,
    Dataset,
    check_condition_new_expected,
    check_condition_new_pointwise,
    check_condition_old,
    check_condition_predictive,
    check_condition_symmetric_bregman,
    grid_search,
)
from .errors import BilevelError, ConfigError, InputError
from .experiments.io import format_value, write_cost_curve, write_csv, write_pgm, write_record
from .experiments.large_scale import LargeScaleSpec, run_large_scale
from .experiments.noise_study import NoiseStudySpec, run_noise_study
from .experiments.region_scan import (
    RATIO_CSV_HEADER,
    REGION_CSV_HEADER,
    REGULARIZER_NAMES,
    RegionScanSpec,
    compute_area_ratios,
    paper_regularizer,
    run_region_scan,
    run_table3,
)
from .linops import BLUR_2X2, ForwardOperator, load_matrix
from .regularizers import LinearMap, Regularizer
from .varsolve import LowerLevelProblem, SolverSettings, solve, verify_optimality_identity

COMMANDS = (
    "solve-lower", "check-positivity", "learn-alpha", "region-scan", "noise-study", "large-scale",
)

EXIT_CODES = {"config": 2, "data": 3, "rank-deficiency": 4, "convergence": 5}

NOISE_GRID_SPEC = "lin:0:0.1:50"


# -- value parsers: raw string -> typed value, raising ValueError on bad input

def _choice(*options, aliases=None):
    aliases = aliases or {}

    def parse(s):
        s = aliases.get(s, s)
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _number(kind, lo=None, strict=False):
    def parse(s):
        v = kind(s)
        if kind is float and not np.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ValueError(f"must be {'>' if strict else '>='} {lo}")
        return v
    return parse


def _bool(s):
    t = s.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected a boolean")


def _vector(size=None):
    def parse(s):
        v = np.array([float(t) for t in s.replace(",", " ").split()])
        if v.size == 0 or (size is not None and v.size != size):
            raise ValueError(f"expected {size or 'a non-empty list of'} numbers")
        if not np.all(np.isfinite(v)):
            raise ValueError("must be finite")
        return v
    return parse


def _existing_file(s):
    if not Path(s).is_file():
        raise ValueError(f"file not found: {s}")
    return s


def _grid(s):
    try:
        AlphaGrid.parse(s)
    except InputError as exc:
        raise ValueError(str(exc)) from None
    return s


# key -> (parser, default). A default of None means "unset unless given".
SCHEMA = {
    "run.command": (_choice(*COMMANDS), None),
    "run.seed": (_number(int, 0), 0),
    "run.workers": (_number(int, 1), None),
    "run.out": (str, "out"),
    "operator.kind": (_choice("identity", "blur2", "file"), "identity"),
    "operator.file": (_existing_file, None),
    "operator.rank_tol": (_number(float, 0, strict=True), 1e-10),
    "regularizer.kind": (
        _choice("tikhonov", "generalized-tikhonov", "huber", "generalized-huber", "elastic-huber"),
        "tikhonov",
    ),
    "regularizer.gamma": (_number(float, 0, strict=True), 0.01),
    "regularizer.beta": (_number(float, 0), 0.01),
    "regularizer.k": (_choice("identity", "first-difference"), "first-difference"),
    "data.file": (_existing_file, None),
    "data.x_true": (_vector(), None),
    "data.y": (_vector(), None),
    "grid.spec": (_grid, None),
    "upper.kind": (_choice("mse", "predictive-risk", aliases={"predictive": "predictive-risk"}), "mse"),
    "solver.grad_tol": (_number(float, 0, strict=True), 1e-10),
    "solver.max_iter": (_number(int, 1), 100_000),
    "solve.alpha": (_number(float, 0), None),
    "check.expected": (_bool, False),
    "scan.problem": (_choice("denoising", "deconvolution"), "denoising"),
    "scan.regularizer": (_choice(*REGULARIZER_NAMES), "tikhonov"),
    "scan.gamma": (_number(float, 0, strict=True), 0.01),
    "scan.resolution": (_number(int, 8), 100),
    "scan.domain": (_vector(4), np.array([-1.6, 1.6, -1.6, 1.6])),
    "scan.x_true": (_vector(2), np.array([1.0, 0.5])),
    "scan.all": (_bool, False),
    "noise.x_true": (_vector(), np.array([1.0, 0.0])),
    "noise.samples": (_number(int, 1), 1000),
    "noise.mean": (_vector(), np.array([0.0, 0.0])),
    "noise.std": (_vector(), np.array([0.1, 0.1])),
    "noise.beta": (_number(float, 0), 0.01),
    "noise.gamma": (_number(float, 0, strict=True), 0.01),
    "large.side": (_number(int, 16), 128),
    "large.blur_sigma": (_number(float, 0, strict=True), 0.05),
    "large.truncate": (_number(float, 0, strict=True), 4.0),
    "large.noise_level": (_number(float, 0), 0.1),
    "large.noise_mode": (_choice("normalized", "literal"), "normalized"),
    "large.rank_tol": (_number(float, 0, strict=True), 1e-20),
    "large.grad_tol": (_number(float, 0, strict=True), 1e-8),
}


@dataclass
class RunConfig:
    """Validated configuration: every schema key mapped to a typed value or ``None``."""

    values: dict

    @property
    def command(self):
        return self.values["run.command"]

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self):
        lines = []
        for key in SCHEMA:
            v = self.values.get(key)
            if v is not None:
                lines.append(f"{key} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def read_config_file(path):
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None,
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    try:
        with open(path) as fh:
            parser.read_string("[config]\n" + fh.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    return dict(parser["config"])


def parse_config(path=None, overrides=None, command=None):
    """Merge file values and overrides, validate and fill defaults."""
    raw = read_config_file(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if command is not None:
        raw["run.command"] = command
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError("unknown configuration key", key=unknown[0])

    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(str(raw[key]).strip())
            except ValueError as exc:
                raise ConfigError(f"invalid value {raw[key]!r} ({exc})", key=key) from None
        else:
            values[key] = default
    if values["run.command"] is None:
        raise ConfigError("no command given", key="run.command")
    if values["run.workers"] is None:
        values["run.workers"] = os.cpu_count() or 1
    if values["grid.spec"] is None:
        values["grid.spec"] = NOISE_GRID_SPEC if values["run.command"] == "noise-study" else PAPER_GRID_SPEC
    if values["operator.kind"] == "file" and values["operator.file"] is None:
        raise ConfigError("operator.kind = file needs a matrix file", key="operator.file")
    if values["run.command"] == "solve-lower" and values["solve.alpha"] is None:
        raise ConfigError("solve-lower needs an alpha", key="solve.alpha")
    return RunConfig(values)


# -- building blocks from a config

def load_training_file(path):
    """Alternating lines ``x_true`` / ``y``, whitespace-separated floats; ``#`` comments."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(t) for t in line.replace(",", " ").split()])
    if not rows or len(rows) % 2:
        raise InputError("training file needs an even, non-zero number of vector lines")
    try:
        return Dataset.from_arrays(np.array(rows[0::2]), np.array(rows[1::2]))
    except ValueError:
        raise InputError("training file rows have inconsistent lengths") from None


def build_dataset(cfg, need_truth=True):
    if cfg["data.file"] is not None:
        return load_training_file(cfg["data.file"])
    y = cfg["data.y"]
    if y is None:
        raise ConfigError("no data given (set data.file or data.y)", key="data.file")
    x_true = cfg["data.x_true"]
    if x_true is None:
        if need_truth:
            raise ConfigError("ground truth required for this command", key="data.x_true")
        x_true = np.zeros_like(y)
    return Dataset.single(x_true, y)


def build_operator(cfg, n):
    kind = cfg["operator.kind"]
    if kind == "identity":
        return ForwardOperator(np.eye(n), rank_tol=cfg["operator.rank_tol"])
    if kind == "blur2":
        return ForwardOperator(BLUR_2X2, rank_tol=cfg["operator.rank_tol"])
    return load_matrix(cfg["operator.file"], rank_tol=cfg["operator.rank_tol"])


def build_regularizer(cfg, n):
    kind = cfg["regularizer.kind"]
    gamma, beta = cfg["regularizer.gamma"], cfg["regularizer.beta"]
    K = LinearMap.identity() if cfg["regularizer.k"] == "identity" else LinearMap.first_difference(n)
    if kind == "tikhonov":
        return Regularizer.tikhonov()
    if kind == "generalized-tikhonov":
        return Regularizer.generalized_tikhonov(K)
    if kind == "huber":
        return Regularizer.huber(gamma)
    if kind == "generalized-huber":
        return Regularizer.generalized_huber(K, gamma)
    return Regularizer.elastic_huber(beta, gamma)


def build_settings(cfg):
    return SolverSettings(grad_tol=cfg["solver.grad_tol"], max_iter=cfg["solver.max_iter"])


# -- commands; each returns a short summary line

def _cmd_solve_lower(cfg, out):
    data = build_dataset(cfg, need_truth=False)
    y = data.Y[0]
    op = build_operator(cfg, y.size)
    reg = build_regularizer(cfg, op.shape[1])
    prob = LowerLevelProblem(op, reg, y, cfg["solve.alpha"])
    rec = solve(prob, settings=build_settings(cfg))
    record = {
        "alpha": prob.alpha,
        "x": rec.x,
        "grad_norm": rec.grad_norm,
        "iterations": rec.iterations,
        "used_closed_form": rec.used_closed_form,
        "optimality_residual": verify_optimality_identity(prob, rec) if prob.alpha > 0 else None,
    }
    write_record(out / "reconstruction.txt", record)
    return f"x = {format_value(rec.x)}"


def _cmd_check_positivity(cfg, out):
    data = build_dataset(cfg)
    op = build_operator(cfg, data.Y.shape[1])
    data.check_operator(op)
    reg = build_regularizer(cfg, op.shape[1])
    denoising = op.is_square() and np.array_equal(op.matrix, np.eye(op.shape[0]))
    invertible = op.is_square() and op.is_injective()
    record = {"pairs": len(data)}
    if cfg["check.expected"]:
        record["old_condition"] = (
            bool(np.mean(reg.eval(data.X_true)) < np.mean(reg.eval(data.Y))) if denoising else None
        )
        record["new_condition"] = check_condition_new_expected(op, reg, data)
        record["predictive_condition"] = check_condition_predictive(reg, data, op) if invertible else None
        record["symmetric_bregman_condition"] = (
            check_condition_symmetric_bregman(reg, data) if denoising else None
        )
    else:
        rows = []
        for i, p in enumerate(data.pairs):
            single = Dataset.single(p.x_true, p.y)
            rows.append((
                i,
                check_condition_old(reg, p.x_true, p.y) if denoising else None,
                check_condition_new_pointwise(op, reg, p.x_true, p.y),
                check_condition_predictive(reg, single, op) if invertible else None,
            ))
        write_csv(out / "conditions.csv", ["pair", "old_ok", "new_ok", "pred_ok"], rows)
        first = rows[0]
        record["old_condition"], record["new_condition"], record["predictive_condition"] = first[1:]
        record["new_condition_all"] = all(r[2] for r in rows)
    write_record(out / "conditions.txt", record)
    return f"new condition: {format_value(record['new_condition'])}"


def _write_solution(out, sol, suffix=""):
    write_cost_curve(out / f"cost_curve{suffix}.csv", sol.cost_curve)
    write_record(out / f"solution{suffix}.txt", sol.record())


def _cmd_learn_alpha(cfg, out):
    data = build_dataset(cfg)
    op = build_operator(cfg, data.Y.shape[1])
    reg = build_regularizer(cfg, op.shape[1])
    sol = grid_search(cfg["upper.kind"], data, op, reg, AlphaGrid.parse(cfg["grid.spec"]),
                      build_settings(cfg))
    _write_solution(out, sol)
    return f"alpha_hat = {sol.alpha_hat!r}"


def _cmd_region_scan(cfg, out):
    settings = build_settings(cfg)
    grid = AlphaGrid.parse(cfg["grid.spec"])
    domain = tuple(cfg["scan.domain"])
    if cfg["scan.all"]:
        rows, results = run_table3(resolution=cfg["scan.resolution"], workers=cfg["run.workers"],
                                   settings=settings, grid=grid, domain=domain,
                                   x_true=cfg["scan.x_true"])
        for (problem, name), res in results.items():
            write_csv(out / f"region_{problem}_{name}.csv", REGION_CSV_HEADER, res.rows())
    else:
        spec = RegionScanSpec(
            problem=cfg["scan.problem"], regularizer=cfg["scan.regularizer"],
            reg=paper_regularizer(cfg["scan.regularizer"], cfg["scan.gamma"]),
            x_true=cfg["scan.x_true"], domain=domain, resolution=cfg["scan.resolution"],
            grid=grid, upper=cfg["upper.kind"],
        )
        res = run_region_scan(spec, workers=cfg["run.workers"], settings=settings)
        write_csv(out / "region.csv", REGION_CSV_HEADER, res.rows())
        rows = compute_area_ratios(res)
    write_csv(out / "ratios.csv", RATIO_CSV_HEADER, [r.as_tuple() for r in rows])
    return "; ".join(f"{r.problem}/{r.regularizer}/{r.condition} = {format_value(r.ratio)}"
                     for r in rows)


def _cmd_noise_study(cfg, out):
    spec = NoiseStudySpec(
        x_true=cfg["noise.x_true"], samples=cfg["noise.samples"], mean=cfg["noise.mean"],
        std=cfg["noise.std"], reg=Regularizer.elastic_huber(cfg["noise.beta"], cfg["noise.gamma"]),
        grid=AlphaGrid.parse(cfg["grid.spec"]), seed=cfg["run.seed"],
    )
    res = run_noise_study(spec, build_settings(cfg))
    _write_solution(out, res.solution)
    return f"alpha_hat = {res.alpha_hat!r}"


def _cmd_large_scale(cfg, out):
    spec = LargeScaleSpec(
        side=cfg["large.side"], blur_sigma=cfg["large.blur_sigma"], truncate=cfg["large.truncate"],
        noise_level=cfg["large.noise_level"], noise_mode=cfg["large.noise_mode"],
        grid=AlphaGrid.parse(cfg["grid.spec"]), seed=cfg["run.seed"], rank_tol=cfg["large.rank_tol"],
    )
    settings = SolverSettings(grad_tol=cfg["large.grad_tol"], max_iter=cfg["solver.max_iter"])
    res = run_large_scale(spec, settings)
    shape = spec.image_shape
    write_pgm(out / "phantom.pgm", res.phantom.reshape(shape), 0.0, 1.0)
    write_pgm(out / "measurement.pgm", res.measurement.reshape(shape))
    parts = []
    for kind, run in res.runs.items():
        write_pgm(out / f"reconstruction_{kind}.pgm", run.reconstruction.reshape(shape))
        _write_solution(out, run.solution, f"_{kind}")
        parts.append(f"{kind}: alpha_hat = {run.alpha_hat!r}")
    return "; ".join(parts)


HANDLERS = {
    "solve-lower": _cmd_solve_lower,
    "check-positivity": _cmd_check_positivity,
    "learn-alpha": _cmd_learn_alpha,
    "region-scan": _cmd_region_scan,
    "noise-study": _cmd_noise_study,
    "large-scale": _cmd_large_scale,
}


def _version():
    from . import __version__
    return __version__


def run(cfg):
    """Execute ``cfg`` and write outputs plus ``manifest.txt``; returns the summary line."""
    out = Path(cfg["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary = HANDLERS[cfg.command](cfg, out)
    wall = time.perf_counter() - t0
    with open(out / "manifest.txt", "w") as fh:
        fh.write(f"# bilevel-alpha {_version()}\n# wall_time_s {wall:.3f}\n")
        fh.write(cfg.to_text())
    return summary


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value configuration file")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--seed", help="random seed")
    shared.add_argument("--workers", help="maximum concurrent worker processes")
    shared.add_argument("--grid", help="alpha grid, e.g. 'zero,log:-12:3:98,1e7' or 'lin:0:0.1:50'")
    shared.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")

    parser = argparse.ArgumentParser(prog="bilevel-alpha",
                                     description="Learn and certify regularization parameters.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve-lower", parents=[shared], help="solve the lower-level problem")
    p.add_argument("--alpha", help="regularization parameter")
    p = sub.add_parser("check-positivity", parents=[shared], help="evaluate positivity conditions")
    p.add_argument("--expected", action="store_true", default=None,
                   help="use the dataset-averaged conditions")
    p = sub.add_parser("learn-alpha", parents=[shared], help="grid search for the optimal alpha")
    p.add_argument("--upper", choices=["mse", "predictive", "predictive-risk"])
    p = sub.add_parser("region-scan", parents=[shared], help="2-D region scan and area ratios")
    p.add_argument("--all", action="store_true", default=None,
                   help="all eight operator/regularizer combinations")
    sub.add_parser("noise-study", parents=[shared], help="learned alpha under Gaussian noise")
    sub.add_parser("large-scale", parents=[shared], help="Shepp-Logan deblurring experiment")
    return parser


def _overrides(args):
    ov = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        ov[key.strip()] = value.strip()
    flag_keys = {
        "out": "run.out", "seed": "run.seed", "workers": "run.workers", "grid": "grid.spec",
        "alpha": "solve.alpha", "expected": "check.expected", "upper": "upper.kind",
        "all": "scan.all",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            ov[key] = str(v).lower() if isinstance(v, bool) else v
    return ov


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, _overrides(args), command=args.command)
        summary = run(cfg)
    except BilevelError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_CODES["data"]
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
