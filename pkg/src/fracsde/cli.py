"""``fracsde`` command line: simulate, table1, table2, compare, homogenize.

Each command resolves its configuration, writes CSV artifacts under the
output directory and a ``<command>_manifest.json`` holding the resolved
config, its hash, provenance and wall-clock time.  CSV bodies depend only on
the hashed config, so reruns are byte-identical.

Exit codes: 0 success, 2 config/usage error, 3 numerical/model error,
4 capacity error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, brownian, experiment, homogenize, model, solver
from .config import COMMANDS, RunConfig, load_config, locate
from .errors import AveragingDivergenceError, CapacityError, ConfigError, FsdeError
from .frackernel import check_alpha

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (INI style)")
    common.add_argument("--output", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides seed)")
    common.add_argument("--paths", type=int, help="number of sample paths (overrides n_paths)")
    common.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
    parser = _Parser(prog="fracsde", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fracsde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "solve one ensemble and export every trajectory",
        "table1": "step-size convergence study",
        "table2": "scale-parameter sensitivity study",
        "compare": "original vs homogenized error curves",
        "homogenize": "averaged coefficients and averaging profiles",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


# ------------------------------------------------------------ validation

def _bad(cfg: RunConfig, key: str, message: str):
    raise ConfigError(f"{locate(cfg, key)}: field {key!r}: {message}", field=key)


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["model"] not in model.REGISTRY:
        _bad(cfg, "model", f"unknown model {v['model']!r}; registered labels: {', '.join(model.REGISTRY)}")
    alphas = v.get("alpha_list", [v.get("alpha")])
    key = "alpha_list" if "alpha_list" in v else "alpha"
    for a in alphas:
        try:
            check_alpha(a)
        except FsdeError as exc:
            _bad(cfg, key, str(exc))
    for key in ("epsilon", "horizon_T", "dt", "dt_coarse", "dt_ref", "T1_start", "tol"):
        if key in v and not (v[key] > 0 and math.isfinite(v[key])):
            _bad(cfg, key, f"must be finite and > 0, got {v[key]!r}")
    for key in ("dt_list", "eps_list", "t1_grid"):
        if key in v and not all(x > 0 and math.isfinite(x) for x in v[key]):
            _bad(cfg, key, "entries must be finite and > 0")
    if v["n_paths"] < 1:
        _bad(cfg, "n_paths", "must be >= 1")
    if not 0 <= v["seed"] < 2**64:
        _bad(cfg, "seed", "must be an unsigned 64-bit integer")
    if v["threads"] < 0:
        _bad(cfg, "threads", "must be >= 0 (0 = all cores)")
    if cfg.command == "simulate" and v["n_steps"] < 1:
        _bad(cfg, "n_steps", "must be >= 1")
    if cfg.command == "compare" and v["homogenized"] not in ("auto", "registered", "numeric"):
        _bad(cfg, "homogenized", "must be auto, registered or numeric")
    if cfg.command == "homogenize" and not v["probe_upper"] > v["probe_lower"]:
        _bad(cfg, "probe_upper", "must exceed probe_lower")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.command, args.config)
    overrides = {"output_dir": args.output, "seed": args.seed, "n_paths": args.paths, "threads": args.threads}
    values = dict(cfg.values)
    values.update({k: val for k, val in overrides.items() if val is not None})
    cfg = RunConfig(cfg.command, values, cfg.source)
    _validate(cfg)
    return cfg


def _threads(cfg: RunConfig) -> int:
    return cfg["threads"] or (os.cpu_count() or 1)


# --------------------------------------------------------------- outputs

def _header_lines(cfg: RunConfig) -> list:
    return [f"config_hash: {cfg.hash()}", f"generator: {brownian.GENERATOR_ID}"]


def _write_manifest(cfg: RunConfig, outdir: Path, outputs: list, started: float, extra=None) -> Path:
    manifest = {
        "command": cfg.command,
        "config": cfg.values,
        "config_source": cfg.source,
        "config_hash": cfg.hash(),
        "provenance": {
            "package": "fracsde",
            "version": __version__,
            "generator": brownian.GENERATOR_ID,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": outputs,
        "started_utc": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = outdir / f"{cfg.command}_manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tag(x: float) -> str:
    return f"{x:g}".replace("+", "")


# -------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig) -> list:
    v = cfg.values
    problem = model.make_problem(v["model"], v["alpha"], v["epsilon"], v["horizon_T"])
    n = v["n_steps"]
    lattice = brownian.generate(v["seed"], v["n_paths"], n, problem.horizon_T / n, problem.noise_dim,
                                threads=_threads(cfg))
    ens = solver.em_solve(problem, lattice, threads=_threads(cfg))
    path = _outdir(cfg) / "ensemble.csv"
    solver.write_ensemble_csv(ens, path, _header_lines(cfg))
    return [str(path)]


def cmd_table1(cfg: RunConfig) -> list:
    v = cfg.values
    outputs = []
    for a in v["alpha_list"]:
        problem = model.make_problem(v["model"], a, v["epsilon"], v["horizon_T"])
        table = experiment.dt_study(problem, v["dt_list"], v["n_paths"], v["seed"], threads=_threads(cfg))
        path = _outdir(cfg) / f"table1_alpha_{_tag(a)}.csv"
        experiment.write_table_csv(table, path, _header_lines(cfg))
        outputs.append(str(path))
    return outputs


def cmd_table2(cfg: RunConfig) -> list:
    v = cfg.values
    outputs = []
    for a in v["alpha_list"]:
        def factory(e, a=a):
            return model.make_problem(v["model"], a, e, v["horizon_T"])

        table = experiment.eps_study(factory, v["eps_list"], v["dt"], v["n_paths"], v["seed"],
                                     threads=_threads(cfg))
        path = _outdir(cfg) / f"table2_alpha_{_tag(a)}.csv"
        experiment.write_table_csv(table, path, _header_lines(cfg))
        outputs.append(str(path))
    return outputs


def _homogenized_for(cfg: RunConfig, problem):
    mode = cfg["homogenized"]
    label = model.HOMOGENIZED_COUNTERPART.get(cfg["model"])
    if mode == "registered" and label is None:
        raise ConfigError(f"model {cfg['model']!r} has no registered homogenized counterpart; "
                          "set homogenized = numeric", field="homogenized")
    if label is not None and mode != "numeric":
        return model.make_problem(label, problem.alpha, model.NO_FAST_TIME, problem.horizon_T)
    try:
        return homogenize.build_homogenized_problem(problem)
    except AveragingDivergenceError as exc:
        raise AveragingDivergenceError(
            f"{exc}. Model {cfg['model']!r} has no time average, so there is no homogenized "
            "problem to compare against; choose a model with bounded periodic or decaying "
            "fast-time dependence.", gap=exc.gap, horizon=exc.horizon,
        ) from None


def cmd_compare(cfg: RunConfig) -> list:
    v = cfg.values
    outputs = []
    hom = None
    for eps in v["eps_list"]:
        problem = model.make_problem(v["model"], v["alpha"], eps, v["horizon_T"])
        if hom is None:
            hom = _homogenized_for(cfg, problem)
        curves = experiment.homogenization_comparison(problem, hom, v["dt_coarse"], v["dt_ref"],
                                                      v["n_paths"], v["seed"], threads=_threads(cfg))
        path = _outdir(cfg) / f"compare_eps_{_tag(eps)}.csv"
        experiment.write_curves_csv(curves, path, _header_lines(cfg))
        outputs.append(str(path))
    return outputs


def cmd_homogenize(cfg: RunConfig):
    v = cfg.values
    problem = model.make_problem(v["model"], v["alpha"], v["epsilon"], v.get("horizon_T", 1.0))
    box = model.StateBox((v["probe_lower"],) * problem.state_dim, (v["probe_upper"],) * problem.state_dim)
    averaging = homogenize.AveragingConfig(
        T1_start=v["T1_start"], tol=v["tol"], n_quad=v["n_quad"], x_probe_box=box,
        probe_points=v["probe_points"], max_doublings=v["max_doublings"],
        use_closed_form=v["use_closed_form"],
    )
    hom = homogenize.build_homogenized_problem(problem, averaging)
    fbar, gbar = hom.drift, hom.diffusion
    grid = box.grid(v["probe_points"])
    t1 = v["t1_grid"]
    nq = v["profile_n_quad"]
    profiles = (
        homogenize.weak_profile(problem.drift, fbar, problem.alpha, "drift", t1, grid, nq),
        homogenize.weak_profile(problem.diffusion, gbar, problem.alpha, "diffusion", t1, grid, nq),
        homogenize.strong_profile(problem.drift, fbar, t1, grid, nq, kind="drift"),
        homogenize.strong_profile(problem.diffusion, gbar, t1, grid, nq, kind="diffusion"),
    )
    out = _outdir(cfg)
    header = _header_lines(cfg)
    prof_path = out / "profiles.csv"
    homogenize.write_profile_csv(prof_path, *profiles, header_comments=header)

    coef_path = out / "averaged_coefficients.csv"
    f_nodes = fbar.node_values.reshape(grid.shape[0], -1)
    g_nodes = gbar.node_values.reshape(grid.shape[0], -1)
    with open(coef_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        cols = [f"x_{k + 1}" for k in range(grid.shape[1])]
        cols += [f"drift_{k + 1}" for k in range(f_nodes.shape[1])]
        cols += [f"diffusion_{k + 1}" for k in range(g_nodes.shape[1])]
        fh.write(",".join(cols) + "\n")
        for x, f, g in zip(grid, f_nodes, g_nodes):
            fh.write(",".join(f"{val:.17g}" for val in (*x, *f, *g)) + "\n")

    try:
        step = homogenize.balanced_step(problem.alpha, problem.epsilon)
        step_note = None
    except FsdeError as exc:
        step, step_note = None, str(exc)
    report = {
        "config_hash": cfg.hash(),
        "model": problem.label,
        "alpha": problem.alpha,
        "epsilon": problem.epsilon,
        "balanced_step": step,
        "balanced_step_note": step_note,
        "drift_certificate": vars(fbar.certificate),
        "diffusion_certificate": vars(gbar.certificate),
        "drift_closed_form_deviation": fbar.closed_form_deviation(),
        "diffusion_closed_form_deviation": gbar.closed_form_deviation(),
    }
    report_path = out / "homogenize_report.json"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    return [str(prof_path), str(coef_path), str(report_path)]


COMMAND_FUNCS = {
    "simulate": cmd_simulate,
    "table1": cmd_table1,
    "table2": cmd_table2,
    "compare": cmd_compare,
    "homogenize": cmd_homogenize,
}


def main(argv=None) -> int:
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        cfg = _resolve(args)
        outputs = COMMAND_FUNCS[cfg.command](cfg)
        _write_manifest(cfg, _outdir(cfg), outputs, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except FsdeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in outputs:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
