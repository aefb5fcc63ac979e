"""Command line entry point: ``dpfpca <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..bingham import BinghamParameter, run_chain, write_trace_jsonl
from ..clt import CltScenario, hilbert_clt_experiment, run_clt_experiment
from ..errors import DataError, NumericalError
from ..expmech import penalized_mean_objective
from ..fpca import FPCA_SENSITIVITY, ChainConfig, fpca_objective_spec, private_fpca
from ..hilbert import project
from ..streams import stream
from .config import Config, load_config
from .curves_io import load_curves_csv, write_curves_csv
from .grid import ScenarioGrid, run_scenario_grid
from .recipes import build_basis_and_sigma
from .simulate import SimulationSpec, generate_kl_dataset
from .verify import dp_ratio_report

logger = logging.getLogger("dpfpca")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=default if suppress else 0, help="master seed (default 0)")
    p.add_argument("--config", default=default if suppress else None, help="INI config file")
    p.add_argument("--out", default=default if suppress else None, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpfpca", description="Differentially private functional PCA.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a Karhunen-Loeve curve dataset (CSV)")
    p.add_argument("--n", type=int, help="sample size (overrides [simulation] n)")

    p = sub.add_parser("fit", parents=[common], help="release private components for a curve CSV")
    p.add_argument("data", help="curve CSV (first row = grid)")
    p.add_argument("--no-header", action="store_true", help="file has no grid row; use a uniform grid on [0, 1]")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--burn-in", type=int)

    p = sub.add_parser("grid", parents=[common], help="run the (n, epsilon) scenario grid")
    p.add_argument("--workers", type=int, help="worker processes (default: [grid] workers, 0 = all cores)")
    p.add_argument("--burn-in", type=int)
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("clt", parents=[common], help="penalized-mean CLT experiment (JSON + CSV)")
    p.add_argument("--hilbert", action="store_true", help="also report the exact finite-n covariance")

    p = sub.add_parser("sample-bmvmf", parents=[common], help="Gibbs chain for exp(tr(V'AV)) from an A matrix CSV")
    p.add_argument("matrix", help="square symmetric A, one row per line, no header")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--keep", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--trace", help="write tr(V'AV) per step as JSON lines")

    p = sub.add_parser("verify-dp", parents=[common], help="randomized check of the privacy ratio bound")
    p.add_argument("data", nargs="?", help="curve CSV; a simulated dataset is used when omitted")
    p.add_argument("--objective", choices=("fpca", "penalized_mean"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--probes", type=int)
    return parser


def _pick(value, cfg_value):
    return cfg_value if value is None else value


def _write_text(out, text: str):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _require_out(args):
    if args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


def _simulation_spec(cfg: Config, seed: int, n=None) -> SimulationSpec:
    return SimulationSpec(
        n=_pick(n, cfg.getint("simulation", "n")),
        grid_size=cfg.getint("simulation", "grid_size"),
        p=cfg.getint("simulation", "p"),
        score_sd=cfg.getfloat("simulation", "score_sd"),
        noise_sd=cfg.getfloat("simulation", "noise_sd"),
        fourth_term_boost=cfg.getfloat("simulation", "fourth_term_boost"),
        mean=cfg.get("simulation", "mean"),
        seed=seed,
    )


def cmd_simulate(args, cfg: Config) -> int:
    d = generate_kl_dataset(_simulation_spec(cfg, args.seed, args.n))
    if args.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow([repr(float(t)) for t in d.grid.points])
        w.writerows([[repr(float(v)) for v in row] for row in d.values])
    else:
        write_curves_csv(args.out, d.grid.points, d.values)
    return EXIT_OK


def _clip_mode(cfg: Config):
    mode = cfg.get("mechanism", "clip").strip()
    if mode not in ("per_record", "global"):
        raise DataError(f"[mechanism] clip must be 'per_record' or 'global', not {mode!r}")
    return mode


def cmd_fit(args, cfg: Config) -> int:
    out = _require_out(args)
    table = load_curves_csv(args.data, header=not args.no_header)
    data = table.to_dataset(clip=_clip_mode(cfg), centered=cfg.getbool("mechanism", "center"))
    basis, sigma, info = build_basis_and_sigma(data.grid, cfg)
    eps = _pick(args.epsilon, cfg.getfloat("mechanism", "epsilon"))
    k = _pick(args.k, cfg.getint("mechanism", "k"))
    chain = ChainConfig(
        burn_in=_pick(args.burn_in, cfg.getint("chain", "burn_in")),
        keep=cfg.getint("chain", "keep"),
        thin=cfg.getint("chain", "thin"),
        seed=args.seed,
    )
    res = private_fpca(data, basis, sigma, k, eps, chain)
    comps = np.array([c.values for c in res.components(basis)])
    write_curves_csv(out, table.abscissae, comps)
    meta = {
        "epsilon": eps,
        "delta_sensitivity": FPCA_SENSITIVITY,
        "k": k,
        "m": basis.m,
        "sigma": info["sigma"],
        "basis": info,
        "burn_in": chain.burn_in,
        "chain_length": res.chain.metadata["steps"],
        "seed": args.seed,
        "clip": _clip_mode(cfg),
        "centered": cfg.getbool("mechanism", "center"),
        "source": table.path,
        "report": asdict(res.report),
    }
    out.with_name(out.name + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(asdict(res.report), sort_keys=True))
    return EXIT_OK


def scenario_grid_from_config(cfg: Config, burn_in=None, replicates=None) -> ScenarioGrid:
    if cfg.get("basis", "kind") != "fourier" or cfg.get("sigma", "kind") != "power_law":
        raise DataError("the scenario grid uses a Fourier basis with a power-law Sigma")
    return ScenarioGrid(
        n_values=cfg.getints("grid", "n_values"),
        epsilon_values=cfg.getfloats("grid", "epsilon_values"),
        replicates=_pick(replicates, cfg.getint("grid", "replicates")),
        k=cfg.getint("mechanism", "k"),
        m=cfg.getint("basis", "m"),
        burn_in=_pick(burn_in, cfg.getint("chain", "burn_in")),
        sigma_exponent=cfg.getfloat("sigma", "exponent"),
        simulation=_simulation_spec(cfg, 0),
    )


def cmd_grid(args, cfg: Config) -> int:
    out = _require_out(args)
    grid = scenario_grid_from_config(cfg, args.burn_in, args.replicates)
    workers = _pick(args.workers, cfg.getint("grid", "workers"))
    metrics, summary = run_scenario_grid(grid, out, seed=args.seed, workers=workers or None)
    print(f"wrote {metrics} and {summary}")
    return EXIT_OK


def clt_scenario_from_config(cfg: Config) -> CltScenario:
    return CltScenario(
        dimension=cfg.getint("clt", "dimension"),
        lam=cfg.getfloat("clt", "lam"),
        base_var=cfg.getfloats("clt", "base_var"),
        data_mean=cfg.getfloats("clt", "data_mean"),
        data_sd=cfg.getfloat("clt", "data_sd"),
        epsilon=cfg.getfloat("clt", "epsilon"),
        delta=cfg.getfloat("clt", "delta"),
        sample_sizes=cfg.getints("clt", "sample_sizes"),
        replicates=cfg.getint("clt", "replicates"),
        truncate=cfg.getbool("clt", "truncate"),
    )


def cmd_clt(args, cfg: Config) -> int:
    scenario = clt_scenario_from_config(cfg)
    run = hilbert_clt_experiment if args.hilbert else run_clt_experiment
    report = run(scenario, args.seed)
    _write_text(args.out, report.to_json() + "\n")
    if args.out is not None:
        Path(args.out).with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if a.shape[0] != a.shape[1]:
        raise DataError(f"{path}: A must be square, got {a.shape[0]} x {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{path}: A has non-finite entries")
    return a


def cmd_sample_bmvmf(args, cfg: Config) -> int:
    param = BinghamParameter(_read_matrix(args.matrix), args.k)
    res = run_chain(
        param, args.k,
        burn_in=_pick(args.burn_in, cfg.getint("chain", "burn_in")),
        keep=_pick(args.keep, cfg.getint("chain", "keep")),
        thin=_pick(args.thin, cfg.getint("chain", "thin")),
        seed=args.seed,
    )
    m, k = param.m, args.k
    lines = [",".join(f"v{i + 1}_{j + 1}" for j in range(k) for i in range(m))]
    for s in res.samples:
        lines.append(",".join(repr(float(v)) for v in s.T.ravel()))
    _write_text(args.out, "\n".join(lines) + "\n")
    if args.trace:
        write_trace_jsonl(args.trace, res.trace)
    logger.info("chain metadata: %s", res.metadata)
    return EXIT_OK


def cmd_verify_dp(args, cfg: Config) -> int:
    if args.data is None:
        data = generate_kl_dataset(_simulation_spec(cfg, args.seed))
    else:
        data = load_curves_csv(args.data).to_dataset(clip="per_record")
    basis, sigma, _ = build_basis_and_sigma(data.grid, cfg)
    coefs, _ = project(data, basis)
    objective = _pick(args.objective, cfg.get("verify", "objective"))
    if objective == "fpca":
        obj = fpca_objective_spec(cfg.getint("mechanism", "k"))
    elif objective == "penalized_mean":
        obj = penalized_mean_objective(cfg.getfloat("verify", "lam"), sigma)
    else:
        raise DataError(f"unknown objective {objective!r}")
    report = dp_ratio_report(
        obj, coefs,
        epsilon=_pick(args.epsilon, cfg.getfloat("verify", "epsilon")),
        trials=_pick(args.trials, cfg.getint("verify", "trials")),
        probes=_pick(args.probes, cfg.getint("verify", "probes")),
        rng=stream(args.seed, 7),
        k=cfg.getint("mechanism", "k"),
    )
    _write_text(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "grid": cmd_grid,
    "clt": cmd_clt,
    "sample-bmvmf": cmd_sample_bmvmf,
    "verify-dp": cmd_verify_dp,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("dpfpca: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"dpfpca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ValueError, OSError) as exc:
        print(f"dpfpca: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
