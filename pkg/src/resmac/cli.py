"""Command-line entry point: solve, train, simulate, sweep, bench.

Every CSV written here embeds the config hash and master seed so results can
be traced back to the exact setup. Exit codes: 0 success, 2 configuration
error, 3 solver non-convergence, 4 model/environment inconsistency.
"""
from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .belief import InconsistentObservationError, build_initial_belief
from .benchmarks import run_benchmark
from .config import ALL_PROTOCOLS, ConfigError, ExperimentConfig
from .genie import ConvergenceError, GenieValueFunction, solve_via
from .model import ModelConfig
from .policy import GeniePolicy, TablePolicy
from .rtdp import ValueTable, train, write_learning_curve
from .sim import (
    CycleConsistencyError,
    FramePlan,
    SlotAccounting,
    TrafficConfig,
    run_simulation,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INCONSISTENT = 4


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for name in ("n_max", "m_cap", "support_limit", "d", "q", "epsilon", "trials",
                 "init", "n_terminals", "frame_mode", "frame_T", "rho",
                 "finish_mode", "slots", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "lam", None):
        cfg.lam = tuple(args.lam)
    if getattr(args, "seeds", None):
        cfg.seeds = tuple(args.seeds)
    if getattr(args, "protocols", None):
        cfg.protocols = tuple(args.protocols)
    if getattr(args, "b0", None):
        cfg.b0 = tuple(args.b0)
    if getattr(args, "force", False):
        cfg.force = True
    cfg.validate()
    return cfg


def _model_config(cfg: ExperimentConfig) -> ModelConfig:
    return ModelConfig(n_max=cfg.n_max, m_cap=cfg.m_cap)


def _load_policy(spec: str, cfg: ExperimentConfig):
    kind, _sep, path = spec.partition(":")
    if not path:
        raise ConfigError("policy must look like table:FILE or genie:FILE")
    if kind == "table":
        return TablePolicy(ValueTable.load(path), _model_config(cfg))
    if kind == "genie":
        return GeniePolicy(GenieValueFunction.load(path))
    raise ConfigError(f"unknown policy kind {kind!r}")


def cmd_via(args) -> int:
    cfg = _load_config(args)
    if args.max_sweeps is not None and args.max_sweeps < 1:
        raise ConfigError("max-sweeps must be at least 1")
    gvf = solve_via(_model_config(cfg), d=cfg.d, support_limit=cfg.support_limit,
                    epsilon=cfg.epsilon,
                    max_sweeps=args.max_sweeps or 10_000)
    gvf.save(args.out)
    print(f"solved {len(gvf.values) - 1} states in {len(gvf.sweep_diffs)} sweeps "
          f"-> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if cfg.trials == 0:
        print("warning: 0 trials requested, nothing to do", file=sys.stderr)
        return EXIT_OK
    model = _model_config(cfg)
    genie = None
    if cfg.init == "genie":
        if args.genie:
            genie = GenieValueFunction.load(args.genie)
        else:
            genie = solve_via(model, d=cfg.d, support_limit=cfg.support_limit,
                              epsilon=cfg.epsilon)
    table = ValueTable(q=cfg.q, d=cfg.d, support_limit=cfg.support_limit,
                       init_mode=cfg.init, genie=genie)
    b0 = build_initial_belief(cfg.b0)
    rng = np.random.default_rng([args.seed, 7])
    records = train(table, b0, cfg.trials, rng, model)
    table.save(args.table_out)
    meta = {"config_hash": cfg.config_hash(), "seed": args.seed,
            "q": cfg.q, "d": cfg.d, "init": cfg.init}
    if args.curve_out:
        write_learning_curve(args.curve_out, records, meta=meta)
    mean_cost = sum(r.result.slots_used for r in records) / len(records)
    print(f"trained {cfg.trials} trials, mean cost {mean_cost:.3f}, "
          f"table size {len(table)} -> {args.table_out}")
    return EXIT_OK


def _metrics_row(cfg, protocol, lam, frame_mode, frame_T, seed, metrics) -> dict:
    return {
        "protocol": protocol,
        "lambda": lam,
        "frame_mode": frame_mode,
        "frame_T": frame_T if frame_mode == "fixed" else "",
        "rho": cfg.rho,
        "gamma": f"{metrics.gamma:.6f}",
        "gamma_raw": f"{metrics.gamma_raw:.6f}",
        "tau": "" if metrics.tau is None else f"{metrics.tau:.4f}",
        "delivered": metrics.delivered_packets,
        "generated": metrics.generated_packets,
        "total_slots": metrics.total_slots,
        "seed": seed,
        "config_hash": cfg.config_hash(),
    }


_CSV_FIELDS = ["protocol", "lambda", "frame_mode", "frame_T", "rho", "gamma",
               "gamma_raw", "tau", "delivered", "generated", "total_slots",
               "seed", "config_hash"]


def _write_rows(path, rows, cfg, master_seed) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.config_hash()}\n")
        fh.write(f"# master_seed={master_seed}\n")
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _one_run(cfg: ExperimentConfig, protocol: str, lam: float, frame_mode: str,
             frame_T: int, seed: int, policy_spec: str | None,
             events: list | None = None) -> dict:
    traffic = TrafficConfig(lam=lam, n_terminals=cfg.n_terminals)
    accounting = SlotAccounting(rho=cfg.rho, finish_mode=cfg.finish_mode)
    if protocol == "proposed":
        if not policy_spec:
            raise ConfigError("the proposed protocol needs --policy table:FILE "
                              "or genie:FILE")
        if cfg.n_terminals > cfg.n_max:
            raise ConfigError("n_terminals must not exceed n_max for the "
                              "proposed protocol")
        policy = _load_policy(policy_spec, cfg)
        frames = FramePlan(mode=frame_mode,
                           T=frame_T if frame_mode == "fixed" else None)
        metrics = run_simulation(traffic, frames, accounting, policy,
                                 cfg.slots, seed, _model_config(cfg),
                                 events=events)
    else:
        metrics = run_benchmark(protocol, traffic, cfg.slots, seed, accounting)
    return _metrics_row(cfg, protocol, lam, frame_mode, frame_T, seed, metrics)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    events = None
    if args.events_out:
        if len(cfg.lam) * len(cfg.seeds) != 1:
            raise ConfigError("--events-out needs exactly one rate and one seed")
        events = []
    rows = []
    for lam in cfg.lam:
        for seed in cfg.seeds:
            rows.append(_one_run(cfg, "proposed", lam, cfg.frame_mode,
                                 cfg.frame_T, seed, args.policy, events=events))
    _write_rows(args.out, rows, cfg, cfg.seeds[0])
    if events is not None:
        with open(args.events_out, "w", newline="") as fh:
            fh.write(f"# config_hash={cfg.config_hash()}\n")
            fh.write(f"# master_seed={cfg.seeds[0]}\n")
            writer = csv.writer(fh)
            writer.writerow(["slot", "event_type", "frame_id", "terminal_id"])
            writer.writerows(events)
        print(f"{len(events)} events -> {args.events_out}")
    print(f"{len(rows)} runs -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    rows = []
    for protocol in (args.protocol,):
        for lam in cfg.lam:
            for seed in cfg.seeds:
                rows.append(_one_run(cfg, protocol, lam, cfg.frame_mode,
                                     cfg.frame_T, seed, None))
    _write_rows(args.out, rows, cfg, cfg.seeds[0])
    print(f"{len(rows)} runs -> {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    grid = [(protocol, lam, cfg.frame_mode, cfg.frame_T, seed)
            for protocol in cfg.protocols
            for lam in cfg.lam
            for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_one_run, cfg, *spec, args.policy)
                       for spec in grid]
            rows = [f.result() for f in futures]  # gathered in grid order
    else:
        rows = [_one_run(cfg, *spec, args.policy) for spec in grid]
    _write_rows(args.out, rows, cfg, cfg.seeds[0])
    print(f"{len(rows)} runs -> {args.out}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (ini sections)")
    parser.add_argument("--n-max", dest="n_max", type=_positive_int)
    parser.add_argument("--m-cap", dest="m_cap", type=_positive_int)
    parser.add_argument("--support-limit", dest="support_limit", type=_positive_int)
    parser.add_argument("--d", type=_positive_int)
    parser.add_argument("--q", type=_positive_int)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--rho", type=_positive_int)
    parser.add_argument("--finish-mode", dest="finish_mode",
                        choices=("piggyback", "dedicated"))
    parser.add_argument("--slots", type=_positive_int)
    parser.add_argument("--lam", type=float, nargs="+")
    parser.add_argument("--seeds", type=int, nargs="+")
    parser.add_argument("--n-terminals", dest="n_terminals", type=_positive_int)
    parser.add_argument("--frame-mode", dest="frame_mode",
                        choices=("dynamic", "fixed"))
    parser.add_argument("--frame-T", dest="frame_T", type=_positive_int)
    parser.add_argument("--workers", type=_positive_int)
    parser.add_argument("--force", action="store_true",
                        help="run even when lambda*rho exceeds 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resmac",
        description="Tree-splitting reservation MAC: solver, trainer, simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_via = sub.add_parser("via", help="solve the fully observed game exactly")
    _add_common(p_via)
    p_via.add_argument("--max-sweeps", dest="max_sweeps", type=_positive_int)
    p_via.add_argument("--out", required=True)
    p_via.set_defaults(func=cmd_via)

    p_train = sub.add_parser("train", help="learn a belief-value table")
    _add_common(p_train)
    p_train.add_argument("--trials", type=int)
    p_train.add_argument("--init", choices=("zero", "genie"))
    p_train.add_argument("--genie", help="pre-solved genie value function file")
    p_train.add_argument("--b0", type=float, nargs="+",
                         help="initial distribution over 1..k active terminals")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--table-out", dest="table_out", required=True)
    p_train.add_argument("--curve-out", dest="curve_out")
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="closed-loop run of the proposed protocol")
    _add_common(p_sim)
    p_sim.add_argument("--policy", required=True, help="table:FILE or genie:FILE")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--events-out", dest="events_out",
                       help="per-slot event log CSV (single rate and seed only)")
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="run one benchmark protocol")
    _add_common(p_bench)
    p_bench.add_argument("--protocol", required=True,
                         choices=("aloha", "stack", "csma_ca"))
    p_bench.add_argument("--out", required=True)
    p_bench.set_defaults(func=cmd_bench)

    p_sweep = sub.add_parser("sweep", help="grid of protocols x rates x seeds")
    _add_common(p_sweep)
    p_sweep.add_argument("--protocols", nargs="+", choices=ALL_PROTOCOLS)
    p_sweep.add_argument("--policy", help="table:FILE or genie:FILE (for proposed)")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (InconsistentObservationError, CycleConsistencyError) as exc:
        print(f"inconsistency: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT


if __name__ == "__main__":
    sys.exit(main())
