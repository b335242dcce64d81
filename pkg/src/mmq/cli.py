"""Command-line interface and file output.

Exit status: 0 on success or verification PASS, 1 on verification FAIL,
2 on input or configuration errors. Every run writes the resolved
configuration (defaults filled) next to its outputs so results are
reproducible from the output directory alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import RunConfig, parse_config, serialize_config
from .ctmc import chain_summary
from .errors import ToolkitError
from .limits import fluid_limit, ou_diffusion, ou_drift, ou_moments
from .network import averaged_rates
from .replication import resolve_workers, run_replications
from .simulate import build_scaled_system, initial_condition, simulate, uniform_grid
from .verify import (
    VerificationReport,
    verify_diffusion,
    verify_equivalence,
    verify_fluid,
    verify_model3,
    verify_occupation,
)

log = logging.getLogger("mmq")

VERIFY_COMMANDS = (
    "verify-fluid",
    "verify-occupation",
    "verify-diffusion",
    "verify-equivalence",
    "verify-model3",
)
COMMANDS = (
    "validate",
    "chain-summary",
    "fluid",
    "ou-moments",
    "simulate",
    "reduce-model3",
) + VERIFY_COMMANDS


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_fluid_csv(path: str, grid: np.ndarray, rho: np.ndarray) -> None:
    n_q = rho.shape[1] if rho.size else 0
    header = ["t"] + [f"rho_{k + 1}" for k in range(n_q)]
    write_csv(path, header, (np.concatenate([[t], r]) for t, r in zip(grid, rho)))


def write_moments_csv(path: str, grid: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> None:
    n_q = mean.shape[1]
    header = ["t"] + [f"m_{k + 1}" for k in range(n_q)]
    header += [f"V_{i + 1}{j + 1}" for i in range(n_q) for j in range(i, n_q)]
    iu = np.triu_indices(n_q)

    def rows():
        for g in range(grid.shape[0]):
            yield np.concatenate([[grid[g]], mean[g], cov[g][iu]])

    write_csv(path, header, rows())


def write_trajectories_csv(path: str, runs) -> None:
    """Long-format trajectory table: one row per (replication, grid epoch)."""
    header_written = False
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rep, grid, j_states, q_on_grid in runs:
            if not header_written:
                n_q = q_on_grid.shape[1]
                header = ["rep", "t", "j_state"] + [f"q_{k + 1}" for k in range(n_q)]
                fh.write(",".join(header) + "\n")
                header_written = True
            for g in range(grid.shape[0]):
                vals = [str(rep), _fmt(grid[g]), str(int(j_states[g]) + 1)]
                vals += [str(int(v)) for v in q_on_grid[g]]
                fh.write(",".join(vals) + "\n")


def write_report(out_dir: str, report: VerificationReport, formats) -> None:
    if "json" in formats:
        with open(os.path.join(out_dir, f"{report.check}.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    with open(os.path.join(out_dir, f"{report.check}.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")
    if report.samples is not None:
        _write_samples_csv(os.path.join(out_dir, f"{report.check}_samples.csv"), report)


def _write_samples_csv(path: str, report: VerificationReport) -> None:
    """Raw per-replication statistics in long format for external plotting."""
    samples = report.samples
    if report.check in ("verify_fluid", "verify_equivalence"):
        key = "sup_error" if report.check == "verify_fluid" else "sup_gap"
        rows = (
            (rep, n, v)
            for n, values in samples[key].items()
            for rep, v in enumerate(values)
        )
        write_csv(path, ["rep", "n", key], rows)
    elif report.check == "verify_occupation":
        arr = np.asarray(samples["scaled_deviation"])
        header = ["rep"] + [f"g_{i + 1}" for i in range(arr.shape[1])]
        write_csv(path, header, ((r, *arr[r]) for r in range(arr.shape[0])))
    elif report.check == "verify_diffusion":
        arr = np.asarray(samples["centered_path_at_epochs"])
        epochs = report.stats["epochs"]
        header = ["rep", "t"] + [f"q_{k + 1}" for k in range(arr.shape[2])]
        rows = (
            (r, epochs[e], *arr[r, e])
            for r in range(arr.shape[0])
            for e in range(arr.shape[1])
        )
        write_csv(path, header, rows)
    elif report.check == "verify_model3":
        rows = []
        for source, key in ((0, "network"), (1, "oracle")):
            arr = np.asarray(samples[key])
            rows.extend((r, source, arr[r, 0], arr[r, 1]) for r in range(arr.shape[0]))
        write_csv(path, ["rep", "source", "in_service", "departures"], rows)


def _log_resolved(cfg: RunConfig, out_dir: str) -> None:
    resolved = serialize_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))


def _cmd_validate(cfg: RunConfig, out_dir: str) -> int:
    beta = cfg.beta
    print(
        f"valid: L={cfg.network.n_queues} d={cfg.network.d} "
        f"alpha={cfg.alpha:g} beta={beta:g}"
    )
    return 0


def _cmd_chain_summary(cfg: RunConfig, out_dir: str) -> int:
    summary = chain_summary(
        cfg.network.gen,
        stationary_tol=cfg.tolerances["stationary_tol"],
        deviation_tol=cfg.tolerances["deviation_tol"],
    )
    payload = {
        "pi": summary.pi.tolist(),
        "deviation": summary.deviation.tolist(),
        "sigma": summary.sigma.tolist(),
    }
    with open(os.path.join(out_dir, "chain_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_fluid(cfg: RunConfig, out_dir: str) -> int:
    summary = chain_summary(cfg.network.gen)
    avg = averaged_rates(cfg.network, summary)
    fluid = fluid_limit(avg, cfg.rho0, cfg.horizon, cfg.grid_step)
    if "csv" in cfg.output_formats:
        write_fluid_csv(os.path.join(out_dir, "fluid.csv"), fluid.grid, fluid.rho)
    print(f"fluid path written: {fluid.grid.shape[0]} epochs")
    return 0


def _cmd_ou_moments(cfg: RunConfig, out_dir: str) -> int:
    summary = chain_summary(cfg.network.gen)
    avg = averaged_rates(cfg.network, summary)
    fluid = fluid_limit(avg, cfg.rho0, cfg.horizon, cfg.grid_step)
    drift = ou_drift(avg, fluid)
    diff = ou_diffusion(cfg.network, avg, summary, fluid, cfg.alpha)
    n_q = cfg.network.n_queues
    v0 = (
        np.diag(cfg.rho0)
        if (cfg.init_rule == "poisson" and cfg.beta == 0.5)
        else np.zeros((n_q, n_q))
    )
    moments = ou_moments(
        drift, diff, avg.M, np.zeros(n_q), v0, fluid.grid,
        psd_tol=cfg.tolerances["psd_tol"],
        poisson_active=cfg.alpha >= 1.0, modulation_active=cfg.alpha <= 1.0,
    )
    if "csv" in cfg.output_formats:
        write_moments_csv(
            os.path.join(out_dir, "moments.csv"), fluid.grid, moments.mean_m, moments.cov_V
        )
    print(f"moment paths written: {fluid.grid.shape[0]} epochs")
    return 0


def _cmd_simulate(cfg: RunConfig, out_dir: str) -> int:
    sys_n = build_scaled_system(cfg.network, cfg.alpha, cfg.n_list[0], cfg.init_rule)
    grid = uniform_grid(cfg.horizon, cfg.grid_step)

    def rep(i, rng):
        q0 = initial_condition(sys_n, cfg.rho0, rng)
        bundle = simulate(
            sys_n, cfg.horizon, grid, rng, q0=q0, record_events=False
        )
        j_states = bundle.chain.states[
            np.searchsorted(bundle.chain.times, grid, side="right") - 1
        ]
        return (i, grid, j_states, bundle.queue_on_grid)

    workers = resolve_workers(cfg.worker_count)
    runs = run_replications(rep, cfg.reps, cfg.seed, workers)
    if "csv" in cfg.output_formats:
        write_trajectories_csv(os.path.join(out_dir, "trajectories.csv"), runs)
    print(f"simulated {cfg.reps} replication(s) at n={sys_n.n}")
    return 0


def _cmd_reduce_model3(cfg: RunConfig, out_dir: str) -> int:
    if cfg.model3 is None:
        raise ToolkitError("reduce-model3 needs a model3 block in the config")
    net = cfg.network
    payload = {
        "network": {
            "generator": net.gen.rates.tolist(),
            "lambda": net.lam.tolist(),
            "mu": net.mu.tolist(),
            "sinks": [net.n_queues - 1],
        }
    }
    path = os.path.join(out_dir, "reduced_network.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"reduced network written to {path} (L={net.n_queues})")
    return 0


def _cmd_verify(cmd: str, cfg: RunConfig, out_dir: str) -> int:
    workers = resolve_workers(cfg.worker_count)
    tol = cfg.tolerances
    keep = "csv" in cfg.output_formats
    if cmd == "verify-fluid":
        report = verify_fluid(
            cfg.network, cfg.alpha, cfg.n_list, cfg.reps, cfg.horizon,
            cfg.grid_step, cfg.seed, rho0=cfg.rho0,
            cap=tol["fluid_cap"], keep_samples=keep, workers=workers,
        )
    elif cmd == "verify-occupation":
        report = verify_occupation(
            cfg.network.gen, cfg.alpha, cfg.n_list[-1], cfg.reps, cfg.horizon,
            cfg.seed, rtol=tol["occupation_rtol"],
            n_boot=int(tol["bootstrap_resamples"]),
            reference_scale=tol["reference_scale"], keep_samples=keep,
            workers=workers,
        )
    elif cmd == "verify-diffusion":
        report = verify_diffusion(
            cfg.network, cfg.alpha, cfg.n_list[-1], cfg.reps, cfg.horizon,
            cfg.grid_step, cfg.seed, rho0=cfg.rho0, init_rule=cfg.init_rule,
            rtol=tol["diffusion_rtol"], n_boot=int(tol["bootstrap_resamples"]),
            reference_scale=tol["reference_scale"], keep_samples=keep,
            workers=workers,
        )
    elif cmd == "verify-equivalence":
        report = verify_equivalence(
            cfg.network, cfg.alpha, cfg.n_list, cfg.reps, cfg.horizon,
            cfg.grid_step, cfg.seed, rho0=cfg.rho0, keep_samples=keep,
            workers=workers,
        )
    else:
        if cfg.model3 is None:
            raise ToolkitError("verify-model3 needs a model3 block in the config")
        report = verify_model3(cfg.model3, cfg.horizon, cfg.reps, cfg.seed,
                               keep_samples=keep, workers=workers)

    write_report(out_dir, report, cfg.output_formats)
    print(report.to_text())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmq",
        description="Markov-modulated infinite-server network toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", required=True, help="path to JSON run config")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--reps", type=int, default=None, help="replication override")
        p.add_argument("--n", type=int, default=None, help="scale index override")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.reps is not None:
            cfg.reps = args.reps
        if args.n is not None:
            cfg.n_list = [args.n]
        if args.out is not None:
            cfg.output_dir = args.out
        out_dir = cfg.output_dir
        _log_resolved(cfg, out_dir)

        if args.command == "validate":
            return _cmd_validate(cfg, out_dir)
        if args.command == "chain-summary":
            return _cmd_chain_summary(cfg, out_dir)
        if args.command == "fluid":
            return _cmd_fluid(cfg, out_dir)
        if args.command == "ou-moments":
            return _cmd_ou_moments(cfg, out_dir)
        if args.command == "simulate":
            return _cmd_simulate(cfg, out_dir)
        if args.command == "reduce-model3":
            return _cmd_reduce_model3(cfg, out_dir)
        return _cmd_verify(args.command, cfg, out_dir)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
