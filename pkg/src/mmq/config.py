"""JSON run configuration: schema, parsing, and serialization.

Matrices are nested row-major arrays; queue and state indices are
0-based. Exactly one of the ``network`` and ``model3`` blocks must be
present; a ``model3`` block is reduced to its class-queue network at
parse time so downstream code only ever sees a network.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ctmc import validate_generator
from .errors import DimensionMismatch, MissingRequired, ParseError, UnknownField
from .network import Model3Spec, NetworkSpec, reduce_model3, validate_network
from .simulate import beta_exponent

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "fluid_cap": 0.05,
    "occupation_rtol": 0.10,
    "diffusion_rtol": 0.10,
    "bootstrap_resamples": 200,
    "reference_scale": 1.0,
    "row_sum_tol": 1e-12,
    "edge_eps": 1e-14,
    "stationary_tol": 1e-10,
    "deviation_tol": 1e-9,
    "psd_tol": 1e-9,
}

_TOP_KEYS = {"schema_version", "network", "model3", "scaling", "run", "tolerances", "output"}
_NETWORK_KEYS = {"generator", "lambda", "mu", "lambda_hat", "mu_hat", "sinks"}
_MODEL3_KEYS = {"generator", "lambda_star", "kappa_star", "mu_star"}
_SCALING_KEYS = {"alpha", "n", "n_list", "init_rule", "rho0"}
_RUN_KEYS = {"T", "grid_step", "reps", "seed", "worker_count"}
_OUTPUT_KEYS = {"directory", "formats"}


@dataclass
class RunConfig:
    """Fully validated configuration with defaults filled in."""

    raw: dict
    network: NetworkSpec
    model3: Model3Spec | None
    alpha: float
    n_list: list[int]
    init_rule: str
    rho0: np.ndarray
    horizon: float
    grid_step: float
    reps: int
    seed: int
    worker_count: int | None
    tolerances: dict
    output_dir: str
    output_formats: list[str]

    @property
    def beta(self) -> float:
        return beta_exponent(self.alpha)


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise MissingRequired(f"missing required field '{key}' in {where}")
    return block[key]


def _reject_unknown(block: dict, allowed: set, where: str):
    for key in block:
        if key not in allowed:
            raise UnknownField(f"unknown field '{key}' in {where}")


def _check_sinks(lam: np.ndarray, mu: np.ndarray, sinks) -> None:
    for k in sinks:
        if not 0 <= int(k) < lam.shape[0]:
            raise DimensionMismatch(f"sink index {k} outside 0..{lam.shape[0] - 1}")
        if np.any(lam[int(k)] != 0.0) or np.any(mu[int(k)] != 0.0):
            raise DimensionMismatch(
                f"queue {k} is marked as a sink but has nonzero arrival or "
                f"outgoing rates"
            )


def parse_config_dict(doc: dict, *, where: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: top level must be an object")
    _reject_unknown(doc, _TOP_KEYS, where)
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(f"{where}: unsupported schema_version {version}")

    tolerances = dict(DEFAULT_TOLERANCES)
    tol_block = doc.get("tolerances", {})
    _reject_unknown(tol_block, set(DEFAULT_TOLERANCES), "tolerances block")
    tolerances.update(tol_block)

    has_network = "network" in doc
    has_model3 = "model3" in doc
    if has_network == has_model3:
        raise MissingRequired(
            f"{where}: exactly one of 'network' and 'model3' must be present"
        )

    model3 = None
    if has_network:
        block = doc["network"]
        _reject_unknown(block, _NETWORK_KEYS, "network block")
        gen = validate_generator(
            _require(block, "generator", "network block"),
            row_sum_tol=tolerances["row_sum_tol"],
            edge_eps=tolerances["edge_eps"],
        )
        lam = np.array(_require(block, "lambda", "network block"), dtype=float)
        mu = np.array(_require(block, "mu", "network block"), dtype=float)
        if lam.ndim != 2:
            raise DimensionMismatch("network.lambda must be an L x d matrix")
        network = validate_network(
            gen, lam, mu, block.get("lambda_hat"), block.get("mu_hat")
        )
        _check_sinks(network.lam, network.mu, block.get("sinks", []))
    else:
        block = doc["model3"]
        _reject_unknown(block, _MODEL3_KEYS, "model3 block")
        gen = validate_generator(
            _require(block, "generator", "model3 block"),
            row_sum_tol=tolerances["row_sum_tol"],
            edge_eps=tolerances["edge_eps"],
        )
        model3 = Model3Spec(
            gen=gen,
            lambda_star=np.array(_require(block, "lambda_star", "model3 block"), dtype=float),
            kappa_star=np.array(_require(block, "kappa_star", "model3 block"), dtype=float),
            mu_star=np.array(_require(block, "mu_star", "model3 block"), dtype=float),
        )
        network = reduce_model3(model3)

    scaling = doc.get("scaling", {})
    _reject_unknown(scaling, _SCALING_KEYS, "scaling block")
    alpha = float(scaling.get("alpha", 1.0))
    beta_exponent(alpha)
    if "n_list" in scaling and "n" in scaling:
        raise ParseError("scaling block: give either 'n' or 'n_list', not both")
    if "n_list" in scaling:
        n_list = [int(v) for v in scaling["n_list"]]
    else:
        n_list = [int(scaling.get("n", 100))]
    if any(n < 1 for n in n_list):
        raise ParseError("scaling block: scale indices must be >= 1")
    init_rule = scaling.get("init_rule", "floor")
    if init_rule not in ("floor", "poisson"):
        raise ParseError(f"scaling block: unknown init_rule {init_rule!r}")
    rho0 = np.array(scaling.get("rho0", np.zeros(network.n_queues)), dtype=float)
    if rho0.shape != (network.n_queues,):
        raise DimensionMismatch(
            f"scaling.rho0 must have {network.n_queues} entries, got {rho0.shape}"
        )
    if rho0.min() < 0.0:
        raise ParseError("scaling.rho0 must be nonnegative")

    run = doc.get("run", {})
    _reject_unknown(run, _RUN_KEYS, "run block")
    horizon = float(run.get("T", 1.0))
    grid_step = float(run.get("grid_step", max(horizon / 100.0, 1e-6)))
    reps = int(run.get("reps", 100))
    seed = int(run.get("seed", 0))
    if horizon <= 0.0 or grid_step <= 0.0 or reps < 1:
        raise ParseError("run block: need T > 0, grid_step > 0, reps >= 1")
    if not 0 <= seed < 2**64:
        raise ParseError("run block: seed must be an unsigned 64-bit integer")
    worker_count = run.get("worker_count")
    if worker_count is not None:
        worker_count = int(worker_count)
        if worker_count < 1:
            raise ParseError("run block: worker_count must be >= 1")

    output = doc.get("output", {})
    _reject_unknown(output, _OUTPUT_KEYS, "output block")
    formats = list(output.get("formats", ["csv", "json"]))
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ParseError(f"output block: unknown format {fmt!r}")

    return RunConfig(
        raw=doc,
        network=network,
        model3=model3,
        alpha=alpha,
        n_list=n_list,
        init_rule=init_rule,
        rho0=rho0,
        horizon=horizon,
        grid_step=grid_step,
        reps=reps,
        seed=seed,
        worker_count=worker_count,
        tolerances=tolerances,
        output_dir=output.get("directory", "out"),
        output_formats=formats,
    )


def parse_config(path: str) -> RunConfig:
    """Load and validate a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_config_dict(doc, where=path)


def serialize_config(cfg: RunConfig) -> dict:
    """Emit a document that parses back to an equal configuration."""
    doc: dict = {"schema_version": SCHEMA_VERSION}
    if cfg.model3 is not None:
        doc["model3"] = {
            "generator": cfg.model3.gen.rates.tolist(),
            "lambda_star": cfg.model3.lambda_star.tolist(),
            "kappa_star": cfg.model3.kappa_star.tolist(),
            "mu_star": cfg.model3.mu_star.tolist(),
        }
    else:
        net = cfg.network
        doc["network"] = {
            "generator": net.gen.rates.tolist(),
            "lambda": net.lam.tolist(),
            "mu": net.mu.tolist(),
            "lambda_hat": net.lam_hat.tolist(),
            "mu_hat": net.mu_hat.tolist(),
        }
        sinks = cfg.raw.get("network", {}).get("sinks")
        if sinks:
            doc["network"]["sinks"] = list(sinks)
    scaling = {
        "alpha": cfg.alpha,
        "init_rule": cfg.init_rule,
        "rho0": cfg.rho0.tolist(),
    }
    if len(cfg.n_list) == 1:
        scaling["n"] = cfg.n_list[0]
    else:
        scaling["n_list"] = cfg.n_list
    doc["scaling"] = scaling
    doc["run"] = {
        "T": cfg.horizon,
        "grid_step": cfg.grid_step,
        "reps": cfg.reps,
        "seed": cfg.seed,
    }
    if cfg.worker_count is not None:
        doc["run"]["worker_count"] = cfg.worker_count
    doc["tolerances"] = dict(cfg.tolerances)
    doc["output"] = {"directory": cfg.output_dir, "formats": list(cfg.output_formats)}
    return doc
