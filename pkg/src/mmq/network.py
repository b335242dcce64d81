"""Network specification and derived quantities.

A network is a set of ``L >= 2`` infinite-server queues whose arrival
rates ``lam[k][i]`` and per-job transfer rates ``mu[k][l][i]`` depend on
the background-chain state ``i``. Jobs that leave the system are routed
to a designated absorbing queue (zero arrivals, zero outgoing rates), so
open networks are expressed without extra bookkeeping. Per-state
perturbations ``lam_hat`` and ``mu_hat`` describe how the scaled systems
approach the base rates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import ChainSummary, GeneratorSpec
from .errors import (
    DimensionMismatch,
    NegativeRate,
    NonzeroSelfService,
    ProbabilityOutOfRange,
    TooFewQueues,
)


@dataclass(frozen=True)
class NetworkSpec:
    """Validated network: generator plus rate arrays.

    Shapes: ``lam`` and ``lam_hat`` are (L, d); ``mu`` and ``mu_hat`` are
    (L, L, d) with a zero diagonal in the first two axes.
    """

    gen: GeneratorSpec
    lam: np.ndarray
    mu: np.ndarray
    lam_hat: np.ndarray
    mu_hat: np.ndarray

    @property
    def n_queues(self) -> int:
        return self.lam.shape[0]

    @property
    def d(self) -> int:
        return self.gen.d


@dataclass(frozen=True)
class AveragedRates:
    """Stationary-averaged rates and the fluid drift matrix."""

    lambda_pi: np.ndarray
    mu_pi: np.ndarray
    lambda_hat_pi: np.ndarray
    mu_hat_pi: np.ndarray
    M: np.ndarray


@dataclass(frozen=True)
class Model3Spec:
    """Single queue whose arrival rate, service-requirement rate, and
    server speed are all modulated; reducible to a plain network."""

    gen: GeneratorSpec
    lambda_star: np.ndarray
    kappa_star: np.ndarray
    mu_star: np.ndarray


@dataclass(frozen=True)
class RoutingView:
    """Per-state exit rates and service-completion routing probabilities."""

    exit_rates: np.ndarray
    probabilities: np.ndarray
    absorbing: np.ndarray


def validate_network(gen: GeneratorSpec, lam, mu, lam_hat=None, mu_hat=None) -> NetworkSpec:
    """Validate raw rate arrays against the generator and each other."""
    lam = np.array(lam, dtype=float)
    mu = np.array(mu, dtype=float)
    if lam.ndim != 2:
        raise DimensionMismatch(f"lam must be (L, d), got shape {lam.shape}")
    n_q, d = lam.shape
    if n_q < 2:
        raise TooFewQueues(f"need at least 2 queues, got L={n_q}")
    if d != gen.d:
        raise DimensionMismatch(f"lam has {d} chain states, generator has {gen.d}")
    if mu.shape != (n_q, n_q, d):
        raise DimensionMismatch(f"mu must be {(n_q, n_q, d)}, got {mu.shape}")

    if lam.min() < 0.0:
        k, i = np.argwhere(lam < 0.0)[0]
        raise NegativeRate(f"lam[{k}][{i}] = {lam[k, i]} is negative")
    if mu.min() < 0.0:
        k, l, i = np.argwhere(mu < 0.0)[0]
        raise NegativeRate(f"mu[{k}][{l}][{i}] = {mu[k, l, i]} is negative")
    diag = mu[np.arange(n_q), np.arange(n_q), :]
    if np.any(diag != 0.0):
        k = int(np.argwhere(diag != 0.0)[0][0])
        raise NonzeroSelfService(f"mu[{k}][{k}] must be identically zero")

    if lam_hat is None:
        lam_hat = np.zeros_like(lam)
    else:
        lam_hat = np.array(lam_hat, dtype=float)
        if lam_hat.shape != lam.shape:
            raise DimensionMismatch(
                f"lam_hat must be {lam.shape}, got {lam_hat.shape}"
            )
    if mu_hat is None:
        mu_hat = np.zeros_like(mu)
    else:
        mu_hat = np.array(mu_hat, dtype=float)
        if mu_hat.shape != mu.shape:
            raise DimensionMismatch(f"mu_hat must be {mu.shape}, got {mu_hat.shape}")
        hat_diag = mu_hat[np.arange(n_q), np.arange(n_q), :]
        if np.any(hat_diag != 0.0):
            k = int(np.argwhere(hat_diag != 0.0)[0][0])
            raise NonzeroSelfService(f"mu_hat[{k}][{k}] must be identically zero")

    return NetworkSpec(gen=gen, lam=lam, mu=mu, lam_hat=lam_hat, mu_hat=mu_hat)


def _assemble_drift(mu_pi: np.ndarray) -> np.ndarray:
    # M[k, l] = mu_pi[l, k] for l != k; diagonal balances column sums to zero.
    m = mu_pi.T.copy()
    np.fill_diagonal(m, 0.0)
    np.fill_diagonal(m, -mu_pi.sum(axis=1))
    return m


def averaged_rates(spec: NetworkSpec, summary: ChainSummary) -> AveragedRates:
    """Average every rate over the stationary distribution."""
    pi = summary.pi
    if pi.shape[0] != spec.d:
        raise DimensionMismatch(
            f"summary has {pi.shape[0]} states, network has {spec.d}"
        )
    mu_pi = spec.mu @ pi
    return AveragedRates(
        lambda_pi=spec.lam @ pi,
        mu_pi=mu_pi,
        lambda_hat_pi=spec.lam_hat @ pi,
        mu_hat_pi=spec.mu_hat @ pi,
        M=_assemble_drift(mu_pi),
    )


def drift_matrix(avg: AveragedRates) -> np.ndarray:
    """Fluid drift matrix; off-diagonals feed queue k from queue l,
    diagonals drain it, so columns sum to zero exactly."""
    return _assemble_drift(avg.mu_pi)


def routing_view(spec: NetworkSpec, i: int) -> RoutingView:
    """Exit rates and routing probabilities while the chain sits in state i.

    A queue with zero exit rate in state i is flagged absorbing and gets a
    zero probability row.
    """
    if not 0 <= i < spec.d:
        raise DimensionMismatch(f"state {i} outside 0..{spec.d - 1}")
    exit_rates = spec.mu[:, :, i].sum(axis=1)
    absorbing = exit_rates == 0.0
    probs = np.zeros((spec.n_queues, spec.n_queues))
    active = ~absorbing
    probs[active] = spec.mu[active, :, i] / exit_rates[active, None]
    return RoutingView(exit_rates=exit_rates, probabilities=probs, absorbing=absorbing)


def reduce_model3(m3: Model3Spec) -> NetworkSpec:
    """Express a fully modulated single queue as a (d+1)-queue network.

    Jobs arriving while the chain is in state i go to class queue i; every
    class queue routes finished jobs to the collector queue d+1 at rate
    ``kappa_star[class] * mu_star[state]``. The in-service population of
    the original queue is the sum over class queues, and the collector
    counts departures.
    """
    d = m3.gen.d
    lam_star = np.asarray(m3.lambda_star, dtype=float)
    kap = np.asarray(m3.kappa_star, dtype=float)
    mu_star = np.asarray(m3.mu_star, dtype=float)
    for name, arr in (("lambda_star", lam_star), ("kappa_star", kap), ("mu_star", mu_star)):
        if arr.shape != (d,):
            raise DimensionMismatch(f"{name} must have shape ({d},), got {arr.shape}")
        if arr.min() < 0.0:
            raise NegativeRate(f"{name} has a negative entry")

    n_q = d + 1
    lam = np.zeros((n_q, d))
    lam[np.arange(d), np.arange(d)] = lam_star
    mu = np.zeros((n_q, n_q, d))
    mu[:d, d, :] = kap[:, None] * mu_star[None, :]
    return validate_network(m3.gen, lam, mu)


def split_arrival_classes(gen: GeneratorSpec, lam_a, mu_a, p) -> NetworkSpec:
    """Split one queue into per-class queues so routing can depend on the
    chain state seen at arrival.

    Class queue k receives arrivals only while the chain is in state k;
    on completion in state i a class-k job goes to queue d (the first
    target) with probability ``p[k, i]`` and to queue d+1 otherwise. Both
    targets are left absorbing; callers wire them further as needed.
    """
    d = gen.d
    lam_a = np.asarray(lam_a, dtype=float)
    mu_a = np.asarray(mu_a, dtype=float)
    p = np.asarray(p, dtype=float)
    if lam_a.shape != (d,) or mu_a.shape != (d,) or p.shape != (d, d):
        raise DimensionMismatch(
            f"expected lam_a ({d},), mu_a ({d},), p ({d},{d}); "
            f"got {lam_a.shape}, {mu_a.shape}, {p.shape}"
        )
    if p.min() < 0.0 or p.max() > 1.0:
        k, i = np.argwhere((p < 0.0) | (p > 1.0))[0]
        raise ProbabilityOutOfRange(f"p[{k}][{i}] = {p[k, i]} outside [0, 1]")

    n_q = d + 2
    lam = np.zeros((n_q, d))
    lam[np.arange(d), np.arange(d)] = lam_a
    mu = np.zeros((n_q, n_q, d))
    mu[:d, d, :] = p * mu_a[None, :]
    mu[:d, d + 1, :] = (1.0 - p) * mu_a[None, :]
    return validate_network(gen, lam, mu)
