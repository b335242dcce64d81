"""Scaled systems and exact event-driven simulation.

The n-th system accelerates arrivals linearly, the background chain by
``n**alpha``, and perturbs rates by hat terms at the ``n**beta`` scale
with ``beta = max(1/2, 1 - alpha/2)``. The simulator produces exact
trajectories together with every integral needed to rebuild the noise
decomposition of the centered process: per-cell chain occupancy,
queue-weighted occupancy, and event counts per stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .ctmc import ChainPath, stationary_distribution
from .errors import (
    DimensionMismatch,
    ExplodedPopulation,
    GridMismatch,
    NegativeEffectiveRate,
    NonpositiveAlpha,
)
from .network import AveragedRates, NetworkSpec

DEFAULT_POPULATION_CAP = 10**8


def beta_exponent(alpha: float) -> float:
    """Fluctuation exponent ``max(1/2, 1 - alpha/2)``."""
    if alpha <= 0.0:
        raise NonpositiveAlpha(f"alpha must be positive, got {alpha}")
    return max(0.5, 1.0 - alpha / 2.0)


def uniform_grid(horizon: float, step: float) -> np.ndarray:
    """Uniform output grid over [0, horizon] with approximately this step."""
    if step <= 0.0 or horizon < step:
        raise GridMismatch(f"need 0 < step <= horizon, got step={step}, horizon={horizon}")
    n_cells = max(1, int(round(horizon / step)))
    return np.linspace(0.0, horizon, n_cells + 1)


@dataclass(frozen=True)
class ScaledSystem:
    """The n-th system: effective rates, chain timescale, initial rule."""

    spec: NetworkSpec
    alpha: float
    n: int
    beta: float
    lambda_n: np.ndarray
    mu_n: np.ndarray
    chain_timescale: float
    init_rule: str
    chain_init_dist: np.ndarray
    population_cap: int = DEFAULT_POPULATION_CAP

    @property
    def n_queues(self) -> int:
        return self.spec.n_queues


def build_scaled_system(
    spec: NetworkSpec,
    alpha: float,
    n: int,
    init_rule: str = "floor",
    *,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> ScaledSystem:
    """Assemble effective rates for scale index n.

    ``lambda_n = n*lam + n**beta * lam_hat`` and
    ``mu_n = mu + n**(beta-1) * mu_hat``; any negative effective rate is
    rejected because the perturbation is too large at this n.
    """
    if n < 1:
        raise DimensionMismatch(f"scale index must be >= 1, got {n}")
    if init_rule not in ("floor", "poisson"):
        raise DimensionMismatch(f"init_rule must be 'floor' or 'poisson', got {init_rule!r}")
    beta = beta_exponent(alpha)
    lam_n = n * spec.lam + n**beta * spec.lam_hat
    mu_n = spec.mu + n ** (beta - 1.0) * spec.mu_hat
    if lam_n.min() < 0.0:
        k, i = np.argwhere(lam_n < 0.0)[0]
        raise NegativeEffectiveRate(
            f"lambda_n[{k}][{i}] = {lam_n[k, i]:.6g} < 0 at n={n}"
        )
    if mu_n.min() < 0.0:
        k, l, i = np.argwhere(mu_n < 0.0)[0]
        raise NegativeEffectiveRate(
            f"mu_n[{k}][{l}][{i}] = {mu_n[k, l, i]:.6g} < 0 at n={n}"
        )
    return ScaledSystem(
        spec=spec,
        alpha=float(alpha),
        n=int(n),
        beta=beta,
        lambda_n=lam_n,
        mu_n=mu_n,
        chain_timescale=float(n) ** alpha,
        init_rule=init_rule,
        chain_init_dist=stationary_distribution(spec.gen),
        population_cap=int(population_cap),
    )


def initial_condition(
    sys: ScaledSystem, rho0, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Initial job counts for the n-th system.

    The default floor rule gives deterministic counts whose scaled
    deviation from ``n*rho0`` vanishes; the Poisson rule draws counts with
    mean ``n*rho0`` so the centered start is Gaussian in the limit when
    ``beta == 1/2``.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (sys.n_queues,):
        raise DimensionMismatch(f"rho0 must have shape ({sys.n_queues},), got {rho0.shape}")
    if rho0.min() < 0.0:
        raise DimensionMismatch("rho0 must be nonnegative")
    if sys.init_rule == "floor":
        return np.floor(sys.n * rho0).astype(np.int64)
    if rng is None:
        raise DimensionMismatch("poisson initial rule needs an rng")
    return rng.poisson(sys.n * rho0).astype(np.int64)


@dataclass
class TrajectoryBundle:
    """One replication: paths plus the integrals the decomposition needs.

    Cell arrays cover grid cells ``[t_g, t_{g+1})``; ``occ_cells[g, i]``
    is the chain's occupancy of state i inside cell g, and
    ``qocc_cells[g, i, k]`` is that occupancy weighted by the (constant
    between events) job count of queue k. Event counts per cell live in
    ``arrival_cells`` and ``transfer_cells``. ``chain`` and the raw event
    log are optional because long runs do not need them retained.
    """

    sys: ScaledSystem
    grid: np.ndarray
    q0: np.ndarray
    queue_on_grid: np.ndarray
    occ_cells: np.ndarray
    qocc_cells: np.ndarray
    arrival_cells: np.ndarray
    transfer_cells: np.ndarray
    chain: ChainPath | None
    event_times: np.ndarray | None
    event_src: np.ndarray | None
    event_dst: np.ndarray | None

    @property
    def queue_times(self) -> np.ndarray:
        if self.event_times is None:
            raise GridMismatch("event log was not recorded for this run")
        return self.event_times

    @property
    def queue_states(self) -> np.ndarray:
        """Job counts right after each recorded event."""
        if self.event_times is None:
            raise GridMismatch("event log was not recorded for this run")
        deltas = np.zeros((self.event_times.shape[0], self.sys.n_queues), dtype=np.int64)
        rows = np.arange(self.event_times.shape[0])
        deltas[rows, self.event_dst] = 1
        xfer = self.event_src >= 0
        deltas[rows[xfer], self.event_src[xfer]] -= 1
        return self.q0[None, :] + np.cumsum(deltas, axis=0)

    @property
    def arrival_counts(self) -> np.ndarray:
        """Cumulative arrivals per queue at grid epochs, shape (G+1, L)."""
        out = np.zeros((self.grid.shape[0], self.sys.n_queues), dtype=np.int64)
        np.cumsum(self.arrival_cells, axis=0, out=out[1:])
        return out

    @property
    def transfer_counts(self) -> np.ndarray:
        """Cumulative transfers per stream at grid epochs, shape (G+1, L, L)."""
        n_q = self.sys.n_queues
        out = np.zeros((self.grid.shape[0], n_q, n_q), dtype=np.int64)
        np.cumsum(self.transfer_cells, axis=0, out=out[1:])
        return out

    @property
    def occupancy(self) -> np.ndarray:
        """Cumulative chain occupancy per state at grid epochs."""
        out = np.zeros((self.grid.shape[0], self.sys.spec.d))
        np.cumsum(self.occ_cells, axis=0, out=out[1:])
        return out

    @property
    def weighted_occupancy(self) -> np.ndarray:
        """Cumulative queue-weighted occupancy at grid epochs, (G+1, d, L)."""
        d = self.sys.spec.d
        n_q = self.sys.n_queues
        out = np.zeros((self.grid.shape[0], d, n_q))
        np.cumsum(self.qocc_cells, axis=0, out=out[1:])
        return out

    @property
    def clock_arrivals(self) -> np.ndarray:
        """Time-change clocks of the arrival streams at grid epochs:
        the running integral of ``lambda_n(J)/n`` per queue."""
        return self.occupancy @ (self._lam_by_state() / self.sys.n)

    @property
    def clock_transfers(self) -> np.ndarray:
        """Time-change clocks of the transfer streams at grid epochs:
        the running integral of ``mu_n(J) * Q/n`` per (k, l)."""
        mu_by_state = np.transpose(self.sys.mu_n, (2, 0, 1))  # (d, L, L)
        return (
            np.einsum("gik,ikl->gkl", self.weighted_occupancy, mu_by_state)
            / self.sys.n
        )

    def _lam_by_state(self) -> np.ndarray:
        return self.sys.lambda_n.T  # (d, L)


@dataclass(frozen=True)
class DecompositionPaths:
    """Grid paths of the six noise families and the assembled driver.

    The families split the centered population's input noise by source:
    counting noise of arrival and transfer streams, drift from the hat
    perturbations, and chain-modulation fluctuation around averaged
    rates. ``driver`` is their signed combination scaled by
    ``n**(1-beta)``, the input the limit's integral map consumes.
    """

    grid: np.ndarray
    arrival_martingale: np.ndarray
    arrival_perturbation: np.ndarray
    arrival_modulation: np.ndarray
    transfer_martingale: np.ndarray
    transfer_perturbation: np.ndarray
    transfer_modulation: np.ndarray
    driver: np.ndarray


def simulate(
    sys: ScaledSystem,
    horizon: float,
    grid: np.ndarray,
    rng: np.random.Generator,
    *,
    q0: np.ndarray | None = None,
    initial_chain_state: int | None = None,
    record_chain: bool = True,
    record_events: bool = True,
) -> TrajectoryBundle:
    """Run one exact trajectory of the n-th system over ``[0, horizon]``.

    The chain starts from its stationary distribution unless
    ``initial_chain_state`` is given; queues start from ``q0`` (zeros by
    default). Identical inputs and rng state give a bit-identical bundle.
    """
    grid = np.asarray(grid, dtype=float)
    n_cells = grid.shape[0] - 1
    if n_cells < 1 or abs(grid[-1] - horizon) > 1e-9 * max(1.0, horizon):
        raise GridMismatch("grid must span [0, horizon] with at least one cell")
    h = horizon / n_cells

    spec = sys.spec
    d, n_q = spec.d, spec.n_queues
    if q0 is None:
        q0 = np.zeros(n_q, dtype=np.int64)
    else:
        q0 = np.asarray(q0, dtype=np.int64)
        if q0.shape != (n_q,):
            raise DimensionMismatch(f"q0 must have shape ({n_q},), got {q0.shape}")

    if initial_chain_state is None:
        j0 = int(rng.choice(d, p=sys.chain_init_dist))
    else:
        j0 = int(initial_chain_state)

    chain_exit = -np.diag(spec.gen.rates) * sys.chain_timescale
    cum = np.zeros((d, d))
    for j in range(d):
        if chain_exit[j] > 0.0:
            p = np.maximum(spec.gen.rates[j], 0.0).copy()
            p[j] = 0.0
            cum[j] = np.cumsum(p / p.sum())
            cum[j, -1] = 1.0

    lam_eff = np.ascontiguousarray(sys.lambda_n.T)  # (d, L)
    arr_sum = lam_eff.sum(axis=1)
    mu_eff = np.ascontiguousarray(np.transpose(sys.mu_n, (2, 0, 1)))  # (d, L, L)
    mu_out = mu_eff.sum(axis=2)

    q = q0.copy()
    occ_win = np.zeros(d)
    st_f = np.zeros(1)
    st_i = np.zeros(4, dtype=np.int64)
    st_i[0] = j0
    gq = np.zeros((n_cells + 1, n_q), dtype=np.int64)
    gq[0] = q0
    gocc = np.zeros((n_cells, d))
    gqocc = np.zeros((n_cells, d, n_q))
    garr = np.zeros((n_cells, n_q), dtype=np.int64)
    gxfer = np.zeros((n_cells, n_q, n_q), dtype=np.int64)

    rate_guess = arr_sum.max() + float(mu_out.max()) * max(1, int(q0.sum()))
    ev_cap = max(256, int(2.0 * rate_guess * horizon) + 64) if record_events else 0
    ch_cap = max(256, int(1.5 * chain_exit.max() * horizon) + 64) if record_chain else 0
    chain_times = np.empty(ch_cap)
    chain_states = np.empty(ch_cap, dtype=np.int64)
    ev_times = np.empty(ev_cap)
    ev_src = np.empty(ev_cap, dtype=np.int64)
    ev_dst = np.empty(ev_cap, dtype=np.int64)

    while True:
        status = _kernels.network_kernel(
            float(horizon), h, n_cells,
            chain_exit, cum, lam_eff, arr_sum, mu_eff, mu_out,
            np.int64(sys.population_cap),
            q, occ_win, st_f, st_i,
            gq, gocc, gqocc, garr, gxfer,
            chain_times, chain_states, ev_times, ev_src, ev_dst,
            record_chain, record_events, rng,
        )
        if status == _kernels.STATUS_DONE:
            break
        if status == _kernels.STATUS_POP_CAP:
            raise ExplodedPopulation(
                f"population exceeded cap {sys.population_cap} at t={st_f[0]:.6g}"
            )
        if status == _kernels.STATUS_CHAIN_FULL:
            chain_times = np.concatenate([chain_times, np.empty(chain_times.size)])
            chain_states = np.concatenate(
                [chain_states, np.empty(chain_states.size, dtype=np.int64)]
            )
        elif status == _kernels.STATUS_EVENTS_FULL:
            ev_times = np.concatenate([ev_times, np.empty(ev_times.size)])
            ev_src = np.concatenate([ev_src, np.empty(ev_src.size, dtype=np.int64)])
            ev_dst = np.concatenate([ev_dst, np.empty(ev_dst.size, dtype=np.int64)])

    chain = None
    if record_chain:
        m = int(st_i[2])
        times = np.empty(m + 1)
        states = np.empty(m + 1, dtype=np.int64)
        times[0] = 0.0
        states[0] = j0
        times[1:] = chain_times[:m]
        states[1:] = chain_states[:m]
        chain = ChainPath(times=times, states=states, horizon=float(horizon))

    n_ev = int(st_i[3])
    return TrajectoryBundle(
        sys=sys,
        grid=grid,
        q0=q0,
        queue_on_grid=gq,
        occ_cells=gocc,
        qocc_cells=gqocc,
        arrival_cells=garr,
        transfer_cells=gxfer,
        chain=chain,
        event_times=ev_times[:n_ev].copy() if record_events else None,
        event_src=ev_src[:n_ev].copy() if record_events else None,
        event_dst=ev_dst[:n_ev].copy() if record_events else None,
    )


def centered_scaled_path(bundle: TrajectoryBundle, rho: np.ndarray, sys: ScaledSystem) -> np.ndarray:
    """Centered, scaled population path on the output grid:
    ``n**(1-beta) * (Q/n - rho)`` per queue."""
    if rho.shape != bundle.queue_on_grid.shape:
        raise GridMismatch(
            f"rho shape {rho.shape} does not match grid states {bundle.queue_on_grid.shape}"
        )
    scale = sys.n ** (1.0 - sys.beta)
    return scale * (bundle.queue_on_grid / sys.n - rho)


def decompose(
    bundle: TrajectoryBundle,
    sys: ScaledSystem,
    rho: np.ndarray,
    avg: AveragedRates,
) -> DecompositionPaths:
    """Rebuild the six noise families and the scaled driver on the grid.

    All chain and queue integrals are exact sums of rate-times-holding
    products; only the fluid path is interpolated (cell midpoints), so
    the modulation family carries O(step^2) quadrature error and nothing
    else does.
    """
    grid = bundle.grid
    if rho.shape != (grid.shape[0], sys.n_queues):
        raise GridMismatch(f"rho must be {(grid.shape[0], sys.n_queues)}, got {rho.shape}")

    n = sys.n
    spec = sys.spec
    occ = bundle.occupancy                      # (G+1, d)
    wocc = bundle.weighted_occupancy            # (G+1, d, L)
    lam_by_state = sys.lambda_n.T               # (d, L)
    lam_base = spec.lam.T                       # (d, L)
    mu_by_state = np.transpose(sys.mu_n, (2, 0, 1))   # (d, L, L)
    mu_base = np.transpose(spec.mu, (2, 0, 1))  # (d, L, L)

    arr_mart = bundle.arrival_counts / n - bundle.clock_arrivals
    arr_pert = occ @ (lam_by_state / n - lam_base)
    arr_mod = occ @ lam_base - grid[:, None] * avg.lambda_pi[None, :]

    xfer_mart = bundle.transfer_counts / n - bundle.clock_transfers
    xfer_pert = np.einsum("gik,ikl->gkl", wocc, mu_by_state - mu_base) / n

    # Modulation around averaged transfer rates, integrated against the
    # fluid path: cell-midpoint rule in rho, exact in the chain occupancy.
    rho_mid = 0.5 * (rho[:-1] + rho[1:])        # (G, L)
    cell_dt = np.diff(grid)
    mod_cells = np.einsum(
        "gi,ikl,gk->gkl", bundle.occ_cells, mu_base, rho_mid
    ) - np.einsum("kl,g,gk->gkl", avg.mu_pi, cell_dt, rho_mid)
    xfer_mod = np.zeros_like(xfer_mart)
    np.cumsum(mod_cells, axis=0, out=xfer_mod[1:])

    total_xfer = xfer_mart + xfer_pert + xfer_mod
    incoming = total_xfer.sum(axis=1)           # sum over source l of (l -> k)
    outgoing = total_xfer.sum(axis=2)           # sum over target l of (k -> l)
    xbar = arr_mart + arr_pert + arr_mod + incoming - outgoing
    driver = n ** (1.0 - sys.beta) * xbar

    return DecompositionPaths(
        grid=grid,
        arrival_martingale=arr_mart,
        arrival_perturbation=arr_pert,
        arrival_modulation=arr_mod,
        transfer_martingale=xfer_mart,
        transfer_perturbation=xfer_pert,
        transfer_modulation=xfer_mod,
        driver=driver,
    )
