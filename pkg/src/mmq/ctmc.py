"""Background-chain mathematics.

Everything the toolkit needs from the finite-state background chain lives
here: generator validation, the stationary distribution, the deviation
matrix, the long-run covariance of state-indicator fluctuations, exact
path sampling, and occupation-measure deviations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import (
    NegativeOffDiagonal,
    Reducible,
    RowSumNonzero,
    SingularSolve,
    TimeOutOfRange,
)

# Default numerical thresholds; all are overridable per call and exposed in
# the CLI tolerance block.
ROW_SUM_TOL = 1e-12
EDGE_EPS = 1e-14
STATIONARY_TOL = 1e-10
DEVIATION_TOL = 1e-9


@dataclass(frozen=True)
class GeneratorSpec:
    """Validated transition-rate matrix of an irreducible chain.

    ``rates[i, j]`` is the jump rate from state ``i`` to state ``j`` for
    ``i != j``; the diagonal holds negative row sums.
    """

    rates: np.ndarray

    @property
    def d(self) -> int:
        return self.rates.shape[0]


@dataclass(frozen=True)
class ChainSummary:
    """Stationary distribution, deviation matrix, and indicator covariance."""

    pi: np.ndarray
    deviation: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant, right-continuous chain trajectory.

    ``times[0] == 0.0`` is the initial epoch; ``states[m]`` is the state
    entered at ``times[m]`` and held until the next epoch (or ``horizon``).
    States are 0-based indices.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t: float) -> int:
        if t < 0.0 or t > self.horizon:
            raise TimeOutOfRange(f"t={t} outside [0, {self.horizon}]")
        idx = np.searchsorted(self.times, t, side="right") - 1
        return int(self.states[idx])


def validate_generator(
    rates,
    *,
    row_sum_tol: float = ROW_SUM_TOL,
    edge_eps: float = EDGE_EPS,
) -> GeneratorSpec:
    """Check a rate matrix and wrap it as a :class:`GeneratorSpec`.

    Raises
    ------
    RowSumNonzero
        If some row sum exceeds ``row_sum_tol`` in absolute value.
    NegativeOffDiagonal
        If some off-diagonal entry is negative.
    Reducible
        If the graph of rates above ``edge_eps`` is not strongly connected.
    """
    q = np.array(rates, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise RowSumNonzero(f"expected a square matrix, got shape {q.shape}")
    d = q.shape[0]

    off = q.copy()
    np.fill_diagonal(off, 0.0)
    bad = np.argwhere(off < 0.0)
    if bad.size:
        i, j = bad[0]
        raise NegativeOffDiagonal(f"rates[{i}][{j}] = {q[i, j]} is negative")

    row_sums = q.sum(axis=1)
    worst = int(np.argmax(np.abs(row_sums)))
    if abs(row_sums[worst]) > row_sum_tol:
        raise RowSumNonzero(f"row {worst} sums to {row_sums[worst]:.3e}")

    if d > 1:
        adj = csr_matrix(off > edge_eps)
        n_comp, labels = connected_components(adj, directed=True, connection="strong")
        if n_comp > 1:
            comp = np.flatnonzero(labels == labels[0]).tolist()
            raise Reducible(
                f"{n_comp} strongly connected components; one of them is {comp}"
            )

    return GeneratorSpec(rates=q)


def stationary_distribution(gen: GeneratorSpec, *, tol: float = STATIONARY_TOL) -> np.ndarray:
    """Solve for the stationary distribution of the chain.

    The (d+1)-row stacked system ``[Q^T; 1^T] pi = [0; 1]`` is solved in
    least squares, which stays robust for nearly degenerate chains.
    """
    d = gen.d
    a = np.vstack([gen.rates.T, np.ones((1, d))])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)

    residual = np.abs(pi @ gen.rates).max()
    if residual > tol or pi.min() <= -tol:
        raise SingularSolve(
            f"stationary solve residual {residual:.3e} (tol {tol:.1e}), "
            f"min entry {pi.min():.3e}"
        )
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    # Pin the sum to exactly 1.0 so occupation deviations cancel exactly.
    pi[np.argmax(pi)] += 1.0 - pi.sum()
    return pi


def deviation_matrix(gen: GeneratorSpec, *, tol: float = DEVIATION_TOL) -> np.ndarray:
    """Deviation matrix of the chain.

    Computed through the finite closed form ``(Pi - Q)^{-1} - Pi`` with
    ``Pi = 1 pi^T``, which agrees with the improper time integral of
    ``P(t) - Pi`` for irreducible chains. The defining residuals
    ``Q D = Pi - I`` and ``pi^T D = 0`` are checked before returning.
    """
    pi = stationary_distribution(gen)
    d = gen.d
    big_pi = np.tile(pi, (d, 1))
    try:
        dev = np.linalg.solve(big_pi - gen.rates, np.eye(d)) - big_pi
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(f"deviation solve failed: {exc}") from exc

    residual = np.linalg.norm(gen.rates @ dev - (big_pi - np.eye(d)))
    balance = np.abs(pi @ dev).max()
    if residual > tol or balance > 10.0 * tol:
        raise SingularSolve(
            f"deviation residuals too large: |QD-(Pi-I)|_F={residual:.3e}, "
            f"|pi^T D|_inf={balance:.3e}"
        )
    return dev


def modulation_covariance(gen: GeneratorSpec) -> np.ndarray:
    """Covariance rate of stationary state-indicator fluctuations.

    ``Sigma = diag(pi) D + D^T diag(pi)``; symmetric positive semidefinite.
    """
    pi = stationary_distribution(gen)
    dev = deviation_matrix(gen)
    sigma = pi[:, None] * dev + dev.T * pi[None, :]
    return 0.5 * (sigma + sigma.T)


def chain_summary(
    gen: GeneratorSpec,
    *,
    stationary_tol: float = STATIONARY_TOL,
    deviation_tol: float = DEVIATION_TOL,
) -> ChainSummary:
    """Bundle pi, the deviation matrix, and the indicator covariance."""
    pi = stationary_distribution(gen, tol=stationary_tol)
    dev = deviation_matrix(gen, tol=deviation_tol)
    sigma = pi[:, None] * dev + dev.T * pi[None, :]
    return ChainSummary(pi=pi, deviation=dev, sigma=0.5 * (sigma + sigma.T))


def _embedded_jumps(rates: np.ndarray):
    """Exit rates and cumulative jump-target probabilities per state."""
    d = rates.shape[0]
    exit_rates = -np.diag(rates).astype(float).copy()
    cum = np.zeros((d, d))
    for j in range(d):
        if exit_rates[j] > 0.0:
            p = np.maximum(rates[j], 0.0).copy()
            p[j] = 0.0
            cum[j] = np.cumsum(p / p.sum())
            cum[j, -1] = 1.0
    return exit_rates, cum


def sample_chain_path(
    gen: GeneratorSpec,
    timescale: float,
    horizon: float,
    rng: np.random.Generator,
    *,
    initial_state: int | None = None,
) -> ChainPath:
    """Sample an exact trajectory of the chain with generator ``timescale * Q``.

    The initial state is drawn from the stationary distribution unless
    ``initial_state`` is given. Identical ``rng`` state yields a
    bit-identical path.
    """
    if timescale <= 0.0:
        raise TimeOutOfRange(f"timescale must be positive, got {timescale}")
    if horizon <= 0.0:
        raise TimeOutOfRange(f"horizon must be positive, got {horizon}")

    if initial_state is None:
        pi = stationary_distribution(gen)
        j0 = int(rng.choice(gen.d, p=pi))
    else:
        j0 = int(initial_state)
        if not 0 <= j0 < gen.d:
            raise TimeOutOfRange(f"initial state {j0} outside 0..{gen.d - 1}")

    exit_rates, cum = _embedded_jumps(gen.rates)
    exit_rates = exit_rates * timescale

    cap = max(64, int(1.5 * exit_rates.max() * horizon) + 16)
    times = np.empty(cap)
    states = np.empty(cap, dtype=np.int64)
    m, t, j = 0, 0.0, j0
    while True:
        m, status, t, j = _kernels.chain_path_kernel(
            exit_rates, cum, horizon, t, j, m, times, states, rng
        )
        if status == _kernels.STATUS_DONE:
            break
        times = np.concatenate([times, np.empty(times.size)])
        states = np.concatenate([states, np.empty(states.size, dtype=np.int64)])

    out_times = np.empty(m + 1)
    out_states = np.empty(m + 1, dtype=np.int64)
    out_times[0] = 0.0
    out_states[0] = j0
    out_times[1:] = times[:m]
    out_states[1:] = states[:m]
    return ChainPath(times=out_times, states=out_states, horizon=float(horizon))


def occupation_deviation(path: ChainPath, pi: np.ndarray, t: float) -> np.ndarray:
    """Integrated state-indicator deviation from pi over ``[0, t]``.

    Exact piecewise-linear integral of the indicator minus ``pi``; the
    component sum vanishes because occupancies sum to ``t`` and ``pi``
    sums to one.
    """
    if t < 0.0 or t > path.horizon:
        raise TimeOutOfRange(f"t={t} outside [0, {path.horizon}]")
    d = pi.shape[0]
    if t == 0.0:
        return np.zeros(d)

    m = int(np.searchsorted(path.times, t, side="right"))
    starts = path.times[:m]
    ends = np.empty(m)
    ends[: m - 1] = path.times[1:m]
    ends[m - 1] = t
    np.minimum(ends, t, out=ends)
    occ = np.bincount(path.states[:m], weights=ends - starts, minlength=d)
    # Absorb telescoping round-off into the last visited state so the
    # occupancies sum to exactly t.
    occ[path.states[m - 1]] += t - occ.sum()
    return occ - t * pi
