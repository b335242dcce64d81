"""Deterministic limit objects.

The fluid path solves ``rho' = lambda_pi + M rho``; fluctuations around it
follow a linear diffusion whose drift combines the hat perturbations with
the fluid path and whose diffusion matrix has a Poisson-noise part (active
for alpha >= 1) and a chain-modulation part (active for alpha <= 1). The
moment ODEs and an Euler-Maruyama sampler provide two independent routes
to the same distribution, which the verification harness exploits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .ctmc import ChainSummary
from .errors import GridMismatch, NonPSDDiffusion
from .network import AveragedRates, NetworkSpec, _assemble_drift
from .simulate import uniform_grid

PSD_TOL = 1e-9

# Order-13 rational approximation coefficients and its validity radius for
# the scaled matrix (Higham's choice).
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
    33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
)
_PADE13_THETA = 5.371920351148152


def expm_fixed(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a fixed-order
    rational approximant; relative accuracy near 1e-12 for the sizes and
    norms this toolkit produces."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    norm = np.linalg.norm(a, 1)
    s = 0
    if norm > _PADE13_THETA:
        s = int(np.ceil(np.log2(norm / _PADE13_THETA)))
        a = a / (2.0**s)
    b = _PADE13
    ident = np.eye(d)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    )
    out = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        out = out @ out
    return out


@dataclass(frozen=True)
class FluidSolution:
    """Fluid path on a uniform grid."""

    grid: np.ndarray
    rho: np.ndarray
    step: float


@dataclass(frozen=True)
class OUMoments:
    """Limit-process drift, diffusion, mean, and covariance per epoch."""

    grid: np.ndarray
    drift_b: np.ndarray
    diff_A: np.ndarray
    mean_m: np.ndarray
    cov_V: np.ndarray
    poisson_active: bool
    modulation_active: bool


def _rk4(f, y0: np.ndarray, grid: np.ndarray) -> np.ndarray:
    h = grid[1] - grid[0]
    out = np.empty((grid.shape[0],) + y0.shape)
    out[0] = y0
    y = y0
    for g in range(grid.shape[0] - 1):
        t = grid[g]
        k1 = f(t, y, g, 0)
        k2 = f(t + h / 2, y + h / 2 * k1, g, 1)
        k3 = f(t + h / 2, y + h / 2 * k2, g, 1)
        k4 = f(t + h, y + h * k3, g, 2)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[g + 1] = y
    return out


def fluid_limit(avg: AveragedRates, rho0, horizon: float, step: float) -> FluidSolution:
    """Classical fourth-order solve of the averaged-rate fluid ODE."""
    rho0 = np.asarray(rho0, dtype=float)
    grid = uniform_grid(horizon, step)
    lam_pi = avg.lambda_pi
    m = avg.M

    def f(t, y, g, stage):
        return lam_pi + m @ y

    rho = _rk4(f, rho0, grid)
    return FluidSolution(grid=grid, rho=rho, step=float(grid[1] - grid[0]))


def integral_map_H(b: np.ndarray, x: np.ndarray, m: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Solve ``y(t) = b + x(t) + int_0^t M y(s) ds`` for a grid path x.

    The input is read as a staircase that jumps at grid epochs, so each
    step is an exact variation-of-constants update with the matrix
    exponential precomputed once: ``y_{g+1} = e^{Mh} y_g + (x_{g+1} - x_g)``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape[0] != grid.shape[0]:
        raise GridMismatch(f"x has {x.shape[0]} epochs, grid has {grid.shape[0]}")
    prop = expm_fixed(m * (grid[1] - grid[0]))
    y = np.empty_like(x)
    y[0] = b + x[0]
    _kernels.h_recursion(prop, x, y)
    return y


def ou_drift(avg: AveragedRates, fluid: FluidSolution) -> np.ndarray:
    """Limit drift: averaged hat perturbations pushed through the fluid
    path, ``b(t) = lambda_hat_pi + M_hat rho(t)``."""
    m_hat = _assemble_drift(avg.mu_hat_pi)
    return avg.lambda_hat_pi[None, :] + fluid.rho @ m_hat.T


def ou_diffusion(
    spec: NetworkSpec,
    avg: AveragedRates,
    summary: ChainSummary,
    fluid: FluidSolution,
    alpha: float,
) -> np.ndarray:
    """Limit diffusion matrix per epoch.

    Poisson part (alpha >= 1): each arrival stream adds its averaged rate
    to the diagonal; each transfer stream k->l with instantaneous variance
    ``mu_pi[k,l] rho_k`` adds to both diagonals and subtracts from the
    (k,l) off-diagonals because it enters the two queues with opposite
    signs. Modulation part (alpha <= 1): ``W(t) Sigma W(t)^T`` where row k
    of W collects the per-state net flow sensitivity
    ``lam_k + sum_l mu_lk rho_l - sum_l mu_kl rho_k``. At alpha == 1 both
    parts are active.
    """
    rho = fluid.rho
    n_epochs = rho.shape[0]
    n_q = spec.n_queues
    a = np.zeros((n_epochs, n_q, n_q))

    if alpha >= 1.0:
        # off[g, k, l] = mu_pi[k, l] rho_k(g) + mu_pi[l, k] rho_l(g)
        off = avg.mu_pi[None, :, :] * rho[:, :, None]
        off = off + np.transpose(off, (0, 2, 1))
        a -= off
        diag = avg.lambda_pi[None, :] + off.sum(axis=2)
        idx = np.arange(n_q)
        a[:, idx, idx] += diag

    if alpha <= 1.0:
        # W[g, k, i]: arrival sensitivity plus net transfer sensitivity.
        w = np.broadcast_to(spec.lam[None, :, :], (n_epochs, n_q, spec.d)).copy()
        w += np.einsum("lki,gl->gki", spec.mu, rho)
        w -= spec.mu.sum(axis=1)[None, :, :] * rho[:, :, None]
        a += np.einsum("gki,ij,gmj->gkm", w, summary.sigma, w)

    return a


def ou_moments(
    b: np.ndarray,
    a: np.ndarray,
    m: np.ndarray,
    m0,
    v0,
    grid: np.ndarray,
    *,
    psd_tol: float = PSD_TOL,
    poisson_active: bool = True,
    modulation_active: bool = True,
) -> OUMoments:
    """Integrate the mean and covariance ODEs of the limit process.

    ``mean' = b + M mean`` and ``cov' = M cov + cov M^T + A(t)``; drift and
    diffusion paths are interpolated linearly at half steps, and the
    covariance is symmetrized after every step.
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if b.shape[0] != grid.shape[0] or a.shape[0] != grid.shape[0]:
        raise GridMismatch("drift/diffusion paths must be sampled on the grid")
    eigs = np.linalg.eigvalsh(a)
    if eigs.min() < -psd_tol:
        g = int(np.argmin(eigs.min(axis=1)))
        raise NonPSDDiffusion(
            f"diffusion matrix has eigenvalue {eigs.min():.3e} at epoch {g}"
        )

    b_mid = 0.5 * (b[:-1] + b[1:])
    a_mid = 0.5 * (a[:-1] + a[1:])

    def fm(t, y, g, stage):
        bb = (b[g], b_mid[g], b[g + 1])[stage]
        return bb + m @ y

    mean = _rk4(fm, np.asarray(m0, dtype=float), grid)

    def fv(t, y, g, stage):
        aa = (a[g], a_mid[g], a[g + 1])[stage]
        return m @ y + y @ m.T + aa

    h = grid[1] - grid[0]
    n_q = b.shape[1]
    cov = np.empty((grid.shape[0], n_q, n_q))
    v = np.asarray(v0, dtype=float).copy()
    cov[0] = v
    for g in range(grid.shape[0] - 1):
        k1 = fv(0.0, v, g, 0)
        k2 = fv(0.0, v + h / 2 * k1, g, 1)
        k3 = fv(0.0, v + h / 2 * k2, g, 1)
        k4 = fv(0.0, v + h * k3, g, 2)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        v = 0.5 * (v + v.T)
        cov[g + 1] = v

    return OUMoments(
        grid=grid,
        drift_b=b,
        diff_A=a,
        mean_m=mean,
        cov_V=cov,
        poisson_active=poisson_active,
        modulation_active=modulation_active,
    )


def _cholesky_paths(a: np.ndarray, psd_tol: float) -> np.ndarray:
    ident = np.eye(a.shape[1])
    for jitter in (0.0, 1e-12, 1e-10):
        try:
            return np.linalg.cholesky(a + jitter * ident if jitter else a)
        except np.linalg.LinAlgError:
            continue
    raise NonPSDDiffusion("diffusion path is not PSD within jitter 1e-10")


def sample_ou_path(
    b: np.ndarray,
    a: np.ndarray,
    m: np.ndarray,
    x0,
    grid: np.ndarray,
    rng: np.random.Generator,
    *,
    n_paths: int = 1,
    keep: str = "path",
) -> np.ndarray:
    """Euler-Maruyama sampling of the limit process.

    With ``keep='path'`` returns the full (G+1, L) trajectory of a single
    path (or (G+1, n_paths, L)); with ``keep='terminal'`` returns only the
    (n_paths, L) endpoint samples, which is what the Monte Carlo
    cross-check needs.
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if b.shape[0] != grid.shape[0] or a.shape[0] != grid.shape[0]:
        raise GridMismatch("drift/diffusion paths must be sampled on the grid")
    h = grid[1] - grid[0]
    sqrt_h = np.sqrt(h)
    chol = _cholesky_paths(a, PSD_TOL)

    n_q = b.shape[1]
    x = np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    if keep == "path":
        out = np.empty((grid.shape[0], n_paths, n_q))
        out[0] = x
    for g in range(grid.shape[0] - 1):
        noise = rng.standard_normal((n_paths, n_q))
        x = x + (b[g][None, :] + x @ m.T) * h + sqrt_h * (noise @ chol[g].T)
        if keep == "path":
            out[g + 1] = x
    if keep == "path":
        return out[:, 0, :] if n_paths == 1 else out
    return x
