import numpy as np
import pytest
from scipy.linalg import expm as scipy_expm

from mmq import (
    averaged_rates,
    chain_summary,
    expm_fixed,
    fluid_limit,
    integral_map_H,
    ou_diffusion,
    ou_drift,
    ou_moments,
    sample_ou_path,
    uniform_grid,
    validate_generator,
    validate_network,
)
from mmq.errors import GridMismatch, NonPSDDiffusion

GEN2 = validate_generator([[-1.0, 1.0], [1.0, -1.0]])
GEN1 = validate_generator([[0.0]])


def tandem(gen, lam1, mu12, lam_hat1=None, mu_hat12=None):
    d = gen.d
    lam = np.zeros((2, d))
    lam[0] = lam1
    mu = np.zeros((2, 2, d))
    mu[0, 1] = mu12
    lam_hat = None
    mu_hat = None
    if lam_hat1 is not None:
        lam_hat = np.zeros((2, d))
        lam_hat[0] = lam_hat1
    if mu_hat12 is not None:
        mu_hat = np.zeros((2, 2, d))
        mu_hat[0, 1] = mu_hat12
    return validate_network(gen, lam, mu, lam_hat, mu_hat)


def sink_average(lam1=(2.0, 4.0), mu12=(1.0, 1.0), **kw):
    spec = tandem(GEN2, lam1, mu12, **kw)
    return spec, averaged_rates(spec, chain_summary(GEN2))


class TestExpmFixed:
    @pytest.mark.parametrize("scale", [0.01, 1.0, 8.0, 40.0])
    def test_against_scipy(self, scale):
        rng = np.random.default_rng(50)
        for d in (2, 3, 5):
            a = scale * rng.standard_normal((d, d))
            got = expm_fixed(a)
            want = scipy_expm(a)
            np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-11 * scale)

    def test_zero_matrix(self):
        np.testing.assert_allclose(expm_fixed(np.zeros((3, 3))), np.eye(3), atol=1e-15)


class TestFluidLimit:
    def test_zero_rates_stay_zero(self):
        _, avg = sink_average(lam1=(0.0, 0.0), mu12=(1.0, 1.0))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 0.01)
        assert np.all(fluid.rho == 0.0)

    def test_closed_form_sink(self):
        _, avg = sink_average()
        fluid = fluid_limit(avg, np.zeros(2), 10.0, 1e-3)
        t = fluid.grid
        rho1 = 3.0 * (1.0 - np.exp(-t))
        rho2 = 3.0 * t - rho1
        assert np.abs(fluid.rho[:, 0] - rho1).max() < 1e-8
        assert np.abs(fluid.rho[:, 1] - rho2).max() < 1e-8

    def test_mass_balance(self):
        _, avg = sink_average()
        fluid = fluid_limit(avg, np.array([0.5, 0.0]), 10.0, 1e-3)
        drift_total = avg.lambda_pi.sum()
        expected = 0.5 + drift_total * fluid.grid
        assert np.abs(fluid.rho.sum(axis=1) - expected).max() < 1e-8

    def test_fourth_order_convergence(self):
        _, avg = sink_average()

        def max_err(h):
            fluid = fluid_limit(avg, np.zeros(2), 2.0, h)
            exact = 3.0 * (1.0 - np.exp(-fluid.grid))
            return np.abs(fluid.rho[:, 0] - exact).max()

        ratio = max_err(0.02) / max_err(0.01)
        assert 12.0 < ratio < 20.0


class TestIntegralMap:
    def test_zero_drift_returns_shifted_input(self):
        grid = uniform_grid(1.0, 0.1)
        x = np.random.default_rng(51).standard_normal((grid.shape[0], 2))
        y = integral_map_H(np.array([1.0, -2.0]), x, np.zeros((2, 2)), grid)
        np.testing.assert_allclose(y, np.array([1.0, -2.0]) + x, rtol=1e-12, atol=1e-12)

    def test_zero_input_matches_matrix_exponential(self):
        m = np.array([[-1.0, 0.3], [0.7, -0.9]])
        grid = uniform_grid(3.0, 0.01)
        b = np.array([2.0, -1.0])
        y = integral_map_H(b, np.zeros((grid.shape[0], 2)), m, grid)
        for g in (50, 150, 300):
            want = scipy_expm(m * grid[g]) @ b
            np.testing.assert_allclose(y[g], want, atol=1e-9)

    def test_step_input_matches_picard_oracle(self):
        # Fixed-point iteration on a 10x finer grid with the same
        # staircase input is an independent route to the same solution.
        m = np.array([[-0.8, 0.2], [0.5, -0.6]])
        coarse = uniform_grid(1.0, 0.005)
        c = np.array([1.5, -0.7])
        t0 = 0.35
        x_coarse = np.where(coarse[:, None] >= t0 - 1e-12, c[None, :], 0.0)
        y = integral_map_H(np.array([0.3, 0.1]), x_coarse, m, coarse)

        fine = uniform_grid(1.0, 0.0005)
        x_fine = np.where(fine[:, None] >= t0 - 1e-12, c[None, :], 0.0)
        dx_fine = np.vstack([np.zeros(2), np.diff(x_fine, axis=0)])
        yf = np.array([0.3, 0.1]) + x_fine
        h = fine[1] - fine[0]
        for _ in range(60):
            # Trapezoid with pre-jump right-node values: the solution jumps
            # with the staircase input, so the integrand must not.
            left = yf[:-1] @ m.T
            right = (yf[1:] - dx_fine[1:]) @ m.T
            cum = np.zeros_like(yf)
            np.cumsum(0.5 * h * (left + right), axis=0, out=cum[1:])
            yf = np.array([0.3, 0.1]) + x_fine + cum
        np.testing.assert_allclose(y, yf[::10], atol=1e-6)

    def test_fixed_point_residual(self):
        # Substituting the solution into the right side reproduces it;
        # Simpson quadrature of the smooth integrand keeps the residual
        # far below the 1e-8 gate.
        m = np.array([[-0.5, 0.1], [0.3, -0.4]])
        grid = uniform_grid(2.0, 2.5e-4)
        x = np.stack([np.sin(grid), 0.5 * np.cos(2 * grid) - 0.5], axis=1)
        b = np.array([0.2, -0.1])
        y = integral_map_H(b, x, m, grid)
        dx = np.vstack([np.zeros(2), np.diff(x, axis=0)])
        left = y[:-1] @ m.T
        right = (y[1:] - dx[1:]) @ m.T
        h = grid[1] - grid[0]
        cum = np.zeros_like(y)
        np.cumsum(0.5 * h * (left + right), axis=0, out=cum[1:])
        check = b + x + cum
        assert np.abs(check - y).max() < 1e-8

    def test_gronwall_continuity(self):
        m = np.array([[-1.0, 0.4], [0.2, -0.7]])
        grid = uniform_grid(2.0, 0.01)
        rng = np.random.default_rng(52)
        x = rng.standard_normal((grid.shape[0], 2)).cumsum(axis=0) * 0.05
        b = np.zeros(2)
        eps = 1e-3
        y0 = integral_map_H(b, x, m, grid)
        y1 = integral_map_H(b, x + eps, m, grid)
        bound = eps * np.exp(np.linalg.norm(m, 1) * grid[-1])
        assert np.abs(y1 - y0).max() <= bound + 1e-12

    def test_grid_mismatch(self):
        grid = uniform_grid(1.0, 0.1)
        with pytest.raises(GridMismatch):
            integral_map_H(np.zeros(2), np.zeros((5, 2)), np.zeros((2, 2)), grid)


class TestOuDrift:
    def test_zero_hats(self):
        spec, avg = sink_average()
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 0.01)
        assert np.all(ou_drift(avg, fluid) == 0.0)

    def test_constant_arrival_perturbation(self):
        spec, avg = sink_average(lam_hat1=(2.0, 2.0))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 0.01)
        b = ou_drift(avg, fluid)
        np.testing.assert_allclose(b[:, 0], 2.0, atol=1e-12)
        np.testing.assert_allclose(b[:, 1], 0.0, atol=1e-12)

    def test_service_perturbation_follows_fluid(self):
        spec, avg = sink_average(lam1=(3.0, 3.0), mu_hat12=(1.0, 1.0))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 1e-3)
        b = ou_drift(avg, fluid)
        rho1 = 3.0 * (1.0 - np.exp(-fluid.grid))
        np.testing.assert_allclose(b[:, 0], -rho1, atol=1e-7)
        np.testing.assert_allclose(b[:, 1], rho1, atol=1e-7)


class TestOuDiffusion:
    def test_poisson_part_at_equilibrium(self):
        gen1 = GEN1
        spec = tandem(gen1, (3.0,), (1.0,))
        avg = averaged_rates(spec, chain_summary(gen1))
        fluid = fluid_limit(avg, np.array([3.0, 0.0]), 5.0, 0.01)
        a = ou_diffusion(spec, avg, chain_summary(gen1), fluid, alpha=2.0)
        np.testing.assert_allclose(a[:, 0, 0], 6.0, atol=1e-9)
        np.testing.assert_allclose(a[:, 0, 1], -3.0, atol=1e-9)
        np.testing.assert_allclose(a[:, 1, 1], 3.0, atol=1e-9)

    def test_quiet_network_has_no_noise(self):
        spec, avg = sink_average(lam1=(0.0, 0.0))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 0.01)
        a = ou_diffusion(spec, avg, chain_summary(GEN2), fluid, alpha=2.0)
        assert np.all(a == 0.0)

    def test_modulation_part_at_time_zero(self):
        spec, avg = sink_average(lam1=(0.0, 2.0), mu12=(1e-3, 1e-3))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 0.01)
        a = ou_diffusion(spec, avg, chain_summary(GEN2), fluid, alpha=0.5)
        assert a[0, 0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_regimes_add_at_alpha_one(self):
        spec, avg = sink_average(lam1=(1.0, 3.0), mu12=(0.5, 1.5))
        summary = chain_summary(GEN2)
        fluid = fluid_limit(avg, np.array([0.7, 0.0]), 4.0, 0.01)
        both = ou_diffusion(spec, avg, summary, fluid, alpha=1.0)
        poisson = ou_diffusion(spec, avg, summary, fluid, alpha=1.5)
        modulation = ou_diffusion(spec, avg, summary, fluid, alpha=0.5)
        np.testing.assert_allclose(both, poisson + modulation, rtol=1e-13, atol=1e-14)

    def test_psd_along_path(self):
        spec, avg = sink_average(lam1=(1.0, 3.0), mu12=(0.5, 1.5))
        fluid = fluid_limit(avg, np.array([0.7, 0.2]), 4.0, 0.01)
        a = ou_diffusion(spec, avg, chain_summary(GEN2), fluid, alpha=1.0)
        assert np.linalg.eigvalsh(a).min() >= -1e-9


class TestOuMoments:
    def test_all_zero(self):
        grid = uniform_grid(1.0, 0.01)
        mom = ou_moments(
            np.zeros((grid.shape[0], 2)), np.zeros((grid.shape[0], 2, 2)),
            np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), grid,
        )
        assert np.all(mom.mean_m == 0.0) and np.all(mom.cov_V == 0.0)

    def test_equilibrium_variance_closed_form(self):
        # Constant diffusion 2*lambda with drift -mu: the stationary
        # variance lambda/mu is reached to within solver accuracy.
        gen1 = GEN1
        spec = tandem(gen1, (3.0,), (1.0,))
        avg = averaged_rates(spec, chain_summary(gen1))
        fluid = fluid_limit(avg, np.array([3.0, 0.0]), 10.0, 1e-3)
        a = ou_diffusion(spec, avg, chain_summary(gen1), fluid, alpha=2.0)
        mom = ou_moments(
            ou_drift(avg, fluid), a, avg.M, np.zeros(2), np.zeros((2, 2)), fluid.grid
        )
        assert abs(mom.cov_V[-1, 0, 0] - 3.0) < 1e-6

    def test_linear_mean_without_drift_matrix(self):
        grid = uniform_grid(2.0, 0.01)
        b = np.tile(np.array([1.5, -0.5]), (grid.shape[0], 1))
        mom = ou_moments(
            b, np.zeros((grid.shape[0], 2, 2)), np.zeros((2, 2)),
            np.array([1.0, 1.0]), np.zeros((2, 2)), grid,
        )
        np.testing.assert_allclose(
            mom.mean_m[-1], np.array([1.0, 1.0]) + 2.0 * np.array([1.5, -0.5]),
            rtol=1e-12, atol=1e-12,
        )

    def test_covariance_symmetric(self):
        spec, avg = sink_average(lam1=(1.0, 3.0))
        fluid = fluid_limit(avg, np.zeros(2), 4.0, 0.01)
        a = ou_diffusion(spec, avg, chain_summary(GEN2), fluid, alpha=1.0)
        mom = ou_moments(
            ou_drift(avg, fluid), a, avg.M, np.zeros(2), np.zeros((2, 2)), fluid.grid
        )
        asym = np.abs(mom.cov_V - np.transpose(mom.cov_V, (0, 2, 1))).max()
        assert asym == 0.0

    def test_rejects_indefinite_diffusion(self):
        grid = uniform_grid(1.0, 0.1)
        a = np.tile(np.diag([1.0, -1e-3]), (grid.shape[0], 1, 1))
        with pytest.raises(NonPSDDiffusion):
            ou_moments(np.zeros((grid.shape[0], 2)), a, np.zeros((2, 2)),
                       np.zeros(2), np.zeros((2, 2)), grid)

    def test_asymmetry_before_symmetrization_is_roundoff(self):
        # One raw fourth-order step of the covariance ODE picks up only
        # float-level asymmetry; the per-step symmetrization then removes it.
        rng = np.random.default_rng(56)
        m = rng.standard_normal((3, 3))
        a = rng.standard_normal((3, 3))
        a = a @ a.T
        v = rng.standard_normal((3, 3))
        v = v @ v.T
        h = 0.01

        def rhs(y):
            return m @ y + y @ m.T + a

        k1 = rhs(v)
        k2 = rhs(v + h / 2 * k1)
        k3 = rhs(v + h / 2 * k2)
        k4 = rhs(v + h * k3)
        raw = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert np.abs(raw - raw.T).max() < 1e-10


class TestSampleOuPath:
    def test_noiseless_path_tracks_mean_ode(self):
        spec, avg = sink_average(lam_hat1=(2.0, 2.0))
        fluid = fluid_limit(avg, np.zeros(2), 4.0, 1e-3)
        b = ou_drift(avg, fluid)
        a = np.zeros((fluid.grid.shape[0], 2, 2))
        mom = ou_moments(b, a, avg.M, np.zeros(2), np.zeros((2, 2)), fluid.grid)
        path = sample_ou_path(b, a, avg.M, np.zeros(2), fluid.grid,
                              np.random.default_rng(53))
        assert np.abs(path - mom.mean_m).max() < 0.01

    def test_deterministic_given_seed(self):
        spec, avg = sink_average(lam1=(1.0, 3.0))
        fluid = fluid_limit(avg, np.zeros(2), 2.0, 0.01)
        b = ou_drift(avg, fluid)
        a = ou_diffusion(spec, avg, chain_summary(GEN2), fluid, alpha=1.0)
        p1 = sample_ou_path(b, a, avg.M, np.zeros(2), fluid.grid, np.random.default_rng(54))
        p2 = sample_ou_path(b, a, avg.M, np.zeros(2), fluid.grid, np.random.default_rng(54))
        np.testing.assert_array_equal(p1, p2)

    def test_terminal_variance_matches_lyapunov(self):
        gen1 = GEN1
        spec = tandem(gen1, (3.0,), (1.0,))
        avg = averaged_rates(spec, chain_summary(gen1))
        fluid = fluid_limit(avg, np.zeros(2), 5.0, 1e-3)
        b = ou_drift(avg, fluid)
        a = ou_diffusion(spec, avg, chain_summary(gen1), fluid, alpha=2.0)
        mom = ou_moments(b, a, avg.M, np.zeros(2), np.zeros((2, 2)), fluid.grid)
        ends = sample_ou_path(
            b, a, avg.M, np.zeros(2), fluid.grid, np.random.default_rng(55),
            n_paths=20000, keep="terminal",
        )
        emp = ends[:, 0].var(ddof=1)
        ref = mom.cov_V[-1, 0, 0]
        assert abs(emp - ref) / ref < 0.05
