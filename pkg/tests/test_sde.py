import numpy as np
import pytest
import scipy.linalg

from sck import (
    ConstantControl,
    FeedbackControl,
    PiecewiseConstantControl,
    SimConfig,
    StochasticSystem,
    ZeroControl,
    brownian_increments,
    ensemble_moments,
    fit_convergence_order,
    girsanov_check,
    simulate_flow,
    simulate_forward,
)
from sck.exceptions import DimensionError, DomainError, StabilityError


def scalar_system(a=-1.0, c=0.5):
    return StochasticSystem(np.array([[a]]), np.zeros((1, 1)), C=np.array([[c]]))


class TestSimConfig:
    def test_grid_must_divide(self):
        with pytest.raises(DomainError):
            SimConfig(T=1.0, dt=0.3, n_paths=10, seed=1)

    def test_basic_validation(self):
        with pytest.raises(DomainError):
            SimConfig(T=-1.0, dt=0.1, n_paths=10, seed=1)
        with pytest.raises(DomainError):
            SimConfig(T=1.0, dt=0.1, n_paths=1, seed=1)
        with pytest.raises(DomainError):
            SimConfig(T=1.0, dt=0.1, n_paths=10, seed=1, regression_degree=7)
        with pytest.raises(DomainError):
            SimConfig(T=1.0, dt=0.1, n_paths=10, seed=-1)

    def test_grid_properties(self):
        cfg = SimConfig(T=1.0, dt=0.25, n_paths=2, seed=0)
        assert cfg.n_steps == 4
        assert np.allclose(cfg.times, [0.0, 0.25, 0.5, 0.75, 1.0])


class TestBrownianSource:
    def test_block_consistency(self):
        cfg = SimConfig(T=1.0, dt=0.05, n_paths=64, seed=123)
        full = brownian_increments(cfg)
        block = brownian_increments(cfg, 7, 15)
        assert np.array_equal(full[:, 7:15], block)

    def test_seed_sensitivity(self):
        cfg1 = SimConfig(T=1.0, dt=0.1, n_paths=16, seed=1)
        cfg2 = SimConfig(T=1.0, dt=0.1, n_paths=16, seed=2)
        assert not np.array_equal(brownian_increments(cfg1), brownian_increments(cfg2))

    def test_statistics(self):
        cfg = SimConfig(T=1.0, dt=1e-2, n_paths=2000, seed=99)
        inc = brownian_increments(cfg)
        n_total = inc.size
        assert abs(inc.mean()) <= 5.0 / np.sqrt(n_total) * np.sqrt(cfg.dt)
        assert abs(inc.var() / cfg.dt - 1.0) <= 0.1


class TestSimulateForward:
    def test_noiseless_matches_semigroup(self):
        A = np.array([[-1.0, 0.4], [0.0, -2.0]])
        s = StochasticSystem(A, np.zeros((2, 1)))
        cfg = SimConfig(T=1.0, dt=1e-3, n_paths=2, seed=0)
        x0 = np.array([1.0, -0.5])
        ens = simulate_forward(s, x0, ZeroControl(), cfg)
        worst = 0.0
        for i, t in enumerate(ens.times):
            exact = scipy.linalg.expm(t * A) @ x0
            worst = max(worst, np.linalg.norm(ens.states[0, i] - exact))
        assert worst <= 5.0 * cfg.dt  # first-order deterministic Euler error

    def test_initial_state_recorded(self):
        s = scalar_system()
        cfg = SimConfig(T=0.5, dt=0.05, n_paths=7, seed=4)
        ens = simulate_forward(s, [2.0], ZeroControl(), cfg)
        assert np.all(ens.states[:, 0, 0] == 2.0)

    def test_geometric_mean_and_second_moment(self):
        a, c, x0 = -1.0, 0.5, 1.0
        s = scalar_system(a, c)
        cfg = SimConfig(T=1.0, dt=1e-3, n_paths=100_000, seed=7)
        ens = simulate_forward(s, [x0], ZeroControl(), cfg)
        xT = ens.states[:, -1, 0]
        m1, se1 = xT.mean(), xT.std(ddof=1) / np.sqrt(len(xT))
        assert abs(m1 - x0 * np.exp(a)) <= 3 * se1 + 5 * cfg.dt
        sq = xT**2
        m2, se2 = sq.mean(), sq.std(ddof=1) / np.sqrt(len(sq))
        assert abs(m2 - x0**2 * np.exp(2 * a + c**2)) <= 3 * se2 + 5 * cfg.dt

    def test_bit_reproducible(self):
        s = scalar_system()
        cfg = SimConfig(T=1.0, dt=0.01, n_paths=50, seed=5)
        e1 = simulate_forward(s, [1.0], ZeroControl(), cfg)
        e2 = simulate_forward(s, [1.0], ZeroControl(), cfg)
        assert np.array_equal(e1.states, e2.states)
        assert np.array_equal(e1.increments, e2.increments)

    def test_affine_in_initial_state(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((3, 3)) - 3 * np.eye(3)
        B = rng.standard_normal((3, 2))
        C = 0.3 * rng.standard_normal((3, 3))
        s = StochasticSystem(A, B, C=C)
        cfg = SimConfig(T=0.5, dt=0.01, n_paths=20, seed=11)
        u = ConstantControl(np.array([0.3, -0.2]))
        x0 = np.array([1.0, 0.0, -1.0])
        y0 = np.array([0.5, 2.0, 0.25])
        e_sum = simulate_forward(s, x0 + y0, u, cfg)
        e_x = simulate_forward(s, x0, u, cfg)
        e_y = simulate_forward(s, y0, ZeroControl(), cfg)
        assert np.allclose(e_sum.states, e_x.states + e_y.states, rtol=1e-12, atol=1e-12)

    def test_blowup_detected(self):
        s = StochasticSystem(np.array([[50.0]]), np.zeros((1, 1)))
        cfg = SimConfig(T=10.0, dt=1.0, n_paths=2, seed=0)
        with pytest.raises(StabilityError):
            simulate_forward(s, [1.0], ZeroControl(), cfg)

    def test_record_steps_subset(self):
        s = scalar_system()
        cfg = SimConfig(T=1.0, dt=0.1, n_paths=5, seed=2)
        full = simulate_forward(s, [1.0], ZeroControl(), cfg)
        part = simulate_forward(s, [1.0], ZeroControl(), cfg, record_steps=[5])
        assert np.allclose(part.times, [0.0, 0.5, 1.0])
        assert np.array_equal(part.states[:, 1, 0], full.states[:, 5, 0])

    def test_control_shapes_validated(self):
        s = scalar_system()
        cfg = SimConfig(T=1.0, dt=0.5, n_paths=2, seed=0)
        with pytest.raises(DimensionError):
            simulate_forward(s, [1.0], ConstantControl(np.ones(3)), cfg)
        with pytest.raises(DimensionError):
            simulate_forward(s, [1.0], PiecewiseConstantControl(np.ones((5, 1))), cfg)
        with pytest.raises(DimensionError):
            simulate_forward(s, [1.0], FeedbackControl(np.ones((2, 2))), cfg)

    def test_piecewise_and_feedback_run(self):
        s = StochasticSystem(np.diag([-1.0, -2.0]), np.eye(2), C=0.1 * np.eye(2))
        cfg = SimConfig(T=1.0, dt=0.25, n_paths=4, seed=6)
        vals = np.arange(8.0).reshape(4, 2)
        e1 = simulate_forward(s, [1.0, 1.0], PiecewiseConstantControl(vals), cfg)
        e2 = simulate_forward(s, [1.0, 1.0], FeedbackControl(-0.5 * np.eye(2)), cfg)
        assert np.all(np.isfinite(e1.states)) and np.all(np.isfinite(e2.states))


class TestSimulateFlow:
    def test_noiseless_flow_equals_euler_exponential(self):
        A = np.array([[-1.0, 0.2], [0.1, -2.0]])
        s = StochasticSystem(A, np.zeros((2, 1)))
        cfg = SimConfig(T=1.0, dt=1e-3, n_paths=2, seed=0)
        fl = simulate_flow(s, cfg, record=False)
        assert np.allclose(fl.flows[0, -1], scipy.linalg.expm(A), atol=5 * cfg.dt)
        assert np.array_equal(fl.flows[0, -1], fl.flows[1, -1])

    def test_initial_flow_is_identity(self):
        s = scalar_system()
        cfg = SimConfig(T=0.2, dt=0.1, n_paths=3, seed=1)
        fl = simulate_flow(s, cfg)
        assert np.all(fl.flows[:, 0, 0, 0] == 1.0)

    def test_mean_flow_matches_semigroup(self):
        rng = np.random.default_rng(17)
        A = rng.standard_normal((2, 2)) - 2.5 * np.eye(2)
        C = 0.5 * rng.standard_normal((2, 2))
        s = StochasticSystem(A, np.zeros((2, 1)), C=C)
        cfg = SimConfig(T=1.0, dt=1e-3, n_paths=20000, seed=19)
        fl = simulate_flow(s, cfg, record=False)
        target = scipy.linalg.expm(A)
        sample = fl.flows[:, -1]
        se = sample.std(axis=0, ddof=1) / np.sqrt(cfg.n_paths)
        assert np.all(np.abs(sample.mean(axis=0) - target) <= 3 * se + 10 * cfg.dt)

    def test_flow_times_initial_state_matches_forward(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((2, 2)) - 2 * np.eye(2)
        C = 0.4 * rng.standard_normal((2, 2))
        s = StochasticSystem(A, np.zeros((2, 1)), C=C)
        cfg = SimConfig(T=0.5, dt=0.01, n_paths=30, seed=29)
        x0 = np.array([1.0, -2.0])
        fl = simulate_flow(s, cfg)
        fw = simulate_forward(s, x0, ZeroControl(), cfg)
        recon = np.einsum("pkij,j->pki", fl.flows, x0)
        assert np.allclose(recon, fw.states, rtol=1e-12, atol=1e-12)


class TestEnsembleMoments:
    def test_matches_full_simulation(self):
        s = scalar_system()
        cfg = SimConfig(T=1.0, dt=0.1, n_paths=40, seed=8)
        times, mean, second = ensemble_moments(s, [1.0], ZeroControl(), cfg)
        ens = simulate_forward(s, [1.0], ZeroControl(), cfg)
        # reduction order differs between streamed and strided means
        assert np.allclose(mean[:, 0], ens.states[:, :, 0].mean(axis=0), rtol=1e-12)
        assert np.allclose(second[:, 0], (ens.states[:, :, 0] ** 2).mean(axis=0), rtol=1e-12)
        assert np.array_equal(times, ens.times)


class TestGirsanov:
    def test_zero_lambda_is_exact(self):
        rng = np.random.default_rng(31)
        A = rng.standard_normal((3, 3)) - 3 * np.eye(3)
        C = 0.5 * rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 2))
        s = StochasticSystem(A, B, C=C)
        cfg = SimConfig(T=1.0, dt=0.01, n_paths=50, seed=37)
        pts = girsanov_check(s, 0.0, np.ones(3), ConstantControl(np.array([1.0, -1.0])), cfg, [0.01])
        assert pts[0][1] == 0.0

    def test_error_decays_with_dt(self):
        from sck import assemble_example2

        s = assemble_example2(4, np.array([1.0, 1.0, 0.1, 0.1]) / np.sqrt(2))
        cfg = SimConfig(T=1.0, dt=0.01, n_paths=2000, seed=41)
        pts = girsanov_check(s, -1.0, np.ones(4), ConstantControl(np.array([1.0])), cfg,
                             [1e-2, 5e-3, 2.5e-3])
        errs = [e for _, e in pts]
        assert errs[0] > errs[1] > errs[2]
        assert fit_convergence_order(pts) >= 0.4

    def test_degenerate_transformed_diffusion(self):
        # C = -lam * I makes the transformed diffusion vanish entirely
        lam = 0.8
        A = np.diag([-1.0, -2.0])
        s = StochasticSystem(A, np.ones((2, 1)), C=-lam * np.eye(2))
        cfg = SimConfig(T=1.0, dt=0.02, n_paths=500, seed=43)
        pts = girsanov_check(s, lam, np.ones(2), ZeroControl(), cfg, [2e-2, 1e-2, 5e-3])
        errs = [e for _, e in pts]
        assert errs[0] > errs[2] > 0.0

    def test_dt_list_validation(self):
        s = scalar_system()
        cfg = SimConfig(T=1.0, dt=0.01, n_paths=10, seed=0)
        with pytest.raises(DomainError):
            girsanov_check(s, 0.5, [1.0], ZeroControl(), cfg, [1e-2, 1e-2])
        with pytest.raises(DomainError):
            girsanov_check(s, 0.5, [1.0], ZeroControl(), cfg, [])
        with pytest.raises(DomainError):
            # 0.3 does not divide the horizon
            girsanov_check(s, 0.5, [1.0], ZeroControl(), cfg, [0.3])


class TestFitOrder:
    def test_clean_power_law(self):
        pts = [(0.1, 0.05), (0.05, 0.025), (0.025, 0.0125)]
        assert fit_convergence_order(pts) == pytest.approx(1.0, abs=1e-12)

    def test_zero_errors_give_none(self):
        assert fit_convergence_order([(0.1, 0.0), (0.05, 0.0)]) is None
        assert fit_convergence_order([(0.1, 1.0)]) is None
