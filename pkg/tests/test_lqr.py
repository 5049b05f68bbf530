import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.linalg import expm, solve_continuous_are, solve_discrete_are, sqrtm

from ukmp import lqr
from ukmp.errors import ConvergenceError, FactorizationError, NotDetectableError, ValidationError


def hamiltonian_care(A, B, Q, R):
    """Stabilizing CARE solution from the stable invariant subspace of the Hamiltonian."""
    n = A.shape[0]
    H = np.block([[A, -B @ np.linalg.solve(R, B.T)], [-Q, -A.T]])
    w, v = np.linalg.eig(H)
    stable = v[:, w.real < 0]
    assert stable.shape[1] == n
    P = np.real(stable[n:] @ np.linalg.inv(stable[:n]))
    return 0.5 * (P + P.T)


def closed_form_scalar(q1, q2, r):
    kp = np.sqrt(q1 / r)
    return kp, np.sqrt(q2 / r + 2 * kp)


def _random_pd(rng, n, floor=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T + floor * np.eye(n)


class TestDoubleIntegrator:
    def test_scalar_blocks(self):
        s = lqr.double_integrator(1)
        assert_allclose(s.A, [[0, 1], [0, 0]])
        assert_allclose(s.B, [[0], [1]])
        assert_allclose(np.linalg.eigvals(s.A), [0, 0])

    def test_three_axes(self):
        s = lqr.double_integrator(3)
        assert s.A.shape == (6, 6)
        assert_allclose(s.A[:3, 3:], np.eye(3))
        assert np.count_nonzero(s.A) == 3
        assert np.linalg.matrix_rank(lqr.controllability_matrix(s)) == 6
        assert lqr.is_controllable(s)

    def test_rejects_zero_axes(self):
        with pytest.raises(ValidationError):
            lqr.double_integrator(0)


class TestWeightFromCov:
    def test_identity(self):
        assert_allclose(lqr.weight_from_cov(np.eye(3)), np.diag([1, 1, 1, 0, 0, 0]))

    def test_scalar(self):
        assert_allclose(lqr.weight_from_cov([[2.0]]), np.diag([0.5, 0.0]))

    def test_two_by_two_inverse(self):
        Q = lqr.weight_from_cov([[2.0, 1.0], [1.0, 2.0]], velocity_weight=0.3)
        assert_allclose(Q[:2, :2], np.array([[2, -1], [-1, 2]]) / 3, atol=1e-15)
        assert_allclose(Q[2:, 2:], 0.3 * np.eye(2))
        assert_allclose(Q[:2, 2:], 0.0)

    def test_singular_cov(self):
        with pytest.raises(FactorizationError, match="KMP model"):
            lqr.weight_from_cov(np.zeros((2, 2)))

    def test_negative_velocity_weight(self):
        with pytest.raises(ValidationError):
            lqr.weight_from_cov(np.eye(1), velocity_weight=-1.0)


class TestInfiniteHorizon:
    def test_unit_case(self):
        g = lqr.infinite_horizon_gains(lqr.double_integrator(1), np.diag([1.0, 0.0]), [[1.0]])
        assert_allclose(g.Kp, [[1.0]], atol=1e-12)
        assert_allclose(g.Kv, [[np.sqrt(2)]], atol=1e-12)

    @pytest.mark.parametrize("q1, q2, r", [(1, 0, 1), (4, 0, 0.01), (0.3, 2.0, 5.0), (1e4, 0, 1e-2)])
    def test_scalar_closed_form_and_hamiltonian(self, q1, q2, r):
        s = lqr.double_integrator(1)
        Q, R = np.diag([q1, q2]), np.array([[r]])
        g = lqr.infinite_horizon_gains(s, Q, R)
        kp, kv = closed_form_scalar(q1, q2, r)
        assert_allclose([g.Kp[0, 0], g.Kv[0, 0]], [kp, kv], rtol=1e-8)
        P = hamiltonian_care(s.A, s.B, Q, R)
        assert_allclose(g.K, np.linalg.solve(R, s.B.T @ P), rtol=1e-8)

    def test_decoupled_axes(self):
        var = np.array([0.01, 0.04, 0.25])
        g = lqr.infinite_horizon_gains(lqr.double_integrator(3),
                                       lqr.weight_from_cov(np.diag(var)), 1e-2 * np.eye(3))
        assert_allclose(g.Kp, np.diag(10 / np.sqrt(var)), rtol=1e-8, atol=1e-10)

    def test_matrix_square_root_form(self):
        rng = np.random.default_rng(3)
        cov = _random_pd(rng, 3) * 0.01
        r = 0.01
        g = lqr.infinite_horizon_gains(lqr.double_integrator(3), lqr.weight_from_cov(cov),
                                       r * np.eye(3))
        kp = np.real(sqrtm(np.linalg.inv(cov) / r))
        assert_allclose(g.Kp, kp, rtol=1e-8)
        assert_allclose(g.Kv, np.real(sqrtm(2 * kp)), rtol=1e-8)

    def test_compliance_limit(self):
        s = lqr.double_integrator(1)
        gains = [lqr.infinite_horizon_gains(s, np.diag([q, 0.0]), [[1.0]]).Kp[0, 0]
                 for q in (1e-2, 1e-4, 1e-8)]
        assert gains[0] > gains[1] > gains[2]
        assert gains[2] < 1e-3

    def test_stiffness_increases_with_q(self):
        s = lqr.double_integrator(1)
        qs = np.logspace(-3, 3, 13)
        kp = [lqr.infinite_horizon_gains(s, np.diag([q, 0.0]), [[0.01]]).Kp[0, 0] for q in qs]
        assert np.all(np.diff(kp) > 0)

    @pytest.mark.parametrize("n_c", [1, 2, 3])
    def test_random_fixtures(self, n_c):
        rng = np.random.default_rng(n_c)
        s = lqr.double_integrator(n_c)
        for _ in range(34):
            Q = _random_pd(rng, 2 * n_c, 0.01)
            R = _random_pd(rng, n_c, 0.05)
            g = lqr.infinite_horizon_gains(s, Q, R)
            P = g.riccati
            assert np.linalg.norm(lqr.care_residual(s.A, s.B, Q, R, P)) < 1e-8 * np.linalg.norm(Q)
            assert np.max(np.abs(P - P.T)) < 1e-10 * max(1.0, np.max(np.abs(P)))
            assert np.max(np.linalg.eigvals(s.A - s.B @ g.K).real) < -1e-12
            assert_allclose(P, solve_continuous_are(s.A, s.B, Q, R), rtol=1e-7, atol=1e-9)

    def test_warm_start_gives_same_answer(self):
        s = lqr.double_integrator(2)
        Q1 = lqr.weight_from_cov(np.diag([0.01, 0.02]))
        Q2 = lqr.weight_from_cov(np.diag([0.011, 0.019]))
        R = 0.01 * np.eye(2)
        cold = lqr.infinite_horizon_gains(s, Q2, R)
        warm = lqr.infinite_horizon_gains(s, Q2, R, initial_gains=lqr.infinite_horizon_gains(s, Q1, R))
        assert_allclose(warm.K, cold.K, rtol=1e-9, atol=1e-10 * np.linalg.norm(cold.K))

    def test_not_detectable(self):
        s = lqr.double_integrator(1)
        with pytest.raises(NotDetectableError, match="unobserved"):
            lqr.infinite_horizon_gains(s, np.diag([0.0, 1.0]), [[1.0]])

    def test_iteration_limit_reported(self):
        s = lqr.double_integrator(1)
        with pytest.raises(ConvergenceError, match="residual"):
            lqr.solve_care(s.A, s.B, np.diag([1.0, 0.0]), [[1.0]], max_iter=1)

    @pytest.mark.parametrize("Q, R", [
        (np.array([[1.0, 0.5], [0.0, 1.0]]), [[1.0]]),
        (np.diag([1.0, 0.0]), [[0.0]]),
        (np.diag([-1.0, 0.0]), [[1.0]]),
        (np.eye(3), [[1.0]]),
    ])
    def test_weight_validation(self, Q, R):
        with pytest.raises(ValidationError):
            lqr.infinite_horizon_gains(lqr.double_integrator(1), Q, R)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(0.0, 10.0), st.floats(1e-3, 10.0))
    def test_closed_form_property(self, q1, q2, r):
        g = lqr.infinite_horizon_gains(lqr.double_integrator(1), np.diag([q1, q2]), [[r]])
        kp, kv = closed_form_scalar(q1, q2, r)
        assert_allclose([g.Kp[0, 0], g.Kv[0, 0]], [kp, kv], rtol=1e-8)


class TestDiscrete:
    def test_zoh_matches_expm(self):
        s = lqr.double_integrator(2)
        Ad, Bd = lqr.zoh_discretize(s, 0.01)
        assert_allclose(Ad, expm(s.A * 0.01), atol=1e-15)
        assert_allclose(Bd[:2], 0.5 * 0.01 ** 2 * np.eye(2), atol=1e-15)
        assert_allclose(Bd[2:], 0.01 * np.eye(2), atol=1e-15)

    def test_dare_against_scipy(self):
        rng = np.random.default_rng(0)
        s = lqr.double_integrator(2)
        Ad, Bd = lqr.zoh_discretize(s, 0.05)
        for _ in range(5):
            Q, R = _random_pd(rng, 4, 0.01), _random_pd(rng, 2, 0.1)
            P, K = lqr.solve_dare(Ad, Bd, Q, R)
            assert_allclose(P, solve_discrete_are(Ad, Bd, Q, R), rtol=1e-7)
            assert np.max(np.abs(np.linalg.eigvals(Ad - Bd @ K))) < 1

    def test_large_control_penalty(self):
        gains = lqr.finite_horizon_gains(lqr.double_integrator(1), [np.diag([1.0, 0.0])],
                                         1e6 * np.eye(1), 0.01)
        assert len(gains) == 1
        assert np.linalg.norm(gains[0].K) < 1e-2

    def test_zero_terminal_cost(self):
        gains = lqr.finite_horizon_gains(lqr.double_integrator(2), [np.eye(4)], np.eye(2), 0.1,
                                         terminal_Q=np.zeros((4, 4)))
        assert_allclose(gains[0].K, 0.0)

    def test_default_terminal_is_last_weight(self):
        s = lqr.double_integrator(1)
        Qs = [np.diag([1.0, 0.0]), np.diag([5.0, 0.0])]
        a = lqr.finite_horizon_gains(s, Qs, [[1.0]], 0.1)
        b = lqr.finite_horizon_gains(s, Qs, [[1.0]], 0.1, terminal_Q=Qs[-1])
        assert_allclose(a[0].K, b[0].K)

    def test_recursion_by_hand(self):
        s = lqr.double_integrator(1)
        Ad, Bd = lqr.zoh_discretize(s, 0.1)
        Q, R = np.diag([2.0, 0.5]), np.array([[0.3]])
        gains = lqr.finite_horizon_gains(s, [Q, Q], R, 0.1)
        P2 = Q
        K1 = np.linalg.solve(R + Bd.T @ P2 @ Bd, Bd.T @ P2 @ Ad)
        P1 = Q + Ad.T @ P2 @ Ad - Ad.T @ P2 @ Bd @ K1
        K0 = np.linalg.solve(R + Bd.T @ P1 @ Bd, Bd.T @ P1 @ Ad)
        assert_allclose(gains[1].K, K1, rtol=1e-12)
        assert_allclose(gains[0].K, K0, rtol=1e-12)

    def test_empty_sequence(self):
        with pytest.raises(ValidationError):
            lqr.finite_horizon_gains(lqr.double_integrator(1), [], [[1.0]], 0.1)

    def test_bad_dt(self):
        with pytest.raises(ValidationError):
            lqr.zoh_discretize(lqr.double_integrator(1), 0.0)


class TestControlCommand:
    def test_zero_error(self):
        g = lqr.ControlGains(np.eye(2), np.eye(2))
        assert_allclose(lqr.control_command(g, np.ones(4), np.ones(4)), 0.0)

    def test_position_error_passes_through(self):
        g = lqr.ControlGains(np.eye(3), np.sqrt(2) * np.eye(3))
        e = np.array([0.1, -0.2, 0.3])
        assert_allclose(lqr.control_command(g, np.concatenate([e, np.zeros(3)]), np.zeros(6)), e)

    def test_linear_in_error(self):
        rng = np.random.default_rng(0)
        g = lqr.ControlGains(_random_pd(rng, 2), _random_pd(rng, 2))
        e = rng.standard_normal(4)
        u1 = lqr.control_command(g, e, np.zeros(4))
        assert_allclose(lqr.control_command(g, 2 * e, np.zeros(4)), 2 * u1)

    def test_shape_checked(self):
        with pytest.raises(ValidationError):
            lqr.control_command(lqr.ControlGains(np.eye(1), np.eye(1)), np.zeros(3), np.zeros(3))
