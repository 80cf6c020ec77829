import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mpct import ContinuousModel, LtiModel, PendulumParams, discretize_zoh, expm, linearize_pendulum
from mpct.errors import ContractError, NumericError, SingularDenominatorError
from mpct.plant import pendulum_dynamics


def fd_jacobians(p, x, u, h=1e-6):
    """Central differences of the nonlinear derivative."""
    Ac = np.zeros((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        Ac[:, j] = (pendulum_dynamics(x + e, u, p) - pendulum_dynamics(x - e, u, p)) / (2 * h)
    Bc = (pendulum_dynamics(x, u + h, p) - pendulum_dynamics(x, u - h, p)) / (2 * h)
    return Ac, Bc.reshape(3, 1)


def propagate_linear(Ac, Bc, x0, u, Ts, steps):
    """Fine RK4 integration of x' = Ac x + Bc u with u held constant."""
    f = lambda x: Ac @ x + Bc @ u
    x, h = np.array(x0, dtype=float), Ts / steps
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def zoh_by_integration(cm, Ts, steps):
    n, m = cm.n, cm.m
    A = np.column_stack([propagate_linear(cm.Ac, cm.Bc, np.eye(n)[j], np.zeros(m), Ts, steps) for j in range(n)])
    B = np.column_stack([propagate_linear(cm.Ac, cm.Bc, np.zeros(n), np.eye(m)[j], Ts, steps) for j in range(m)])
    return A, B


class TestLinearization:
    def test_origin_values(self, params):
        cm = linearize_pendulum(params)
        assert cm.Ac[1, 0] == pytest.approx(65.40, abs=5e-3)
        assert cm.Bc[1, 0] == pytest.approx(-0.7409, abs=5e-5)

    def test_closed_form(self, params):
        p = params
        cm = linearize_pendulum(p)
        expected_A = np.array([[0, 1, 0], [p.d / (p.c + 2 * p.b), 0, 0], [0, 0, 0]])
        expected_B = np.array([[0], [-(2 * p.a + p.c) / (p.c + 2 * p.b)], [1]])
        np.testing.assert_allclose(cm.Ac, expected_A, rtol=1e-14)
        np.testing.assert_allclose(cm.Bc, expected_B, rtol=1e-14)

    def test_kinematic_rows(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            p = PendulumParams(*rng.uniform(0.02, 1.0, size=4))
            cm = linearize_pendulum(p)
            np.testing.assert_array_equal(cm.Ac[0], [0, 1, 0])
            np.testing.assert_array_equal(cm.Ac[2], [0, 0, 0])
            assert cm.Bc[2, 0] == 1.0

    def test_no_gravity_term(self):
        cm = linearize_pendulum(PendulumParams(g=0.0))
        assert cm.Ac[1, 0] == 0.0

    @pytest.mark.parametrize(
        "x, u, phi0",
        [
            ([0, 0, 0], 0.0, 0.0),
            ([0, 0, 0], 0.0, 0.02),
            ([0.3, -1.2, 5.0], 10.0, 0.0),
            ([-0.8, 2.0, -20.0], -40.0, 0.05),
        ],
    )
    def test_matches_finite_differences(self, params, x, u, phi0):
        p = params.replace(phi0=phi0)
        cm = linearize_pendulum(p, (x, u))
        Ac, Bc = fd_jacobians(p, np.asarray(x, dtype=float), u)
        assert np.max(np.abs(cm.Ac - Ac)) <= 1e-5
        assert np.max(np.abs(cm.Bc - Bc)) <= 1e-5

    def test_singular_denominator(self):
        # c cos(phi) + 2b vanishes at cos(phi) = -2L/R
        p = PendulumParams(R=0.05, L=0.02)
        phi = np.arccos(-2 * p.L / p.R)
        with pytest.raises(SingularDenominatorError):
            linearize_pendulum(p, ([phi, 0, 0], 0.0))


class TestExpm:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(4, 4)) * rng.uniform(0.1, 5)
        ref = scipy.linalg.expm(M)
        np.testing.assert_allclose(expm(M), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())

    def test_zero(self):
        np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_non_finite(self):
        with pytest.raises(NumericError):
            expm(np.array([[np.nan]]))


class TestZoh:
    def test_zero_dynamics(self):
        lm = discretize_zoh(ContinuousModel(np.zeros((2, 2)), np.eye(2)), 0.02)
        np.testing.assert_allclose(lm.A, np.eye(2), atol=0)
        np.testing.assert_allclose(lm.B, 0.02 * np.eye(2), rtol=1e-15)

    def test_double_integrator(self):
        lm = discretize_zoh(ContinuousModel([[0, 1], [0, 0]], [0, 1]), 0.02)
        np.testing.assert_allclose(lm.A, [[1, 0.02], [0, 1]], rtol=1e-15)
        np.testing.assert_allclose(lm.B, [[0.0002], [0.02]], rtol=1e-13)

    def test_pendulum_vs_integration(self, params):
        cm = linearize_pendulum(params)
        lm = discretize_zoh(cm, 0.02)
        A, B = zoh_by_integration(cm, 0.02, 2000)  # 1e-5 s substeps
        assert np.max(np.abs(lm.A - A)) <= 1e-9
        assert np.max(np.abs(lm.B - B)) <= 1e-9

    @pytest.mark.parametrize("seed", range(20))
    def test_random_models_vs_integration(self, seed):
        rng = np.random.default_rng(seed)
        # alternate stable and unstable spectra
        Ac = rng.normal(size=(3, 3)) + (2.0 if seed % 2 else -2.0) * np.eye(3)
        cm = ContinuousModel(Ac, rng.normal(size=(3, 1)))
        lm = discretize_zoh(cm, 0.02)
        A, B = zoh_by_integration(cm, 0.02, 400)
        assert max(np.max(np.abs(lm.A - A)), np.max(np.abs(lm.B - B))) <= 1e-8

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=9, max_size=9),
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
        st.floats(1e-3, 0.1),
    )
    def test_semigroup(self, a, b, Ts):
        cm = ContinuousModel(np.reshape(a, (3, 3)), np.reshape(b, (3, 1)))
        one, two = discretize_zoh(cm, Ts), discretize_zoh(cm, 2 * Ts)
        assert np.max(np.abs(two.A - one.A @ one.A)) <= 1e-10
        assert np.max(np.abs(two.B - (one.A @ one.B + one.B))) <= 1e-10

    def test_bad_sample_time(self, params):
        with pytest.raises(ContractError):
            discretize_zoh(linearize_pendulum(params), 0.0)


class TestModelTypes:
    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            ContinuousModel(np.zeros((2, 2)), np.zeros((3, 1)))

    def test_non_finite_continuous(self):
        with pytest.raises(NumericError):
            ContinuousModel([[np.inf]], [[1.0]])

    def test_bounds_must_be_ordered(self):
        with pytest.raises(ContractError):
            LtiModel(np.eye(1), np.eye(1), 0.1, [1.0], [0.0], [-1.0], [1.0])

    def test_default_bounds_unbounded(self):
        lm = LtiModel(np.eye(2), np.ones(2), 0.1)
        assert np.all(np.isinf(lm.x_ub)) and lm.m == 1

    def test_step(self):
        lm = LtiModel([[1, 0.1], [0, 1]], [0, 0.1], 0.1)
        np.testing.assert_allclose(lm.step([1, 2], 3), [1.2, 2.3])
