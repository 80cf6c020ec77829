import numpy as np
import pytest

from mpct import LtiModel, MpctController, MpctProblem, SolveOptions, SolverState, build_offline, residual_norms, solve
from mpct.errors import ContractError, DivergenceError
from mpct.oracle import dense_qp, is_feasible, oracle_solve
from mpct.solver import eadmm_iteration, warm_start_shift

ZERO3, ZERO1 = np.zeros(3), np.zeros(1)


def run_numpy(off, x, x_ref, u_ref, iters, state=None):
    q = off.ref_linear_term(x_ref, u_ref)
    st = state or SolverState.zeros(off)
    history = []
    for _ in range(iters):
        st, _ = eadmm_iteration(off, st, x, q)
        history.append(st)
    return history


class TestOrigin:
    def test_single_iteration(self, pendulum_off):
        sol = solve(pendulum_off, ZERO3, ZERO3, ZERO1)
        assert sol.iters == 1 and sol.converged
        assert sol.residual_inf == 0.0
        for arr in (sol.z1, sol.z2, sol.z3, sol.lam, sol.u0):
            assert not arr.any()

    def test_residual_norms_zero_state(self, pendulum_off):
        st = SolverState.zeros(pendulum_off)
        assert residual_norms(st, pendulum_off, ZERO3) == (0.0, 0.0, 0.0)
        assert residual_norms(st, pendulum_off, [0.1, 0, 0])[0] == pytest.approx(0.1)


class TestIterationInvariants:
    @pytest.mark.parametrize("x", [[0.3, -1.0, 10.0], [0.0, 1.5, 0.0], [-0.7, 2.0, -40.0]])
    def test_box_and_subspace(self, pendulum_off, x):
        off = pendulum_off
        A, B, n, N = off.A, off.B, off.n, off.N
        for st in run_numpy(off, np.array(x), [0, 0, 20], [0], 60):
            assert np.all(st.z1 >= off.lb1) and np.all(st.z1 <= off.ub1)
            scale = 1.0 + max(np.abs(st.z2).max(), np.abs(st.z3).max())
            xs, us = st.z2[:n], st.z2[n:]
            assert np.max(np.abs((A - np.eye(n)) @ xs + B @ us)) <= 1e-10 * scale
            z3 = st.z3.reshape(N + 1, -1)
            dyn = z3[1:, :n] - z3[:-1, :n] @ A.T - z3[:-1, n:] @ B.T
            assert np.max(np.abs(dyn)) <= 1e-10 * scale

    def test_kernel_matches_numpy_iteration(self, pendulum_off):
        off = pendulum_off
        x, xr, ur = np.array([0.1, 0.2, 3.0]), np.array([0, 0, 1.0]), np.zeros(1)
        for k in (1, 5, 40):
            fast = solve(off, x, xr, ur, opts=SolveOptions(tol=1e-300, max_iters=k))
            slow = run_numpy(off, x, xr, ur, k)[-1]
            for name in ("z1", "z2", "z3", "lam"):
                a, b = getattr(fast, name), getattr(slow, name)
                assert np.max(np.abs(a - b) / (1 + np.abs(b))) <= 1e-12, (k, name)


class TestExit:
    @pytest.mark.parametrize("x", [[0.1, 0, 0], [0, 1.5, 0], [-0.3, 0.5, 20]])
    def test_exit_soundness(self, pendulum_off, x):
        sol = solve(pendulum_off, x, ZERO3, ZERO1, opts=SolveOptions(tol=1e-3, max_iters=100000))
        assert sol.converged
        assert max(residual_norms(sol.state, pendulum_off, x)) <= 1e-3
        assert sol.residual_inf <= 1e-3

    def test_max_iters_status(self, pendulum_off):
        sol = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1, opts=SolveOptions(tol=1e-12, max_iters=3))
        assert sol.status == "max_iters_reached" and sol.iters == 3

    def test_u0_within_bounds(self, pendulum_off):
        for dv in (-5.0, 5.0):
            sol = solve(pendulum_off, [0, dv, 0], ZERO3, ZERO1, opts=SolveOptions(max_iters=50))
            assert -80 <= sol.u0[0] <= 80
            assert sol.u0[0] == sol.z1[3]

    def test_deterministic(self, pendulum_off):
        a = solve(pendulum_off, [0.2, -0.1, 4], [0, 0, 10], [0])
        b = solve(pendulum_off, [0.2, -0.1, 4], [0, 0, 10], [0])
        assert a.iters == b.iters
        for name in ("z1", "z2", "z3", "lam"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


class TestWarmStart:
    def test_resolve_takes_one_iteration(self, pendulum_off):
        opts = SolveOptions(tol=1e-3, warm_start=True)
        first = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1, opts=opts)
        again = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1, state=first.state, opts=opts)
        assert again.iters == 1

    def test_disabled_equals_cold(self, pendulum_off):
        first = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1)
        cold = solve(pendulum_off, [0.0, 0.3, 0], ZERO3, ZERO1)
        ignored = solve(pendulum_off, [0.0, 0.3, 0], ZERO3, ZERO1, state=first.state, opts=SolveOptions(warm_start=False))
        assert np.array_equal(cold.z3, ignored.z3) and cold.iters == ignored.iters

    def test_shift_keeps_iterates(self, pendulum_off):
        sol = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1)
        st = warm_start_shift(sol.state)
        assert st.k == 0 and np.array_equal(st.lam, sol.lam)
        st.lam[0] = 123.0
        assert sol.state.lam[0] != 123.0

    def test_controller_carries_state(self, pendulum_off):
        ctl = MpctController(pendulum_off)
        ctl.solve([0.1, 0, 0], ZERO3, ZERO1)
        assert ctl.solve([0.1, 0, 0], ZERO3, ZERO1).iters == 1
        ctl.reset()
        assert ctl.state is None


class TestErrors:
    def test_dimension_mismatch(self, pendulum_off):
        with pytest.raises(ContractError):
            solve(pendulum_off, [0, 0], ZERO3, ZERO1)

    def test_divergence_reports_iteration(self, pendulum_off):
        st = SolverState.zeros(pendulum_off)
        st.lam[5] = np.nan
        with pytest.raises(DivergenceError) as info:
            solve(pendulum_off, ZERO3, ZERO3, ZERO1, state=st, opts=SolveOptions(warm_start=True))
        assert info.value.iteration == 1

    def test_bad_options(self):
        with pytest.raises(ContractError):
            SolveOptions(tol=0.0)
        with pytest.raises(ContractError):
            SolveOptions(max_iters=0)


def test_random_small_instance_matches_oracle():
    rng = np.random.default_rng(11)
    model = LtiModel(
        np.array([[1.0, 0.1], [0.2, 0.9]]), np.array([[0.0], [0.1]]), 0.1, [-2, -2], [2, 2], [-1], [1]
    )
    prob = MpctProblem(model, 3, np.eye(2), np.eye(1), 10 * np.eye(2), np.eye(1), [1e-6] * 2, [1e-6])
    off = build_offline(prob)
    checked = 0
    while checked < 5:
        x, xr, ur = rng.uniform(-1, 1, 2), rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 1)
        qp = dense_qp(prob, x, xr, ur)
        if not is_feasible(qp):
            continue
        ref = oracle_solve(qp)
        sol = solve(off, x, xr, ur, opts=SolveOptions(tol=1e-9, max_iters=2_000_000))
        assert sol.converged
        assert np.max(np.abs(sol.u0 - ref.u0)) <= 1e-6
        checked += 1
