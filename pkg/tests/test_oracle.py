import numpy as np
import pytest

from mpct import SolveOptions, solve
from mpct.errors import OracleInconclusive
from mpct.oracle import dense_qp, is_feasible, kkt_residuals, oracle_solve

ZERO3, ZERO1 = np.zeros(3), np.zeros(1)
TIGHT = SolveOptions(tol=1e-8, max_iters=2_000_000)


def test_origin_is_zero(pendulum):
    res = oracle_solve(dense_qp(pendulum, ZERO3, ZERO3, ZERO1))
    assert np.max(np.abs(res.v)) <= 1e-12


def test_tilted_start_matches_solver(pendulum, pendulum_off):
    res = oracle_solve(dense_qp(pendulum, [0.1, 0, 0], ZERO3, ZERO1))
    assert max(res.kkt.values()) <= 1e-8
    sol = solve(pendulum_off, [0.1, 0, 0], ZERO3, ZERO1, opts=TIGHT)
    assert np.max(np.abs(sol.u0 - res.u0)) <= 1e-4


@pytest.mark.parametrize("x", [[0, 0, 0], [0, 0, 59.9], [0, 0, 59.999]])
def test_unattainable_reference_gives_closest_steady_state(pendulum, x):
    qp = dense_qp(pendulum, x, [0, 0, 70], ZERO1)
    res = oracle_solve(qp)
    assert max(res.kkt.values()) <= 1e-8
    A, B = pendulum.model.A, pendulum.model.B
    assert np.max(np.abs((A - np.eye(3)) @ res.x_s + B @ res.u_s)) <= 1e-8
    assert res.x_s[2] <= 60 - 1e-6 + 1e-9


def test_kkt_check_rejects_perturbed_point(pendulum):
    qp = dense_qp(pendulum, [0.1, 0, 0], ZERO3, ZERO1)
    res = oracle_solve(qp)
    bad = res.v.copy()
    bad[qp.u_index(0)] += 1e-3
    assert max(kkt_residuals(qp, bad, res.nu, res.mu).values()) > 1e-8
    wrong_sign = -np.abs(res.mu) - 1.0
    assert kkt_residuals(qp, res.v, res.nu, wrong_sign)["complementarity"] > 0


def test_cap_reached_is_inconclusive(pendulum):
    qp = dense_qp(pendulum, [0, 0, 59.999], [0, 0, 70], ZERO1)
    with pytest.raises(OracleInconclusive):
        oracle_solve(qp, max_iters=10)


def test_feasibility(pendulum):
    assert is_feasible(dense_qp(pendulum, [0.1, 0, 0], ZERO3, ZERO1))
    # wheel speed cannot drop from 100 to 60 rad/s in one period
    assert not is_feasible(dense_qp(pendulum, [0, 0, 100], ZERO3, ZERO1))


def test_steady_state_agreement(pendulum, pendulum_off):
    rng = np.random.default_rng(5)
    ub = pendulum.model.x_ub
    checked = 0
    while checked < 10:
        x, xr = rng.uniform(-0.5 * ub, 0.5 * ub), rng.uniform(-ub, ub)
        qp = dense_qp(pendulum, x, xr, ZERO1)
        if not is_feasible(qp):
            continue
        ref = oracle_solve(qp)
        sol = solve(pendulum_off, x, xr, ZERO1, opts=TIGHT)
        for a, b in ((sol.u0, ref.u0), (sol.x_s, ref.x_s), (sol.u_s, ref.u_s)):
            assert np.max(np.abs(a - b)) <= 1e-4 * (1 + np.max(np.abs(b)))
        checked += 1
