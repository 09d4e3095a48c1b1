import numpy as np
import pytest

from mfspde.harvesting import (
    HarvestingConfigError,
    HarvestingProblem,
    challenger_controls,
    mean_dynamics_reference,
    solve_harvesting,
    verify_harvest_optimality,
)
from mfspde.noise import LevyMeasure


def one_node(**kw):
    base = dict(b=0.0, sigma=0.0, theta=0.0, alpha=100.0, n_interior=1, T=0.5, n_steps=50,
                levy=LevyMeasure(), n_scenarios=4, u_max=1e3)
    base.update(kw)
    return HarvestingProblem(**base)


def test_one_node_closed_form():
    # oracle: one deterministic node, L = -4.  At the fixed point
    # H_y = 1/Y - u p = 0, so p_k = alpha / (1 + 4 dt)^(N - k), u_k = 1/(Y_k pi_k),
    # Y_{k+1} = (Y_k - dt / pi_k) / (1 + 4 dt) with pi_k = p_{k+1} / (1 + 4 dt).
    hp = one_node()
    N, dt, a = 50, 0.01, 100.0
    pi = a / (1 + 4 * dt) ** (N - np.arange(N))
    Y = np.empty(N + 1)
    u = np.empty(N)
    Y[0] = 1.0
    for k in range(N):
        u[k] = 1.0 / (Y[k] * pi[k])
        Y[k + 1] = (Y[k] - dt / pi[k]) / (1 + 4 * dt)
    sol = solve_harvesting(hp, max_outer=200, tol_fp=1e-14, omega=1.0)
    assert sol.converged
    np.testing.assert_allclose(sol.control.values[:, 0, 0], u, rtol=1e-8)
    np.testing.assert_allclose(sol.path.Y[:, 0, 0], Y, rtol=1e-8)
    np.testing.assert_allclose(sol.adjoint.p_hat[:, 0, 0], pi, rtol=1e-8)
    assert sol.fp_residual < 1e-8


def test_one_node_beats_constants():
    hp = one_node()
    sol = solve_harvesting(hp, max_outer=200, tol_fp=1e-12, omega=1.0)
    rows = verify_harvest_optimality(sol, n_challengers=8, seed=1)
    assert rows[0].label == "u*" and rows[0].diff == 0.0
    assert all(r.diff >= -1e-12 for r in rows)


@pytest.mark.parametrize("kw", [{"y0": 0.0}, {"alpha": -1.0}, {"u_min": 0.0}, {"theta": -5.0}])
def test_invalid_problem(kw):
    with pytest.raises(HarvestingConfigError):
        HarvestingProblem(**kw)


def test_nonconvergence_flag():
    hp = HarvestingProblem(n_interior=5, T=0.2, n_steps=20, n_scenarios=50)
    sol = solve_harvesting(hp, max_outer=2, tol_fp=0.0)
    assert not sol.converged and sol.iterations == 2 and len(sol.history) == 2


def test_mean_dynamics_reference_no_harvest():
    # oracle: sine initial data, b = 0, u = 0 decays by the discrete eigenvalue
    hp = HarvestingProblem(b=0.0, y0=lambda x: np.sin(np.pi * x), n_interior=9, n_steps=10, T=0.1)
    m = mean_dynamics_reference(hp, np.zeros((10, 9)))
    h = 0.1
    lam = -0.5 * 4 / h**2 * np.sin(np.pi * h / 2) ** 2
    x = np.linspace(0, 1, 11)[1:-1]
    np.testing.assert_allclose(m[-1], np.sin(np.pi * x) / (1 - 0.01 * lam) ** 10, rtol=1e-10)


def test_challengers_admissible():
    hp = HarvestingProblem(n_interior=5, T=0.2, n_steps=20, n_scenarios=30)
    sol = solve_harvesting(hp, max_outer=3)
    ch = challenger_controls(sol, 12, 0)
    assert len(ch) == 12
    for _, v in ch:
        assert np.all(v >= hp.u_min) and np.all(v <= hp.u_max)


def test_harvest_deterministic():
    hp = HarvestingProblem(n_interior=5, T=0.2, n_steps=20, n_scenarios=40)
    a = solve_harvesting(hp, max_outer=4)
    b = solve_harvesting(hp, max_outer=4)
    np.testing.assert_array_equal(a.control.values, b.control.values)
    assert a.J.value == b.J.value and a.history == b.history
