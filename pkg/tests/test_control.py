import numpy as np
import pytest
from dataclasses import replace

from mfspde.adjoint import solve_adjoint
from mfspde.coefficients import harvesting_coefficients, linear_test_coefficients
from mfspde.control import (
    HamiltonianInputs,
    HarvestDomainError,
    InfoFiltration,
    check_concavity,
    check_necessary,
    concavity_samples,
    evaluate_J,
    gateaux_J,
    gradient_ascent,
    hamiltonian,
    midpoint_concavity,
    project_conditional,
    quadrature_pairing,
)
from mfspde.forward import ControlBoundsError, ControlField, solve_forward
from mfspde.noise import DEFAULT_LEVY, LevyMeasure

from conftest import make_problem

HARVEST = harvesting_coefficients(0.5, 0.2, 1.0, 1.0)


def test_hamiltonian_hand_value():
    inp = HamiltonianInputs(0.0, 0.5, 2.0, 1.0, 0.5, 0.5, 3.0, 0.4, (0.1, -0.2))
    # log(1) + (0.5 - 1) 3 + 0.2*2*0.4 + (-0.3*2*0.1 + 0.5*2*(-0.2))
    expected = 0.0 - 1.5 + 0.16 + (-0.06 - 0.2)
    assert hamiltonian(inp, HARVEST, DEFAULT_LEVY) == pytest.approx(expected, rel=1e-14)


def test_hamiltonian_domain_error():
    with pytest.raises(HarvestDomainError):
        hamiltonian(HamiltonianInputs(0, 0.5, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, (0.0, 0.0)), HARVEST, DEFAULT_LEVY)
    with pytest.raises(ValueError):
        hamiltonian(HamiltonianInputs(0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, ()), HARVEST, DEFAULT_LEVY)


def test_hamiltonian_affine_in_adjoints():
    base = HamiltonianInputs(0.2, 0.3, 1.1, 0.9, 0.7, 0.8, 0.0, 0.0, (0.0, 0.0))
    h = lambda **kw: hamiltonian(replace(base, **kw), HARVEST, DEFAULT_LEVY)  # noqa: E731
    assert h(p=2.0) - h(p=1.0) == pytest.approx(h(p=1.0) - h(p=0.0), abs=1e-12)
    assert h(q=2.0) - h(q=1.0) == pytest.approx(h(q=1.0) - h(q=0.0), abs=1e-12)


def test_filtration_index():
    assert InfoFiltration(0.0).feature_index(5, 0.1) == 5
    assert InfoFiltration(0.2).feature_index(5, 0.1) == 3
    assert InfoFiltration(1.0).feature_index(5, 0.1) is None
    with pytest.raises(ValueError):
        InfoFiltration(-0.1)


def test_project_conditional(small_harvest):
    path = solve_forward(small_harvest, ControlField.constant(1.0, 50, 9))
    s = np.random.default_rng(0).normal(size=path.Y.shape[1:])
    np.testing.assert_array_equal(project_conditional(s, path, 10, InfoFiltration(0.0)), s)
    np.testing.assert_allclose(project_conditional(s, path, 1, InfoFiltration(0.5)),
                               np.broadcast_to(s.mean(0), s.shape))
    # a function of the delayed state is reproduced by the regression
    tgt = 2.0 * path.Y[8] + 1.0
    np.testing.assert_allclose(project_conditional(tgt, path, 10, InfoFiltration(0.02)), tgt, rtol=1e-6)


def test_quadrature_pairing_hand():
    r = np.ones((2, 3, 4))
    beta = np.full((2, 4), 2.0)
    assert quadrature_pairing(r, beta, 0.5, 0.1) == pytest.approx(0.1 * 0.5 * 2 * 4 * 2)


def test_zero_direction_gateaux(small_harvest):
    fd, pair = gateaux_J(small_harvest, ControlField.constant(1.0, 50, 9, 1e-3, 50), np.zeros((50, 9)))
    assert fd == 0.0 and pair == 0.0


def test_inadmissible_direction(small_harvest):
    u = ControlField.constant(1.0, 50, 9, 0.999, 50.0)
    with pytest.raises(ControlBoundsError):
        gateaux_J(small_harvest, u, -np.ones((50, 9)), z_list=(1e-2, 5e-3))


def test_gateaux_matches_pairing_harvest(small_harvest):
    u = ControlField.constant(1.0, 50, 9, 1e-3, 50.0)
    beta = np.random.default_rng(5).uniform(-1, 1, size=(50, 9))
    fd, pair = gateaux_J(small_harvest, u, beta)
    assert abs(fd - pair) <= 0.02 * max(abs(fd), abs(pair))


def test_gateaux_with_delay_matches(small_harvest):
    # a deterministic direction sees E[H_u | E_t] and H_u through the same expectation
    u = ControlField.constant(1.0, 50, 9, 1e-3, 50.0)
    beta = np.random.default_rng(6).uniform(-1, 1, size=(50, 9))
    fd0, p0 = gateaux_J(small_harvest, u, beta)
    fd1, p1 = gateaux_J(small_harvest, u, beta, filt=InfoFiltration(0.1))
    assert fd0 == fd1
    assert p1 == pytest.approx(p0, rel=1e-6)


def test_midpoint_concavity_examples():
    assert midpoint_concavity(lambda v: -v @ v, [-1, -1], [1, 1], 100)["verdict"] == "pass"
    assert midpoint_concavity(lambda v: 3 * v[0] - v[1], [-1, -1], [1, 1], 100)["verdict"] == "pass"
    res = midpoint_concavity(lambda v: v[0] * v[1], [-1, -1], [1, 1], 200)
    assert res["verdict"] == "counterexample"
    a, b = (np.array(w) for w in res["witness"])
    f = lambda v: v[0] * v[1]  # noqa: E731
    assert f(0.5 * (a + b)) < 0.5 * (f(a) + f(b))
    # hand witness from the bilinear case
    a, b = np.array([1.0, 1.0]), np.array([-1.0, -1.0])
    assert f(0.5 * (a + b)) == 0 < 0.5 * (f(a) + f(b))


def test_concavity_of_linear_quadratic():
    c = linear_test_coefficients(a_y=0.2, a_u=1.0, f_u=0.3, f_yy=1.0, g_y=1.0)
    prob = make_problem(c, n=3, T=0.2, n_steps=10, M=20, levy=LevyMeasure())
    path = solve_forward(prob, ControlField.constant(0.2, 10, 3))
    adj = solve_adjoint(path)
    assert check_concavity(c, prob.levy, concavity_samples(path, adj), 32, 0)["verdict"] == "pass"


def test_necessary_residual_reported(small_harvest):
    rep = check_necessary(small_harvest, ControlField.constant(1.0, 50, 9, 1e-3, 50.0))
    assert rep.sup_residual > 0 and rep.scale > 0
    assert rep.residual_profile.shape == (50, 9)
    assert set(rep.as_dict()) >= {"sup_residual", "scale", "J"}


def test_gradient_ascent_improves(small_harvest):
    u0 = ControlField.constant(5.0, 50, 9, 1e-3, 50.0)
    res = gradient_ascent(small_harvest, u0, 3, 0.002)
    assert len(res.J_trace) == 4
    assert res.J_trace[-1] > res.J_trace[0]
    same = gradient_ascent(small_harvest, u0, 2, 0.0)
    assert same.control is u0 and same.J_trace == [same.J_trace[0]] * 3


def test_evaluate_J_stderr(small_harvest):
    J = evaluate_J(small_harvest, ControlField.constant(1.0, 50, 9))
    assert J.stderr == pytest.approx(J.samples.std(ddof=1) / np.sqrt(J.samples.size))


def test_hamiltonian_zero_coefficients():
    zero = linear_test_coefficients()
    inp = HamiltonianInputs(0.1, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, (4.0, 5.0))
    assert hamiltonian(inp, zero, DEFAULT_LEVY) == 0.0


def test_hamiltonian_harvest_instance():
    c = harvesting_coefficients(0.1, 0.2, 1.0, 1.0)
    inp = HamiltonianInputs(0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0, (0.0, 0.0))
    assert hamiltonian(inp, c, DEFAULT_LEVY) == pytest.approx(-1.8, rel=1e-14)
    h0 = hamiltonian(replace(inp, p=0.0), c, DEFAULT_LEVY)
    assert hamiltonian(inp, c, DEFAULT_LEVY) - h0 == pytest.approx(2 * (0.1 - 1.0), abs=1e-14)


def test_J_zero_objective():
    prob = make_problem(linear_test_coefficients(a_y=0.2, s_y=0.3), n=3, M=10)
    assert evaluate_J(prob, ControlField.constant(0.0, 50, 3)).value == 0.0


def test_J_of_heat_terminal_mass():
    from scipy.linalg import expm
    prob = make_problem(linear_test_coefficients(g_y=1.0), n=19, T=0.2, n_steps=200, M=2,
                        levy=LevyMeasure(), xi=1.0)
    J = evaluate_J(prob, ControlField.constant(0.0, 200, 19))
    oracle = prob.grid.h * np.sum(expm(0.2 * prob.op_L.matrix()) @ np.ones(19))
    assert J.value == pytest.approx(oracle, rel=0.01)
    again = evaluate_J(prob, ControlField.constant(0.0, 200, 19))
    assert again.value == J.value


def test_gradient_vanishes_at_feedback_and_is_positive_below(small_harvest):
    from mfspde.control import grad_H_field
    from mfspde.harvesting import feedback_target
    path = solve_forward(small_harvest, ControlField.constant(1.0, 50, 9))
    adj = solve_adjoint(path)
    fb = 1.0 / (path.Y[:-1] * adj.p_hat)
    # evaluate r at the feedback control along the same state/adjoint samples
    u = ControlField(values=fb)
    path_fb = replace(path, controls=u.values, control_mean_field=fb.mean(axis=1))
    np.testing.assert_allclose(grad_H_field(path_fb, adj), 0.0, atol=1e-10)
    half = replace(path, controls=0.5 * fb, control_mean_field=0.5 * fb.mean(axis=1))
    assert np.all(grad_H_field(half, adj) > 0)
    assert feedback_target(path, adj, 1e-3, 50).shape == fb.shape


def test_control_free_problem_zero_gradient():
    c = linear_test_coefficients(a_y=0.2, s_y=0.3, f_y=1.0, g_y=1.0)
    prob = make_problem(c, n=3, M=20)
    rep = check_necessary(prob, ControlField.constant(0.7, 50, 3))
    assert rep.sup_residual == 0.0


def test_linear_running_profit_pairing_exact():
    # f = c u with control-free dynamics: both sides equal dt h sum c beta
    c = linear_test_coefficients(f_u=0.6, a_y=0.1)
    prob = make_problem(c, n=4, M=10, levy=LevyMeasure())
    beta = np.random.default_rng(3).normal(size=(50, 4))
    fd, pair = gateaux_J(prob, ControlField.constant(0.5, 50, 4), beta)
    exact = prob.dt * prob.grid.h * 0.6 * beta.sum()
    assert pair == pytest.approx(exact, rel=1e-12)
    assert fd == pytest.approx(exact, rel=1e-8)


def test_delay_beyond_horizon_is_mean(small_harvest):
    path = solve_forward(small_harvest, ControlField.constant(1.0, 50, 9))
    s = path.Y[30] ** 2
    out = project_conditional(s, path, 30, InfoFiltration(small_harvest.time_grid.T))
    np.testing.assert_allclose(out, np.broadcast_to(s.mean(0), s.shape))


def test_delayed_projection_consistency():
    def rmse(M):
        prob = make_problem(HARVEST, n=3, M=M, seed=17)
        path = solve_forward(prob, ControlField.constant(1.0, 50, 3))
        phi = np.log(path.Y[20]) ** 2
        noisy = phi + np.random.default_rng(M).normal(size=phi.shape)
        est = project_conditional(noisy, path, 30, InfoFiltration(0.1))
        return np.sqrt(np.mean((est - phi) ** 2))
    assert rmse(5000) < rmse(500)


def test_stationary_start_unchanged():
    c = linear_test_coefficients(a_y=0.2, s_y=0.3, f_y=1.0, g_y=1.0)
    prob = make_problem(c, n=3, M=20)
    u0 = ControlField.constant(0.7, 50, 3)
    res = gradient_ascent(prob, u0, 3, 0.01)
    np.testing.assert_array_equal(res.control.values, u0.values)
    assert len(set(res.J_trace)) == 1


def test_ascent_from_lower_bound(small_harvest):
    u0 = ControlField.constant(1e-3, 50, 9, 1e-3, 50.0)
    res = gradient_ascent(small_harvest, u0, 5, 0.002)
    assert np.all(np.diff(res.J_trace) >= 0)
    assert res.residual_trace[-1] * 10 <= res.residual_trace[0]
