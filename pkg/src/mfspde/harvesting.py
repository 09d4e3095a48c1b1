"""Optimal harvesting of a spatially distributed population.

State  dY = [1/2 Y_xx + b E[Y] - Y u] dt + sigma Y dW + int theta(e) Y dN~(dt, de)
Profit J(u) = E[int int log(Y u) dx dt + int alpha(x) Y(T, x) dx]

The stationarity condition of the Hamiltonian in u gives the feedback
u = 1/(Y p); ``solve_harvesting`` finds the coupled forward/adjoint fixed
point by damped iteration on one fixed noise path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adjoint import AdjointTriple, solve_adjoint
from .coefficients import CoefficientSet, harvesting_coefficients
from .control import JResult, clamp_active, evaluate_J
from .discretization import assemble_operator_L, build_spatial_grid
from .forward import ControlField, ForwardPath, ForwardProblem, solve_forward
from .noise import DEFAULT_LEVY, LevyMeasure, TimeGrid, sample_noise
from .regression import RegressionSpec


# p behaves like 1/Y where the population is scarce, so the local basis is
# polynomial in log Y.
HARVEST_REGRESSION = RegressionSpec(degree=3, transform="log")


class HarvestingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HarvestingProblem:
    b: float | Callable = 0.5  # b(t, x)
    sigma: float | Callable = 0.2  # relative volatility sigma(t, x)
    theta: float | Callable = 1.0  # scalar c means theta(t, x, e) = c e
    alpha: float | Callable = 1.0  # alpha(x) bequest weight
    y0: float | Callable = 1.0
    x_min: float = 0.0
    x_max: float = 1.0
    n_interior: int = 19
    T: float = 1.0
    n_steps: int = 100
    levy: LevyMeasure = DEFAULT_LEVY
    n_scenarios: int = 2000
    seed: int = 2024
    u_min: float = 1e-3
    u_max: float = 50.0
    kappa: float = 0.5

    def __post_init__(self):
        x = np.linspace(self.x_min, self.x_max, self.n_interior + 2)[1:-1]
        if np.any(self._y0(x) <= 0):
            raise HarvestingConfigError("initial density y0 must be > 0")
        if np.any(self._alpha(x) < 0):
            raise HarvestingConfigError("alpha must be >= 0")
        if not 0 < self.u_min < self.u_max:
            raise HarvestingConfigError("need 0 < u_min < u_max")
        if self.levy.n_marks:
            t = np.linspace(0.0, self.T, 5)
            for tt in t:
                th = np.asarray(self.theta_fn(tt, x[:, None], self.levy.e), dtype=float)
                if np.any(th <= -1):
                    raise HarvestingConfigError("theta(t, x, e_k) must exceed -1 for positivity")

    def _y0(self, x):
        return np.broadcast_to(np.asarray(self.y0(x) if callable(self.y0) else self.y0, dtype=float), x.shape)

    def _alpha(self, x):
        return np.broadcast_to(np.asarray(self.alpha(x) if callable(self.alpha) else self.alpha, dtype=float), x.shape)

    def theta_fn(self, t, x, e):
        if callable(self.theta):
            return self.theta(t, x, e)
        return float(self.theta) * e * np.ones_like(x)

    def coefficients(self) -> CoefficientSet:
        alpha = self.alpha if not callable(self.alpha) else (lambda t, x: self.alpha(x))
        return harvesting_coefficients(self.b, self.sigma, self.theta_fn, alpha)

    def forward_problem(self, n_scenarios: int | None = None, seed: int | None = None) -> ForwardProblem:
        grid = build_spatial_grid(self.x_min, self.x_max, self.n_interior)
        tg = TimeGrid(self.T, self.n_steps)
        noise = sample_noise(tg, self.levy, n_scenarios or self.n_scenarios, self.seed if seed is None else seed)
        return ForwardProblem(
            grid, assemble_operator_L(grid, self.kappa), tg, self.coefficients(), noise, self._y0(grid.nodes).copy()
        )


@dataclass
class HarvestingSolution:
    path: ForwardPath = field(repr=False)
    adjoint: AdjointTriple = field(repr=False)
    control: ControlField = field(repr=False)
    history: list  # median control change per outer iteration
    J: JResult = field(repr=False)
    converged: bool
    iterations: int
    fp_residual: float  # median |u Y p - 1| over non-clamped points

    @property
    def problem(self) -> ForwardProblem:
        return self.path.problem

    def summary(self) -> dict:
        return {
            "J": self.J.value,
            "J_stderr": self.J.stderr,
            "iterations": self.iterations,
            "converged": self.converged,
            "fixed_point_residual": self.fp_residual,
            "control_change_history": list(self.history),
        }


def feedback_target(path: ForwardPath, adj: AdjointTriple, u_min: float, u_max: float) -> np.ndarray:
    """clamp(1 / (Y p_hat)); nonpositive Y p_hat maps to u_max."""
    Yp = path.Y[:-1] * adj.p_hat
    with np.errstate(divide="ignore"):
        raw = np.where(Yp > 0, 1.0 / np.where(Yp > 0, Yp, 1.0), u_max)
    return np.clip(raw, u_min, u_max)


def fixed_point_residual(control: ControlField, path: ForwardPath, adj: AdjointTriple) -> float:
    u = np.stack([path.control_at(k) for k in range(path.n_steps)])
    free = ~clamp_active(control, u)
    if not np.any(free):
        return 0.0
    return float(np.median(np.abs(u * path.Y[:-1] * adj.p_hat - 1.0)[free]))


def solve_harvesting(
    hp: HarvestingProblem,
    max_outer: int = 30,
    tol_fp: float = 1e-3,
    omega: float = 0.5,
    reg: RegressionSpec | None = None,
    problem: ForwardProblem | None = None,
    u_init: float = 1.0,
) -> HarvestingSolution:
    """Damped fixed point u <- (1 - omega) u + omega clamp(1 / (Y p)).

    Stops when the median (over step, scenario, node) control change is at
    most ``tol_fp``; otherwise returns the last iterate with
    ``converged=False``.
    """
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    if tol_fp < 0:
        raise ValueError("tol_fp must be >= 0")
    reg = reg or HARVEST_REGRESSION
    prob = problem or hp.forward_problem()
    N, M, n = prob.time_grid.n_steps, prob.n_scenarios, prob.grid.n_interior
    u = np.full((N, M, n), float(np.clip(u_init, hp.u_min, hp.u_max)))
    history = []
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        control = ControlField(values=u, u_min=hp.u_min, u_max=hp.u_max)
        path = solve_forward(prob, control)
        adj = solve_adjoint(path, reg)
        new = (1.0 - omega) * u + omega * feedback_target(path, adj, hp.u_min, hp.u_max)
        change = float(np.median(np.abs(new - u)))
        history.append(change)
        u = new
        if change <= tol_fp:
            converged = True
            break
    control = ControlField(values=u, u_min=hp.u_min, u_max=hp.u_max)
    J = evaluate_J(prob, control)
    adj = solve_adjoint(J.path, reg)
    return HarvestingSolution(J.path, adj, control, history, J, converged, it, fixed_point_residual(control, J.path, adj))


# ------------------------------------------------------------------ verification


@dataclass
class Challenger:
    label: str
    J: float
    diff: float  # J(u*) - J(challenger)
    stderr: float  # standard error of the paired difference

    @property
    def beats_by_2se(self) -> bool:
        return -self.diff > 2.0 * self.stderr

    def as_dict(self) -> dict:
        return {"label": self.label, "J": self.J, "diff": self.diff, "stderr": self.stderr,
                "beats_by_2se": self.beats_by_2se}


def _bump(N: int, n: int, rng) -> np.ndarray:
    t = (np.arange(N) + 0.5) / N
    x = (np.arange(n) + 1.0) / (n + 1)
    tc, xc = rng.uniform(0.1, 0.9, size=2)
    w = rng.uniform(0.1, 0.3)
    return np.exp(-((t[:, None] - tc) ** 2 + (x[None, :] - xc) ** 2) / (2 * w * w))


def challenger_controls(sol: HarvestingSolution, n_challengers: int, seed: int) -> list[tuple[str, np.ndarray]]:
    u = np.asarray(sol.control.values)
    lo, hi = sol.control.u_min, sol.control.u_max
    N, M, n = u.shape
    rng = np.random.default_rng(seed)
    out = []
    kinds = ("scaled", "bump", "constant", "noisy")
    for i in range(n_challengers):
        kind = kinds[i % len(kinds)]
        if kind == "scaled":
            s = rng.uniform(0.7, 1.3)
            v, label = u * s, f"scaled({s:.3f})"
        elif kind == "bump":
            a = rng.uniform(-0.5, 0.5)
            v, label = u * (1.0 + a * _bump(N, n, rng))[:, None, :], f"bump({a:.3f})"
        elif kind == "constant":
            c = float(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))
            v, label = np.full((N, n), c), f"constant({c:.3f})"
        else:
            s = rng.uniform(0.05, 0.2)
            v, label = u * np.exp(s * rng.standard_normal((N, 1, n))), f"noisy({s:.3f})"
        out.append((label, np.clip(v, lo, hi)))
    return out


def verify_harvest_optimality(sol: HarvestingSolution, n_challengers: int = 20, seed: int = 0,
                              extra: list | None = None) -> list[Challenger]:
    """J(u*) against challengers under common random numbers.  The battery
    always begins with u* itself and the constant u_min."""
    prob = sol.problem
    ctrl = sol.control
    base = sol.J.samples
    M = base.size
    battery = [("u*", np.asarray(ctrl.values)),
               ("u_min", np.full((prob.time_grid.n_steps, prob.grid.n_interior), ctrl.u_min))]
    battery += list(extra or []) + challenger_controls(sol, n_challengers, seed)
    rows = []
    for label, v in battery:
        res = evaluate_J(prob, ctrl.with_values(v))
        d = base - res.samples
        se = float(d.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
        rows.append(Challenger(label, res.value, float(d.mean()), se))
    return rows


def mean_dynamics_reference(hp: HarvestingProblem, u: np.ndarray) -> np.ndarray:
    """Deterministic solve of m_t = 1/2 m_xx + b m - u m with the same
    implicit stepping; u has shape (n_steps, node)."""
    prob = hp.forward_problem(n_scenarios=1)
    grid, op = prob.grid, prob.op_L
    dt = prob.dt
    x = grid.nodes
    m = np.empty((prob.time_grid.n_steps + 1, grid.n_interior))
    m[0] = hp._y0(x)
    bfun = hp.b if callable(hp.b) else (lambda t, x: float(hp.b) * np.ones_like(x))
    for k in range(prob.time_grid.n_steps):
        m[k + 1] = op.solve_implicit(m[k] + dt * (bfun(k * dt, x) - u[k]) * m[k], dt)
    return m
