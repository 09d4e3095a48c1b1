"""Forward mean-field SPDE: semi-implicit time stepping, Picard iteration in
the mean-field argument, the linearised (derivative) equation and the
interacting n-box particle system.

Scheme per step (scenario s, interior nodes):

    (I - dt L) Y_{k+1} = Y_k + dt b + sigma dW_k + sum_j theta_j dN~_kj + dt*bc

with ybar = F(Y_k) and ubar = G(u_k) taken over the scenario axis.  For
multiplicative noise the stochastic part is applied as the factor
``max(1 + sigma~ dW + sum theta~ dN~, eps_pos)`` and the result floored at
``eps_pos``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, finite_or_raise
from .discretization import DiscreteOperator, SpatialGrid
from .meanfield import MeanFieldOperator, expectation
from .noise import LevyMeasure, NoisePath, TimeGrid, sample_noise

EPS_POS = 1e-8


class PositivityError(ArithmeticError):
    """Too many samples hit the positivity floor."""


class ControlBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class FieldEnsemble:
    values: np.ndarray  # (scenario, node)
    time_index: int
    grid: SpatialGrid


@dataclass(frozen=True)
class ControlField:
    """Either a value grid (shape (n_steps, node) or (n_steps, scenario, node))
    or a feedback map ``(k, t, x, Y_k) -> values``; feedback output is clamped."""

    values: np.ndarray | None = None
    feedback: Callable | None = None
    u_min: float = -np.inf
    u_max: float = np.inf

    def __post_init__(self):
        if (self.values is None) == (self.feedback is None):
            raise ValueError("ControlField needs exactly one of values / feedback")
        if self.values is not None:
            v = np.asarray(self.values, dtype=float)
            if v.ndim not in (2, 3):
                raise ValueError("control values must be (step, node) or (step, scenario, node)")
            if np.any(v < self.u_min) or np.any(v > self.u_max):
                raise ControlBoundsError(
                    f"control values outside [{self.u_min}, {self.u_max}]: "
                    f"range [{v.min()}, {v.max()}]"
                )
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, n_steps: int, n_nodes: int, u_min=-np.inf, u_max=np.inf) -> ControlField:
        return cls(values=np.full((n_steps, n_nodes), float(value)), u_min=u_min, u_max=u_max)

    @property
    def is_deterministic(self) -> bool:
        return self.values is not None and self.values.ndim == 2

    def at(self, k: int, t: float, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Control at step k broadcast to the shape of Y (scenario, node)."""
        if self.values is not None:
            return np.broadcast_to(self.values[k], Y.shape)
        out = np.asarray(self.feedback(k, t, x, Y), dtype=float)
        return np.broadcast_to(np.clip(out, self.u_min, self.u_max), Y.shape)

    def with_values(self, values: np.ndarray) -> ControlField:
        return ControlField(values=values, u_min=self.u_min, u_max=self.u_max)

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.u_min, self.u_max)


@dataclass
class ForwardProblem:
    """Everything the forward solver needs apart from the control."""

    grid: SpatialGrid
    op_L: DiscreteOperator
    time_grid: TimeGrid
    coeffs: CoefficientSet
    noise: NoisePath
    xi: np.ndarray | Callable
    F: MeanFieldOperator = field(default_factory=expectation)
    G: MeanFieldOperator = field(default_factory=expectation)
    eta: Callable | None = None  # t -> (left, right) Dirichlet data
    eps_pos: float = EPS_POS
    max_floor_fraction: float = 0.01

    @property
    def levy(self) -> LevyMeasure:
        return self.noise.levy

    @property
    def n_scenarios(self) -> int:
        return self.noise.n_scenarios

    @property
    def dt(self) -> float:
        return self.time_grid.dt

    def initial_state(self) -> np.ndarray:
        x = self.grid.nodes
        xi = self.xi(x) if callable(self.xi) else np.asarray(self.xi, dtype=float)
        xi = np.broadcast_to(np.asarray(xi, dtype=float), (self.n_scenarios, self.grid.n_interior))
        return np.array(xi)

    def with_noise(self, noise: NoisePath) -> ForwardProblem:
        return replace(self, noise=noise)


@dataclass
class ForwardPath:
    """Y[k, s, i] for k = 0..n_steps, mean-field trace m[k, i] = F(Y_k)."""

    Y: np.ndarray
    mean_field: np.ndarray
    control_mean_field: np.ndarray
    controls: np.ndarray  # (n_steps, scenario|1, node)
    floor_hits: np.ndarray  # per step count of floored samples
    problem: ForwardProblem

    @property
    def n_steps(self) -> int:
        return self.Y.shape[0] - 1

    def control_at(self, k: int) -> np.ndarray:
        return np.broadcast_to(self.controls[k], self.Y.shape[1:])

    def summary(self) -> dict[str, np.ndarray]:
        """Per (t, x) statistics over scenarios."""
        return {
            "mean": self.Y.mean(axis=1),
            "variance": self.Y.var(axis=1),
            "min": self.Y.min(axis=1),
            "max": self.Y.max(axis=1),
        }


# ------------------------------------------------------------------ stepping


def _noise_factor(problem: ForwardProblem, t: float, dW: np.ndarray, comp: np.ndarray) -> np.ndarray:
    """Unfloored multiplicative factor 1 + sigma~ dW + sum_j theta~_j dN~_j."""
    coeffs = problem.coeffs
    x = problem.grid.nodes
    fac = np.ones((dW.shape[0], x.size))
    if coeffs.sigma.relative is not None:
        fac += np.broadcast_to(coeffs.sigma.relative(t, x), x.shape) * dW[:, None]
    if coeffs.theta.relative is not None and problem.levy.n_marks:
        th = np.broadcast_to(coeffs.theta.relative(t, x[:, None], problem.levy.e), (x.size, problem.levy.n_marks))
        fac += comp @ th.T
    return fac


def _additive_noise(problem, t, Y, ybar, u, ubar, dW, comp) -> np.ndarray:
    coeffs = problem.coeffs
    x = problem.grid.nodes
    sig = np.broadcast_to(np.asarray(coeffs.sigma.value(t, x, Y, ybar, u, ubar), dtype=float), Y.shape)
    out = sig * dW[:, None]
    if problem.levy.n_marks:
        e = problem.levy.e
        th = coeffs.theta.value(t, x[:, None], Y[..., None], ybar[:, None], u[..., None], ubar[:, None], e)
        th = np.broadcast_to(np.asarray(th, dtype=float), Y.shape + (e.size,))
        out = out + np.einsum("snk,sk->sn", th, comp)
    return out


def _boundary_rhs(problem: ForwardProblem, t_next: float, dt: float) -> np.ndarray | None:
    if problem.eta is None:
        return None
    left, right = problem.eta(t_next)
    bc = np.zeros(problem.grid.n_interior)
    bc[0] += problem.op_L.bc_left * left
    bc[-1] += problem.op_L.bc_right * right
    return dt * bc


def _step(problem: ForwardProblem, k: int, Y: np.ndarray, u: np.ndarray, ybar: np.ndarray, ubar: np.ndarray):
    dt = problem.dt
    t = k * dt
    x = problem.grid.nodes
    dW = problem.noise.dW[:, k]
    comp = problem.noise.jump_counts[:, k, :] - problem.levy.nu * dt
    coeffs = problem.coeffs
    drift = np.broadcast_to(np.asarray(coeffs.b.value(t, x, Y, ybar, u, ubar), dtype=float), Y.shape)
    finite_or_raise(drift, "b")
    if coeffs.multiplicative_noise:
        fac = np.maximum(_noise_factor(problem, t, dW, comp), problem.eps_pos)
        rhs = Y * fac + dt * drift
    else:
        rhs = Y + dt * drift + _additive_noise(problem, t, Y, ybar, u, ubar, dW, comp)
    finite_or_raise(rhs, "forward step right-hand side")
    bc = _boundary_rhs(problem, t + dt, dt)
    if bc is not None:
        rhs = rhs + bc
    Y_next = problem.op_L.solve_implicit(rhs, dt)
    hits = 0
    if coeffs.multiplicative_noise:
        low = Y_next < problem.eps_pos
        hits = int(np.count_nonzero(low))
        if hits:
            Y_next = np.where(low, problem.eps_pos, Y_next)
    return Y_next, hits


def step_forward(
    state: FieldEnsemble,
    problem: ForwardProblem,
    control: ControlField,
    ybar: np.ndarray | None = None,
) -> FieldEnsemble:
    """Advance one time level.  ``ybar`` overrides F(Y_k) (frozen mean field)."""
    k = state.time_index
    Y = np.asarray(state.values, dtype=float)
    t = k * problem.dt
    u = control.at(k, t, problem.grid.nodes, Y)
    if ybar is None:
        ybar = problem.F(Y)
    Y_next, _ = _step(problem, k, Y, u, ybar, problem.G(u))
    return FieldEnsemble(Y_next, k + 1, state.grid)


def solve_forward(
    problem: ForwardProblem,
    control: ControlField,
    frozen_meanfield: np.ndarray | None = None,
) -> ForwardPath:
    """Full path from xi.  ``frozen_meanfield[k]`` replaces F(Y_k) when given."""
    N = problem.time_grid.n_steps
    M, n = problem.n_scenarios, problem.grid.n_interior
    x = problem.grid.nodes
    Y = np.empty((N + 1, M, n))
    Y[0] = problem.initial_state()
    m = np.empty((N + 1, n))
    ubar_trace = np.empty((N, n))
    hits = np.zeros(N, dtype=np.int64)
    stored = []
    for k in range(N):
        t = k * problem.dt
        u = control.at(k, t, x, Y[k])
        stored.append(control.values[k] if control.is_deterministic else np.array(u))
        m[k] = problem.F(Y[k])
        ybar = m[k] if frozen_meanfield is None else frozen_meanfield[k]
        ubar_trace[k] = problem.G(u)
        Y[k + 1], hits[k] = _step(problem, k, Y[k], u, ybar, ubar_trace[k])
    m[N] = problem.F(Y[N])
    if control.is_deterministic:
        controls = np.asarray(control.values)[:, None, :]
    else:
        controls = np.stack(stored)
    path = ForwardPath(Y, m, ubar_trace, controls, hits, problem)
    frac = hits.sum() / max(1, N * M * n)
    if frac > problem.max_floor_fraction:
        raise PositivityError(f"{frac:.3%} of samples hit the positivity floor")
    return path


# ------------------------------------------------------------------ Picard


@dataclass
class PicardForwardReport:
    distances: np.ndarray  # distances[n] = E[sup_t |Y^{n+1}_t - Y^n_t|_H^2]
    fixed_point_distance: float
    iterates: list[np.ndarray] = field(default_factory=list, repr=False)


def _sup_h_sq(grid: SpatialGrid, diff: np.ndarray) -> float:
    # diff: (step, scenario, node) -> mean over scenarios of sup over steps
    return float(np.mean(np.max(grid.norm_h_sq(diff), axis=0)))


def picard_forward(problem: ForwardProblem, control: ControlField, n_iters: int) -> PicardForwardReport:
    """Iterate Y^{n+1} = solution with the mean-field argument frozen at Y^n,
    starting from Y^0 = xi on identical noise."""
    if n_iters < 2:
        raise ValueError("n_iters must be >= 2")
    N = problem.time_grid.n_steps
    prev = np.broadcast_to(problem.initial_state(), (N + 1, problem.n_scenarios, problem.grid.n_interior))
    iterates = [np.array(prev)]
    dists = []
    for _ in range(n_iters):
        frozen = np.stack([problem.F(prev[k]) for k in range(N + 1)])
        nxt = solve_forward(problem, control, frozen_meanfield=frozen).Y
        dists.append(_sup_h_sq(problem.grid, nxt - prev))
        iterates.append(nxt)
        prev = nxt
    direct = solve_forward(problem, control).Y
    return PicardForwardReport(np.array(dists), _sup_h_sq(problem.grid, prev - direct), iterates)


# ------------------------------------------------------------------ derivative process


def derivative_process(
    problem: ForwardProblem,
    path: ForwardPath,
    beta: np.ndarray,
) -> np.ndarray:
    """Solve the linearised equation for the directional derivative of Y
    along control direction ``beta`` (shape (step, node) or (step, scenario, node)).

    Mean-field pairings use the frozen weights grad F(Y_k), grad G(u_k) of
    the base path; the same noise and the same stepping as the base solve.
    """
    coeffs = problem.coeffs
    N = problem.time_grid.n_steps
    M, n = problem.n_scenarios, problem.grid.n_interior
    dt = problem.dt
    x = problem.grid.nodes
    beta = np.asarray(beta, dtype=float)
    D = np.zeros((N + 1, M, n))
    e = problem.levy.e
    K = problem.levy.n_marks
    for k in range(N):
        t = k * dt
        Y = path.Y[k]
        u = path.control_at(k)
        ybar = path.mean_field[k]
        ubar = path.control_mean_field[k]
        bk = np.broadcast_to(beta[k], (M, n))
        pair_y = np.mean(problem.F.gradient(Y) * D[k], axis=0)
        pair_u = np.mean(problem.G.gradient(u) * bk, axis=0)
        args = (t, x, Y, ybar, u, ubar)

        def lin(c, args=args):
            return (
                c.dy(*args) * D[k] + c.dybar(*args) * pair_y + c.du(*args) * bk + c.dubar(*args) * pair_u
            )

        drift = np.broadcast_to(lin(coeffs.b), (M, n))
        dW = problem.noise.dW[:, k]
        comp = problem.noise.jump_counts[:, k, :] - problem.levy.nu * dt
        if coeffs.multiplicative_noise:
            fac = np.maximum(_noise_factor(problem, t, dW, comp), problem.eps_pos)
            rhs = D[k] * fac + dt * drift
        else:
            rhs = D[k] + dt * drift + np.broadcast_to(lin(coeffs.sigma), (M, n)) * dW[:, None]
            if K:
                targs = (t, x[:, None], Y[..., None], ybar[:, None], u[..., None], ubar[:, None], e)
                c = coeffs.theta
                th = (
                    c.dy(*targs) * D[k][..., None]
                    + c.dybar(*targs) * pair_y[:, None]
                    + c.du(*targs) * bk[..., None]
                    + c.dubar(*targs) * pair_u[:, None]
                )
                th = np.broadcast_to(th, (M, n, K))
                rhs = rhs + np.einsum("snk,sk->sn", th, comp)
        D[k + 1] = problem.op_L.solve_implicit(rhs, dt)
        if coeffs.multiplicative_noise:
            D[k + 1] = np.where(path.Y[k + 1] <= problem.eps_pos, 0.0, D[k + 1])
    return D


# ------------------------------------------------------------------ particle system


@dataclass
class ParticleRun:
    box_paths: np.ndarray  # (step, box, node)
    empirical_mean: np.ndarray  # (step, node)


def simulate_particle_system(
    n_boxes: int,
    problem: ForwardProblem,
    control: ControlField,
    seed: int,
    shared_noise: bool = False,
) -> ParticleRun:
    """n interacting boxes whose mean-field argument is the cross-box average.

    With ``shared_noise`` every box sees the same (W, N) as in the
    motivating n-box system; otherwise each box draws its own stream.
    """
    if n_boxes < 1:
        raise ValueError("n_boxes must be >= 1")
    tg, levy = problem.time_grid, problem.levy
    if shared_noise:
        one = sample_noise(tg, levy, 1, seed)
        noise = one.subset(np.zeros(n_boxes, dtype=int))
    else:
        noise = sample_noise(tg, levy, n_boxes, seed)
    boxed = replace(problem, noise=noise, F=expectation())
    path = solve_forward(boxed, control)
    return ParticleRun(path.Y, path.Y.mean(axis=1))
