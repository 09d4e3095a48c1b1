"""Backward equations: the adjoint triple (p, q, gamma) of the control
problem, and a standalone mean-field backward equation with its Picard
iteration.

The adjoint sweep is the exact transpose of the forward step.  With
pi = (I - dt L*)^{-1} p_{k+1}:

    p_hat_k   = E^[pi | Y_k]
    q_k       = E^[pi dW_k | Y_k] / dt
    gamma_kj  = E^[pi dN~_kj | Y_k] / (nu_j dt)
    p_k       = p_hat_k + dt (dH/dy + E[dH/dybar] grad F(Y_k))

where the Hamiltonian partials are evaluated at step k with (p_hat, q, gamma).
E^ is the regression estimator of :mod:`mfspde.regression`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, finite_or_raise
from .discretization import adjoint_operator
from .forward import ForwardPath
from .meanfield import MeanFieldOperator
from .regression import RegressionDiagnostics, RegressionSpec, conditional_expectation


@dataclass
class AdjointTriple:
    p: np.ndarray  # (n_steps + 1, scenario, node)
    p_hat: np.ndarray  # (n_steps, scenario, node): p entering the Hamiltonian at step k
    q: np.ndarray  # (n_steps, scenario, node)
    gamma: np.ndarray  # (n_steps, scenario, node, mark)
    diagnostics: RegressionDiagnostics = field(default_factory=RegressionDiagnostics)
    martingale_residual: np.ndarray | None = None  # (n_steps, node) mean of pi - p_hat


def terminal_condition(path: ForwardPath, coeffs: CoefficientSet, F: MeanFieldOperator) -> np.ndarray:
    """dg/dy(x, Y_T, F(Y_T)) + E[dg/dybar(...)] grad F(Y_T)."""
    x = path.problem.grid.nodes
    Y = path.Y[-1]
    ybar = F(Y)
    shape = Y.shape
    gy = np.broadcast_to(np.asarray(coeffs.g.dy(x, Y, ybar), dtype=float), shape)
    gyb = np.broadcast_to(np.asarray(coeffs.g.dybar(x, Y, ybar), dtype=float), shape)
    out = gy + np.mean(gyb, axis=0) * F.gradient(Y)
    return finite_or_raise(np.array(out), "terminal condition")


def hamiltonian_partials(coeffs: CoefficientSet, levy, t, x, Y, ybar, u, ubar, p, q, gamma, wrt: str):
    """dH/d(wrt) = df + db p + dsigma q + sum_j dtheta_j gamma_j nu_j."""
    shape = Y.shape
    out = np.broadcast_to(coeffs.f.partial(wrt)(t, x, Y, ybar, u, ubar), shape) + np.broadcast_to(
        coeffs.b.partial(wrt)(t, x, Y, ybar, u, ubar), shape
    ) * p
    out = out + np.broadcast_to(coeffs.sigma.partial(wrt)(t, x, Y, ybar, u, ubar), shape) * q
    if levy.n_marks:
        e = levy.e
        dth = coeffs.theta.partial(wrt)(t, x[:, None], Y[..., None], ybar[:, None], u[..., None], ubar[:, None], e)
        dth = np.broadcast_to(np.asarray(dth, dtype=float), shape + (e.size,))
        out = out + np.sum(dth * gamma * levy.nu, axis=-1)
    return np.asarray(out, dtype=float)


def solve_adjoint(path: ForwardPath, reg: RegressionSpec | None = None) -> AdjointTriple:
    reg = reg or RegressionSpec()
    prob = path.problem
    coeffs, F = prob.coeffs, prob.F
    levy = prob.levy
    N = path.n_steps
    M, n = path.Y.shape[1:]
    K = levy.n_marks
    dt = prob.dt
    x = prob.grid.nodes
    op_star = adjoint_operator(prob.op_L)
    diag = RegressionDiagnostics()

    p = np.empty((N + 1, M, n))
    p_hat = np.empty((N, M, n))
    q = np.empty((N, M, n))
    gamma = np.empty((N, M, n, K))
    resid = np.empty((N, n))
    p[N] = terminal_condition(path, coeffs, F)
    nu = levy.nu
    for k in range(N - 1, -1, -1):
        t = k * dt
        pi = op_star.solve_implicit(p[k + 1], dt)
        dW = prob.noise.dW[:, k]
        comp = prob.noise.jump_counts[:, k, :] - nu * dt
        targets = np.concatenate(
            [pi[..., None], (pi * dW[:, None])[..., None], pi[..., None] * comp[:, None, :]], axis=-1
        )
        est = conditional_expectation(path.Y[k], targets, reg, diag)
        p_hat[k] = est[..., 0]
        q[k] = est[..., 1] / dt
        gamma[k] = est[..., 2:] / (nu * dt) if K else est[..., 2:]
        resid[k] = np.mean(pi - p_hat[k], axis=0)

        Y = path.Y[k]
        u = path.control_at(k)
        ybar = path.mean_field[k]
        ubar = path.control_mean_field[k]
        hy = hamiltonian_partials(coeffs, levy, t, x, Y, ybar, u, ubar, p_hat[k], q[k], gamma[k], "y")
        hyb = hamiltonian_partials(coeffs, levy, t, x, Y, ybar, u, ubar, p_hat[k], q[k], gamma[k], "ybar")
        driver = hy + np.mean(hyb, axis=0) * F.gradient(Y)
        p[k] = p_hat[k] + dt * finite_or_raise(driver, "adjoint driver")
    return AdjointTriple(p, p_hat, q, gamma, diag, resid)


# ------------------------------------------------------------------ standalone backward equation


@dataclass(frozen=True)
class BackwardGenerator:
    """Lipschitz generator

        f = f0 + c_y y + c_h H(Y) + c_z z + c_j J(Z) + sum_j nu_j (c_u U_j + c_k K(U)_j)

    with mean-field operators H, J, K (``None`` switches a term off).
    K acts mark-wise through the same scalar operator kinds.
    """

    f0: float = 0.0
    c_y: float = 0.0
    c_h: float = 0.0
    c_z: float = 0.0
    c_j: float = 0.0
    c_u: float = 0.0
    c_k: float = 0.0
    H: MeanFieldOperator | None = None
    J: MeanFieldOperator | None = None
    K: MeanFieldOperator | None = None

    @property
    def has_meanfield(self) -> bool:
        return any(
            op is not None and c != 0.0 for op, c in ((self.H, self.c_h), (self.J, self.c_j), (self.K, self.c_k))
        )

    def __call__(self, y, hy, z, jz, U, kU, nu):
        out = self.f0 + self.c_y * y + self.c_z * z
        if self.H is not None:
            out = out + self.c_h * hy
        if self.J is not None:
            out = out + self.c_j * jz
        if U.shape[-1]:
            out = out + np.sum(nu * self.c_u * U, axis=-1)
            if self.K is not None:
                out = out + np.sum(nu * self.c_k * kU, axis=-1)
        return out


@dataclass
class BackwardSolution:
    Y: np.ndarray  # (n_steps + 1, scenario, node)
    Z: np.ndarray  # (n_steps, scenario, node)
    U: np.ndarray  # (n_steps, scenario, node, mark)


def solve_backward(
    path: ForwardPath,
    terminal: np.ndarray,
    gen: BackwardGenerator,
    reg: RegressionSpec,
    previous: BackwardSolution | None = None,
) -> BackwardSolution:
    """One sweep of (I - dt L) Y_k = E^[Y_{k+1}] - dt f(...), with the
    mean-field arguments H, J, K evaluated on ``previous`` (zero if None)."""
    prob = path.problem
    levy = prob.levy
    N = path.n_steps
    M, n = path.Y.shape[1:]
    K = levy.n_marks
    dt = prob.dt
    nu = levy.nu
    if previous is None:
        previous = BackwardSolution(np.zeros((N + 1, M, n)), np.zeros((N, M, n)), np.zeros((N, M, n, K)))
    Y = np.empty((N + 1, M, n))
    Z = np.empty((N, M, n))
    U = np.empty((N, M, n, K))
    Y[N] = terminal
    for k in range(N - 1, -1, -1):
        dW = prob.noise.dW[:, k]
        comp = prob.noise.jump_counts[:, k, :] - nu * dt
        nxt = Y[k + 1]
        targets = np.concatenate(
            [nxt[..., None], (nxt * dW[:, None])[..., None], nxt[..., None] * comp[:, None, :]], axis=-1
        )
        est = conditional_expectation(path.Y[k], targets, reg)
        y_hat = est[..., 0]
        Z[k] = est[..., 1] / dt
        U[k] = est[..., 2:] / (nu * dt) if K else est[..., 2:]
        hy = gen.H(previous.Y[k]) if gen.H is not None else 0.0
        jz = gen.J(previous.Z[k]) if gen.J is not None else 0.0
        if gen.K is not None and K:
            kU = np.stack([gen.K(previous.U[k][..., j]) for j in range(K)], axis=-1)
        else:
            kU = np.zeros((n, K))
        fval = gen(y_hat, hy, Z[k], jz, U[k], kU, nu)
        Y[k] = prob.op_L.solve_implicit(y_hat - dt * fval, dt)
    return BackwardSolution(Y, Z, U)


def weighted_distance(a: BackwardSolution, b: BackwardSolution, grid, dt: float, nu, weight: float) -> float:
    """sum_k dt e^{weight t_k} E[|dY_k|_H^2 + |dZ_k|_H^2 + sum_j nu_j |dU_kj|_H^2]."""
    N = a.Z.shape[0]
    t = dt * np.arange(N)
    dy = grid.norm_h_sq(a.Y[:N] - b.Y[:N]).mean(axis=1)
    dz = grid.norm_h_sq(a.Z - b.Z).mean(axis=1)
    du = np.zeros(N)
    if a.U.shape[-1]:
        diff = np.moveaxis(a.U - b.U, -1, -2)  # (step, scenario, mark, node)
        du = np.sum(nu * grid.norm_h_sq(diff), axis=-1).mean(axis=1)
    return float(np.sum(dt * np.exp(weight * t) * (dy + dz + du)))


@dataclass
class PicardBackwardReport:
    distances: np.ndarray  # distances[n] = dist(iterate n+1, iterate n), iterate 0 = zero triple
    ratios: np.ndarray
    final: BackwardSolution = field(repr=False)


def picard_backward(
    path: ForwardPath,
    terminal: np.ndarray,
    gen: BackwardGenerator,
    n_iters: int,
    reg: RegressionSpec | None = None,
    weight: float = 1.0,
) -> PicardBackwardReport:
    if n_iters < 2:
        raise ValueError("n_iters must be >= 2")
    reg = reg or RegressionSpec()
    prob = path.problem
    N = path.n_steps
    M, n = path.Y.shape[1:]
    K = prob.levy.n_marks
    prev = BackwardSolution(np.zeros((N + 1, M, n)), np.zeros((N, M, n)), np.zeros((N, M, n, K)))
    prev.Y[N] = terminal
    zero = prev
    dists = []
    for _ in range(n_iters):
        nxt = solve_backward(path, terminal, gen, reg, previous=prev if prev is not zero else None)
        dists.append(weighted_distance(nxt, prev, prob.grid, prob.dt, prob.levy.nu, weight))
        prev = nxt
    d = np.array(dists)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(d[:-1] > 0, d[1:] / d[:-1], 0.0)
    return PicardBackwardReport(d, ratios, prev)
