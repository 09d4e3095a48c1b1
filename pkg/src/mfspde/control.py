"""Performance functional, Hamiltonian, delayed-information projections and
first-order optimality checks.

Quadrature everywhere is h * sum over interior nodes in x and left-endpoint
in t, so that ``evaluate_J`` and the adjoint pairing in ``gateaux_J`` are
discretised the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import AdjointTriple, hamiltonian_partials, solve_adjoint
from .coefficients import CoefficientSet, finite_or_raise
from .forward import ControlBoundsError, ControlField, ForwardPath, ForwardProblem, solve_forward
from .noise import LevyMeasure
from .regression import RegressionSpec, conditional_expectation


class HarvestDomainError(ValueError):
    """log / reciprocal of a nonpositive argument."""


@dataclass(frozen=True)
class InfoFiltration:
    """Delayed information E_t = F_{(t - delay)+}; delay 0 is full information."""

    delay: float = 0.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be >= 0")

    def feature_index(self, k: int, dt: float) -> int | None:
        """Time index whose state generates E_{t_k}; None means trivial information."""
        if self.delay == 0.0:
            return k
        lag = int(round(self.delay / dt))
        if lag >= k:
            return None
        return k - lag


@dataclass(frozen=True)
class HamiltonianInputs:
    t: float
    x: float
    y: float
    ybar: float
    u: float
    ubar: float
    p: float
    q: float
    gamma: tuple = ()


def hamiltonian(inp: HamiltonianInputs, coeffs: CoefficientSet, levy: LevyMeasure) -> float:
    """f + b p + sigma q + sum_k theta(e_k) gamma_k nu_k."""
    gamma = np.asarray(inp.gamma, dtype=float)
    if gamma.size != levy.n_marks:
        raise ValueError(f"gamma has {gamma.size} entries, Levy measure has {levy.n_marks} marks")
    a = (inp.t, inp.x, inp.y, inp.ybar, inp.u, inp.ubar)
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = float(coeffs.f.value(*a)) + float(coeffs.b.value(*a)) * inp.p + float(coeffs.sigma.value(*a)) * inp.q
            if levy.n_marks:
                th = np.broadcast_to(np.asarray(coeffs.theta.value(*a, levy.e), dtype=float), levy.e.shape)
                out += float(np.sum(th * gamma * levy.nu))
        except FloatingPointError as exc:
            raise HarvestDomainError(str(exc)) from exc
    if not np.isfinite(out):
        raise HarvestDomainError("non-finite Hamiltonian (nonpositive log argument?)")
    return out


@dataclass
class JResult:
    value: float
    samples: np.ndarray  # per-scenario payoff
    stderr: float
    path: ForwardPath = field(repr=False, default=None)


def payoff_samples(path: ForwardPath) -> np.ndarray:
    prob = path.problem
    coeffs = prob.coeffs
    h, dt = prob.grid.h, prob.dt
    x = prob.grid.nodes
    M, n = path.Y.shape[1:]
    total = np.zeros(M)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(path.n_steps):
            Y = path.Y[k]
            fk = coeffs.f.value(k * dt, x, Y, path.mean_field[k], path.control_at(k), path.control_mean_field[k])
            total += dt * h * np.broadcast_to(np.asarray(fk, dtype=float), (M, n)).sum(axis=1)
        YN = path.Y[-1]
        gN = coeffs.g.value(x, YN, prob.F(YN))
        total += h * np.broadcast_to(np.asarray(gN, dtype=float), (M, n)).sum(axis=1)
    if not np.all(np.isfinite(total)):
        raise HarvestDomainError("non-finite payoff (log of a nonpositive harvest?)")
    return total


def evaluate_J(problem: ForwardProblem, control: ControlField) -> JResult:
    """Ensemble mean of the discretised running plus terminal profit under
    the problem's (fixed) noise path."""
    path = solve_forward(problem, control)
    s = payoff_samples(path)
    M = s.size
    se = float(s.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return JResult(float(s.mean()), s, se, path)


def project_conditional(samples: np.ndarray, path: ForwardPath, k: int, filt: InfoFiltration,
                        reg: RegressionSpec | None = None) -> np.ndarray:
    """Estimate E[samples | E_{t_k}] per scenario and node.

    Full information returns the samples unchanged (they are F_t-measurable
    by construction); delayed information regresses on the delayed state;
    a delay reaching back before 0 gives the ensemble mean.
    """
    samples = np.asarray(samples, dtype=float)
    j = filt.feature_index(k, path.problem.dt)
    if filt.delay == 0.0:
        return samples.copy()
    if j is None:
        return np.broadcast_to(samples.mean(axis=0), samples.shape).copy()
    return conditional_expectation(path.Y[j], samples, reg or RegressionSpec())


def grad_H_field(path: ForwardPath, adj: AdjointTriple, filt: InfoFiltration | None = None,
                 reg: RegressionSpec | None = None) -> np.ndarray:
    """r_k = E^[dH/du | E_t] + E[dH/dubar] grad G(u_k), shape (step, scenario, node)."""
    filt = filt or InfoFiltration()
    prob = path.problem
    coeffs, levy = prob.coeffs, prob.levy
    x = prob.grid.nodes
    N = path.n_steps
    M, n = path.Y.shape[1:]
    r = np.empty((N, M, n))
    for k in range(N):
        t = k * prob.dt
        Y, u = path.Y[k], path.control_at(k)
        ybar, ubar = path.mean_field[k], path.control_mean_field[k]
        args = (coeffs, levy, t, x, Y, ybar, u, ubar, adj.p_hat[k], adj.q[k], adj.gamma[k])
        hu = hamiltonian_partials(*args, "u")
        hub = hamiltonian_partials(*args, "ubar")
        r[k] = project_conditional(hu, path, k, filt, reg) + np.mean(hub, axis=0) * prob.G.gradient(u)
    return finite_or_raise(r, "Hamiltonian gradient")


def quadrature_pairing(r: np.ndarray, beta: np.ndarray, h: float, dt: float) -> float:
    """sum_k dt h sum_i mean_s r beta."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 2:
        beta = beta[:, None, :]
    return float(dt * h * np.sum(np.mean(r * beta, axis=1)))


@dataclass
class MPReport:
    sup_residual: float
    scale: float
    concavity_verdict: dict | None = None
    J_value: float | None = None
    comparisons: list = field(default_factory=list)
    residual_profile: np.ndarray | None = field(default=None, repr=False)  # (step, node)

    def as_dict(self) -> dict:
        return {
            "sup_residual": self.sup_residual,
            "scale": self.scale,
            "concavity": self.concavity_verdict,
            "J": self.J_value,
            "comparisons": self.comparisons,
        }


def clamp_active(control: ControlField, u: np.ndarray, rtol: float = 1e-4) -> np.ndarray:
    lo = np.isfinite(control.u_min) & (u <= control.u_min * (1 + rtol) + rtol)
    hi = np.isfinite(control.u_max) & (u >= control.u_max * (1 - rtol) - rtol)
    return lo | hi


def check_necessary(problem: ForwardProblem, control: ControlField, filt: InfoFiltration | None = None,
                    reg: RegressionSpec | None = None, adj: AdjointTriple | None = None,
                    path: ForwardPath | None = None) -> MPReport:
    """sup over (t, x) of the ensemble mean of |r|, ignoring samples where the
    control sits on a bound.  ``scale`` is the median |dH/du| driver size
    |Y p_hat| (or 1 when that vanishes)."""
    path = path or solve_forward(problem, control)
    adj = adj or solve_adjoint(path, reg)
    r = grad_H_field(path, adj, filt, reg)
    N = path.n_steps
    u = np.stack([path.control_at(k) for k in range(N)])
    active = clamp_active(control, u)
    absr = np.where(active, 0.0, np.abs(r))
    free = np.maximum((~active).sum(axis=1), 1)
    profile = absr.sum(axis=1) / free
    sc = float(np.median(np.abs(path.Y[:N] * adj.p_hat)))
    J = float(payoff_samples(path).mean())
    return MPReport(float(profile.max()), sc if sc > 0 else 1.0, None, J, [], profile)


def _control_values(control: ControlField, path: ForwardPath) -> np.ndarray:
    if control.values is not None:
        return np.asarray(control.values)
    return np.stack([path.control_at(k) for k in range(path.n_steps)])


def gateaux_J(problem: ForwardProblem, control: ControlField, beta: np.ndarray,
              z_list=(1e-3, 5e-4), filt: InfoFiltration | None = None,
              reg: RegressionSpec | None = None) -> tuple[float, float]:
    """(Richardson-extrapolated central difference of J along beta,
    adjoint pairing of the Hamiltonian gradient with beta)."""
    beta = np.asarray(beta, dtype=float)
    if not np.any(beta):
        return 0.0, 0.0
    base_path = solve_forward(problem, control)
    u = _control_values(control, base_path)
    b = beta if beta.ndim == u.ndim else (beta[:, None, :] if u.ndim == 3 else beta)
    diffs = []
    for z in z_list:
        vals = []
        for sgn in (1.0, -1.0):
            v = u + sgn * z * b
            if np.any(v < control.u_min) or np.any(v > control.u_max):
                raise ControlBoundsError(f"u + ({sgn * z}) beta leaves the admissible set")
            vals.append(evaluate_J(problem, control.with_values(v)).value)
        diffs.append((vals[0] - vals[1]) / (2 * z))
    if len(diffs) >= 2:
        ratio = z_list[0] / z_list[1]
        fd = (ratio**2 * diffs[1] - diffs[0]) / (ratio**2 - 1)
    else:
        fd = diffs[0]
    adj = solve_adjoint(base_path, reg)
    r = grad_H_field(base_path, adj, filt, reg)
    return float(fd), quadrature_pairing(r, beta, problem.grid.h, problem.dt)


def _midpoint_test(fn, lo: np.ndarray, hi: np.ndarray, probe_count: int, rng, rtol: float):
    for _ in range(probe_count):
        a = rng.uniform(lo, hi)
        b = rng.uniform(lo, hi)
        fa, fb, fm = fn(a), fn(b), fn(0.5 * (a + b))
        scale = max(1.0, abs(fa), abs(fb), abs(fm))
        if fm < 0.5 * (fa + fb) - rtol * scale:
            return {"verdict": "counterexample", "witness": [a.tolist(), b.tolist()],
                    "midpoint": float(fm), "average": float(0.5 * (fa + fb))}
    return None


def midpoint_concavity(fn, lo, hi, probe_count: int = 200, seed: int = 0, rtol: float = 1e-10) -> dict:
    """Midpoint test of concavity for ``fn`` on the box [lo, hi]."""
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(seed)
    found = _midpoint_test(fn, np.asarray(lo, float), np.asarray(hi, float), probe_count, rng, rtol)
    return found or {"verdict": "pass"}


def check_concavity(coeffs: CoefficientSet, levy: LevyMeasure, adj_samples: dict, probe_count: int, seed: int,
                    y_box=(0.1, 3.0), u_box=(0.1, 3.0), rtol: float = 1e-10) -> dict:
    """Midpoint concavity of (y, u) -> H at sampled (t, x, ybar, ubar, p, q, gamma),
    and of y -> g.  ``adj_samples`` holds arrays t, x, ybar, ubar, p, q, gamma
    (gamma with a trailing mark axis) of equal leading length."""
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.array([y_box[0], u_box[0]])
    hi = np.array([y_box[1], u_box[1]])
    n = len(adj_samples["p"])
    for _ in range(probe_count):
        i = rng.integers(n)
        s = {k: np.asarray(v)[i] for k, v in adj_samples.items()}

        def H(v, s=s):
            inp = HamiltonianInputs(float(s["t"]), float(s["x"]), float(v[0]), float(s["ybar"]), float(v[1]),
                                    float(s["ubar"]), float(s["p"]), float(s["q"]), tuple(np.atleast_1d(s["gamma"])))
            return hamiltonian(inp, coeffs, levy)

        def g(v, s=s):
            return float(coeffs.g.value(float(s["x"]), float(v[0]), float(s["ybar"])))

        for fn, a, b, what in ((H, lo, hi, "H"), (g, lo[:1], hi[:1], "g")):
            found = _midpoint_test(fn, a, b, 1, rng, rtol)
            if found:
                found["function"] = what
                return found
    return {"verdict": "pass"}


def concavity_samples(path: ForwardPath, adj: AdjointTriple, n: int = 64, seed: int = 0) -> dict:
    """Random (t, x, ybar, ubar, p, q, gamma) draws from a solved pair."""
    rng = np.random.default_rng(seed)
    N = path.n_steps
    M, nn = path.Y.shape[1:]
    k = rng.integers(N, size=n)
    s = rng.integers(M, size=n)
    i = rng.integers(nn, size=n)
    x = path.problem.grid.nodes
    return {
        "t": k * path.problem.dt,
        "x": x[i],
        "ybar": path.mean_field[k, i],
        "ubar": path.control_mean_field[k, i],
        "p": adj.p_hat[k, s, i],
        "q": adj.q[k, s, i],
        "gamma": adj.gamma[k, s, i],
    }


def projected_residual(control: ControlField, u: np.ndarray, r: np.ndarray) -> float:
    """max |r| ignoring components blocked by an active bound."""
    blocked = (clamp_active(control, u) & (u <= 0.5 * (control.u_min + control.u_max)) & (r < 0)) | (
        clamp_active(control, u) & (u > 0.5 * (control.u_min + control.u_max)) & (r > 0)
    )
    return float(np.max(np.abs(np.where(blocked, 0.0, r))))


@dataclass
class AscentResult:
    control: ControlField
    J_trace: list
    residual_trace: list


def gradient_ascent(problem: ForwardProblem, u0: ControlField, steps: int, eta: float,
                    filt: InfoFiltration | None = None, reg: RegressionSpec | None = None) -> AscentResult:
    """Projected ascent u <- clamp(u + eta r) with r recomputed on the
    problem's fixed noise each step.  J_trace has steps + 1 entries."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    control = u0
    Js, res = [], []
    for it in range(steps + 1):
        path = solve_forward(problem, control)
        Js.append(float(payoff_samples(path).mean()))
        adj = solve_adjoint(path, reg)
        r = grad_H_field(path, adj, filt, reg)
        u = _control_values(control, path)
        u = np.broadcast_to(u[:, None, :] if u.ndim == 2 else u, r.shape)
        res.append(projected_residual(control, u, r))
        if it == steps or eta == 0.0:
            if eta == 0.0:
                Js += [Js[-1]] * (steps - it)
                res += [res[-1]] * (steps - it)
            break
        new = control.clamp(u + eta * r)
        if np.all(new == new[:, :1, :]):
            new = new[:, 0, :]
        control = control.with_values(new)
    return AscentResult(control, Js, res)


def with_seed(problem: ForwardProblem, noise) -> ForwardProblem:
    return replace(problem, noise=noise)
