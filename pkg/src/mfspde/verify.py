"""Property batteries run by ``mfspde verify --suite NAME``.

Each suite returns ``{check_name: {"pass": bool, ...measured values}}``.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .adjoint import picard_backward
from .config import RunConfig
from .control import gateaux_J, hamiltonian, HamiltonianInputs, midpoint_concavity
from .discretization import (
    adjoint_operator,
    assemble_operator_L,
    build_spatial_grid,
    check_coercivity,
    tridiagonal_operator,
)
from .forward import ControlField, picard_forward, solve_forward
from .meanfield import exp_scale_moment, expectation, scaled, square_moment
from .noise import LevyMeasure, TimeGrid, sample_noise

SUITES = ("noise", "operators", "picard", "meanfield", "mp")


def martingale_statistics(levy: LevyMeasure, time_grid: TimeGrid, n_draws: int, seed: int, chunk: int = 10_000):
    """Per-step ensemble mean and standard error of the running Brownian sum
    and the running compensated jump sum (theta = 1 on every mark), built
    chunk by chunk so memory stays bounded."""
    N = time_grid.n_steps
    s1 = np.zeros((2, N))
    s2 = np.zeros((2, N))
    cnt_sum = np.zeros(levy.n_marks)
    dw_sum = dw_sq = 0.0
    for start in range(0, n_draws, chunk):
        m = min(chunk, n_draws - start)
        noise = sample_noise(time_grid, levy, m, seed, first_scenario=start)
        w = np.cumsum(noise.dW, axis=1)
        j = np.cumsum(noise.compensated().sum(axis=2), axis=1)
        for i, a in enumerate((w, j)):
            s1[i] += a.sum(axis=0)
            s2[i] += (a * a).sum(axis=0)
        cnt_sum += noise.jump_counts.sum(axis=(0, 1))
        dw_sum += noise.dW.sum()
        dw_sq += (noise.dW**2).sum()
    mean = s1 / n_draws
    var = s2 / n_draws - mean**2
    se = np.sqrt(np.maximum(var, 0) / n_draws)
    n_inc = n_draws * N
    dw_mean = dw_sum / n_inc
    return {
        "brownian_mean": mean[0], "brownian_se": se[0],
        "jump_mean": mean[1], "jump_se": se[1],
        "dW_mean": dw_mean, "dW_var": dw_sq / n_inc - dw_mean**2,
        "count_mean": cnt_sum / n_inc,
        "n_increments": n_inc,
    }


def suite_noise(cfg: RunConfig, n_draws: int = 100_000) -> dict:
    tg = cfg.time_grid
    levy = cfg.levy
    st = martingale_statistics(levy, tg, n_draws, cfg.seed)
    dt = tg.dt
    out = {}
    out["brownian_martingale"] = {
        "pass": bool(np.all(np.abs(st["brownian_mean"]) <= 4 * st["brownian_se"])),
        "max_z": float(np.max(np.abs(st["brownian_mean"]) / st["brownian_se"])),
    }
    out["compensated_jump_martingale"] = {
        "pass": bool(levy.n_marks == 0 or np.all(np.abs(st["jump_mean"]) <= 4 * st["jump_se"])),
        "max_z": float(np.max(np.abs(st["jump_mean"]) / np.where(st["jump_se"] > 0, st["jump_se"], 1.0))),
    }
    n = st["n_increments"]
    out["brownian_moments"] = {
        "pass": bool(abs(st["dW_mean"]) <= 4 * np.sqrt(dt / n) and abs(st["dW_var"] / dt - 1) <= 0.05),
        "mean": st["dW_mean"], "var_over_dt": st["dW_var"] / dt,
    }
    nu_dt = levy.nu * dt
    ok = np.abs(st["count_mean"] - nu_dt) <= 4 * np.sqrt(nu_dt / n)
    out["poisson_counts"] = {"pass": bool(np.all(ok)), "mean": st["count_mean"], "expected": nu_dt}
    return out


def suite_operators(cfg: RunConfig, n_pairs: int = 100) -> dict:
    rng = np.random.default_rng(cfg.seed)
    grid = cfg.grid
    out = {}
    worst = 0.0
    for i in range(n_pairs):
        if i % 2 == 0:
            op = assemble_operator_L(grid, float(cfg.data["model"]["kappa"]))
        else:
            n = grid.n_interior
            lo = np.r_[0.0, rng.normal(size=n - 1)]
            up = np.r_[rng.normal(size=n - 1), 0.0]
            op = tridiagonal_operator(grid, lo, rng.normal(size=n), up)
        phi, psi = rng.normal(size=(2, grid.n_interior))
        a = grid.inner(adjoint_operator(op).apply(phi), psi)
        b = grid.inner(phi, op.apply(psi))
        scale = max(abs(a), abs(b), 1e-300)
        worst = max(worst, abs(a - b) / scale)
    out["adjointness"] = {"pass": bool(worst <= 1e-12), "max_relative_error": worst}
    rep = check_coercivity(assemble_operator_L(grid, float(cfg.data["model"]["kappa"])), 1.0, None, seed=cfg.seed)
    out["coercivity"] = {"pass": bool(rep.satisfied and rep.zeta > 0), "zeta": rep.zeta,
                         "min_quotient": rep.min_quotient, "exact_min": rep.exact_min}
    errs = []
    for n in (19, 39):
        g = build_spatial_grid(0.0, 1.0, n)
        x = g.nodes
        u = x**2 * (1 - x) ** 2  # quartic vanishing at both ends
        exact = 0.5 * (2 - 12 * x + 12 * x * x)
        errs.append(np.max(np.abs(assemble_operator_L(g, 0.5).apply(u) - exact)))
    ratio = errs[0] / errs[1]  # halving h should divide the error by 4
    out["stencil_consistency"] = {"pass": bool(4 * 0.7 <= ratio <= 4 * 1.3), "errors": errs, "ratio": ratio}
    return out


def suite_picard(cfg: RunConfig) -> dict:
    prob = cfg.forward_problem()
    ctrl = cfg.control()
    n = int(cfg.data["solver"]["picard_iters"])
    rep = picard_forward(prob, ctrl, max(n, 5))
    d = rep.distances  # d[0] = d_1 (Y^1 - Y^0), so d_n = d[n - 1]
    dec = bool(np.all(np.diff(d[1:]) < 0))
    ratio52 = float(d[4] / d[1]) if d[1] > 0 else 0.0
    out = {"forward_contraction": {"pass": dec and ratio52 < 0.05, "distances": d, "d5_over_d2": ratio52,
                                    "fixed_point_distance": rep.fixed_point_distance}}
    path = solve_forward(prob, ctrl)
    gen = cfg.backward_generator()
    brep = picard_backward(path, path.Y[-1], gen, max(n, 5), cfg.regression, float(cfg.data["backward"]["weight"]))
    r = brep.ratios[1:]
    out["backward_contraction"] = {"pass": bool(np.all(r <= 0.5)), "distances": brep.distances, "ratios": brep.ratios}
    return out


def suite_meanfield(cfg: RunConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    out = {}
    worst = 0.0
    for op in (expectation(), scaled(2.5), square_moment(), exp_scale_moment(0.7)):
        for _ in range(20):
            X = rng.normal(size=64)
            Z = rng.normal(size=64)
            eps = 1e-6
            fd = (op(X + eps * Z) - op(X - eps * Z)) / (2 * eps)
            pair = float(np.mean(op.gradient(X) * Z))
            worst = max(worst, abs(fd - pair) / max(1.0, abs(pair)))
    out["gradient_pairing"] = {"pass": bool(worst <= 1e-6), "max_error": worst}
    X, Z = rng.normal(size=(2, 64))
    a, b = 1.7, -0.4
    E = expectation()
    lin = abs(E(a * X + b * Z) - (a * E(X) + b * E(Z)))
    out["expectation_linearity"] = {"pass": bool(lin <= 1e-12), "error": lin}
    return out


def suite_mp(cfg: RunConfig, n_directions: int = 3, n_scenarios: int = 400) -> dict:
    out = {}
    prob = cfg.forward_problem()
    if prob.n_scenarios > n_scenarios:
        prob = replace(prob, noise=prob.noise.subset(np.arange(n_scenarios)))
    c = cfg.data["control"]
    N, n = prob.time_grid.n_steps, prob.grid.n_interior
    rng = np.random.default_rng(cfg.seed)
    u = ControlField(values=np.full((N, n), float(c["value"])), u_min=float(c["u_min"]), u_max=float(c["u_max"]))
    reg = cfg.regression
    rows = []
    ok = True
    for _ in range(n_directions):
        beta = rng.uniform(-1, 1, size=(N, n)) * min(1.0, 0.5 * float(c["value"]))
        fd, pair = gateaux_J(prob, u, beta, reg=reg)
        err = abs(fd - pair) / max(abs(fd), abs(pair), 1e-8)
        ok &= err <= 0.05
        rows.append({"fd": fd, "pairing": pair, "relative_error": err})
    out["gateaux_pairing"] = {"pass": bool(ok), "directions": rows}
    levy = prob.levy
    inp = HamiltonianInputs(0.3, 0.5, 1.2, 1.0, 0.8, 0.8, 0.0, 0.3, tuple([0.1] * levy.n_marks))
    h0 = hamiltonian(inp, prob.coeffs, levy)
    h1 = hamiltonian(replace(inp, p=1.0), prob.coeffs, levy)
    h2 = hamiltonian(replace(inp, p=2.0), prob.coeffs, levy)
    aff = abs((h2 - h1) - (h1 - h0))
    out["hamiltonian_affine_in_p"] = {"pass": bool(aff <= 1e-12 * max(1.0, abs(h0))), "error": aff}
    lin = midpoint_concavity(lambda v: 2 * v[0] - v[1], [-1, -1], [1, 1], 100, cfg.seed)
    bil = midpoint_concavity(lambda v: v[0] * v[1], [-1, -1], [1, 1], 200, cfg.seed)
    out["concavity_detection"] = {"pass": lin["verdict"] == "pass" and bil["verdict"] == "counterexample",
                                  "linear": lin, "bilinear": bil}
    return out


def run_suite(cfg: RunConfig, name: str) -> dict:
    if name not in SUITES:
        raise KeyError(name)
    return {"noise": suite_noise, "operators": suite_operators, "picard": suite_picard,
            "meanfield": suite_meanfield, "mp": suite_mp}[name](cfg)
