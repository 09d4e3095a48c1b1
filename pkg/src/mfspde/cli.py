"""Command-line entry point.

    mfspde {simulate,harvest,adjoint,picard,optimize,verify} --config run.toml
           [--seed N] [--out DIR] [--threads N]

Exit codes: 0 ok, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import solve_adjoint
from .config import ConfigError, RunConfig
from .control import InfoFiltration, check_concavity, check_necessary, concavity_samples, gradient_ascent
from .forward import solve_forward
from .harvesting import solve_harvesting, verify_harvest_optimality
from .io import write_field_csv, write_json, write_manifest, write_table_csv
from .verify import SUITES, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _filtration(cfg: RunConfig) -> InfoFiltration:
    return InfoFiltration(float(cfg.data["control"]["delay"]))


def run_simulate(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    prob = cfg.forward_problem(workers=threads)
    path = solve_forward(prob, cfg.control())
    s = path.summary()
    files = [write_field_csv(out / "forward_summary.csv", prob.time_grid.times, prob.grid.nodes, s)]
    files.append(write_json(out / "forward_report.json", {
        "floor_hits": int(path.floor_hits.sum()),
        "mean_at_T": path.mean_field[-1],
        "n_scenarios": prob.n_scenarios,
    }))
    return files


def run_harvest(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    if cfg.data["model"]["preset"] != "harvesting":
        raise ConfigError("model.preset", "the harvest command needs preset = 'harvesting'")
    s = cfg.data["solver"]
    hp = cfg.harvesting_problem()
    reg = cfg.regression
    prob = cfg.forward_problem(workers=threads)
    sol = solve_harvesting(hp, int(s["max_outer"]), float(s["tol_fp"]), float(s["omega"]), reg, problem=prob)
    battery = verify_harvest_optimality(sol, int(s["n_challengers"]), cfg.seed)
    mp = check_necessary(prob, sol.control, _filtration(cfg), reg, adj=sol.adjoint, path=sol.path)
    mp.concavity_verdict = check_concavity(prob.coeffs, prob.levy, concavity_samples(sol.path, sol.adjoint),
                                           64, cfg.seed)
    mp.comparisons = [c.as_dict() for c in battery]
    summary = sol.summary()
    summary.update({
        "status": "ok" if sol.converged else "warning: fixed point did not converge",
        "necessary_residual": mp.sup_residual,
        "residual_scale": mp.scale,
        "max_challenger_gain_over_2se": max((-c.diff - 2 * c.stderr) for c in battery[1:]),
    })
    N = prob.time_grid.n_steps
    u = np.asarray(sol.control.values)
    fields = {
        "u_mean": u.mean(axis=1),
        "Y_mean": sol.path.Y[:N].mean(axis=1),
        "p_mean": sol.adjoint.p_hat.mean(axis=1),
    }
    return [
        write_json(out / "harvest_summary.json", summary),
        write_json(out / "mp_report.json", mp.as_dict()),
        write_field_csv(out / "harvest_fields.csv", prob.time_grid.times[:N], prob.grid.nodes, fields),
    ]


def run_adjoint(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    prob = cfg.forward_problem(workers=threads)
    path = solve_forward(prob, cfg.control())
    adj = solve_adjoint(path, cfg.regression)
    N = path.n_steps
    cols = {
        "p_mean": adj.p[:N].mean(axis=1), "p_sd": adj.p[:N].std(axis=1),
        "q_mean": adj.q.mean(axis=1), "q_sd": adj.q.std(axis=1),
    }
    for k in range(prob.levy.n_marks):
        cols[f"gamma_{k + 1}_mean"] = adj.gamma[..., k].mean(axis=1)
    return [
        write_field_csv(out / "adjoint_fields.csv", prob.time_grid.times[:N], prob.grid.nodes, cols),
        write_json(out / "regression_diagnostics.json", dict(adj.diagnostics.as_dict(),
                                                              martingale_residual_max=np.abs(adj.martingale_residual).max())),
    ]


def run_picard(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    rep = run_suite(cfg, "picard")
    fw, bw = rep["forward_contraction"]["distances"], rep["backward_contraction"]["distances"]
    rows = [(i + 1, fw[i] if i < len(fw) else "", bw[i] if i < len(bw) else "") for i in range(max(len(fw), len(bw)))]
    return [
        write_json(out / "picard.json", rep),
        write_table_csv(out / "picard_distances.csv", ["n", "forward_d", "backward_d"], rows),
    ]


def run_optimize(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    s = cfg.data["solver"]
    prob = cfg.forward_problem(workers=threads)
    res = gradient_ascent(prob, cfg.control(), int(s["ascent_steps"]), float(s["ascent_eta"]),
                          _filtration(cfg), cfg.regression)
    mp = check_necessary(prob, res.control, _filtration(cfg), cfg.regression)
    rows = [(i, j, r) for i, (j, r) in enumerate(zip(res.J_trace, res.residual_trace))]
    return [
        write_table_csv(out / "j_trace.csv", ["step", "J", "residual"], rows),
        write_json(out / "mp_report.json", mp.as_dict()),
    ]


def run_verify(cfg: RunConfig, out: Path, suite: str) -> tuple[list[Path], bool]:
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r} (choose from {', '.join(SUITES)})")
    rep = run_suite(cfg, suite)
    ok = all(v["pass"] for v in rep.values())
    rep = {"suite": suite, "all_pass": ok, "checks": rep}
    return [write_json(out / f"verify_{suite}.json", rep)], ok


COMMANDS = ("simulate", "harvest", "adjoint", "picard", "optimize", "verify")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfspde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mfspde {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override noise.master_seed")
        sp.add_argument("--out", default=None, help="output directory (default: output.dir)")
        sp.add_argument("--threads", type=int, default=1, help="noise-generation workers; never changes results")
        if name == "verify":
            sp.add_argument("--suite", required=True, help=f"one of {', '.join(SUITES)}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out or cfg.data["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        status = EXIT_OK
        if args.command == "verify":
            files, ok = run_verify(cfg, out, args.suite)
            status = EXIT_OK if ok else 1
        else:
            runner = {"simulate": run_simulate, "harvest": run_harvest, "adjoint": run_adjoint,
                      "picard": run_picard, "optimize": run_optimize}[args.command]
            files = runner(cfg, out, args.threads)
        manifest = write_manifest(out, args.command, cfg.echo(), files)
        print(f"{args.command}: wrote {len(files)} files to {out} (hash {manifest['hash'][:16]})")
        return status
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
