"""Least-squares estimates of conditional expectations given the local state.

For each node i the regressors are polynomials (degree ``degree``) in the
standardised state Y[:, i], optionally with linear terms in the neighbouring
nodes.  Nodes whose state is (numerically) constant across scenarios, or
whose normal equations are ill-conditioned, fall back to the ensemble mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RegressionSpec:
    degree: int = 2
    ridge: float = 1e-8
    neighbors: bool = False
    max_condition: float = 1e12
    transform: str = "identity"  # or "log" for positive states

    def __post_init__(self):
        if self.transform not in ("identity", "log"):
            raise ValueError(f"unknown regression transform {self.transform!r}")
        if self.degree < 0:
            raise ValueError("regression degree must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class RegressionDiagnostics:
    fits: int = 0
    fallbacks: int = 0
    max_condition: float = 0.0
    conditions: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"fits": self.fits, "fallbacks": self.fallbacks, "max_condition": self.max_condition}


def _features(state: np.ndarray, spec: RegressionSpec):
    """Design tensor (node, scenario, p) and a mask of usable nodes."""
    M, n = state.shape
    if spec.transform == "log":
        state = np.log(np.maximum(state, 1e-300))
    mu = state.mean(axis=0)
    sd = state.std(axis=0)
    usable = sd > 1e-12 * (1.0 + np.abs(mu))
    z = np.where(usable, (state - mu) / np.where(usable, sd, 1.0), 0.0)
    cols = [np.ones((M, n))]
    for d in range(1, spec.degree + 1):
        cols.append(z**d)
    if spec.neighbors and n > 1:
        left = np.zeros_like(z)
        right = np.zeros_like(z)
        left[:, 1:] = z[:, :-1]
        right[:, :-1] = z[:, 1:]
        cols += [left, right]
    X = np.stack(cols, axis=-1).transpose(1, 0, 2)
    if spec.neighbors and n > 1:
        # boundary nodes have an all-zero neighbour column; keep them solvable
        X[0, :, -2] = 0.0
        X[-1, :, -1] = 0.0
    return X, usable


def conditional_expectation(
    state: np.ndarray,
    targets: np.ndarray,
    spec: RegressionSpec,
    diagnostics: RegressionDiagnostics | None = None,
) -> np.ndarray:
    """Estimate E[target | state] per node.

    ``state`` has shape (scenario, node); ``targets`` (scenario, node) or
    (scenario, node, r) for r targets sharing the regressors.
    """
    state = np.asarray(state, dtype=float)
    tgt = np.asarray(targets, dtype=float)
    squeeze = tgt.ndim == 2
    if squeeze:
        tgt = tgt[..., None]
    M, n, r = tgt.shape
    mean = tgt.mean(axis=0, keepdims=True)
    out = np.broadcast_to(mean, tgt.shape).copy()
    if spec.degree == 0 and not spec.neighbors:
        if diagnostics is not None:
            diagnostics.fits += n
        return out[..., 0] if squeeze else out

    X, usable = _features(state, spec)
    p = X.shape[-1]
    gram = np.einsum("nmp,nmq->npq", X, X) / M
    reg = spec.ridge * np.eye(p)
    reg[0, 0] = 0.0
    gram = gram + reg
    rhs = np.einsum("nmp,mnr->npr", X, tgt) / M
    # zero neighbour columns at the ends would make gram singular
    diag_zero = np.einsum("npp->np", gram) <= 0.0
    gram = gram + np.einsum("np,pq->npq", diag_zero.astype(float), np.eye(p))
    cond = np.linalg.cond(gram)
    ok = usable & np.isfinite(cond) & (cond < spec.max_condition)
    if np.any(ok):
        coef = np.linalg.solve(gram[ok], rhs[ok])
        fitted = np.einsum("nmp,npr->mnr", X[ok], coef)
        out[:, ok, :] = fitted
    if diagnostics is not None:
        diagnostics.fits += n
        diagnostics.fallbacks += int(np.count_nonzero(~ok))
        finite = cond[np.isfinite(cond)]
        if finite.size:
            diagnostics.max_condition = max(diagnostics.max_condition, float(finite.max()))
    return out[..., 0] if squeeze else out
