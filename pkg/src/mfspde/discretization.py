"""Uniform 1-D grid, tridiagonal operators with Dirichlet closure, and
discrete L2 / H1 norms.

Fields live on interior nodes only; boundary values are implicitly zero
for every operator action.  Arrays may carry leading batch axes, the node
axis is always last.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded


class DomainError(ValueError):
    """Degenerate domain or grid specification."""


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float
    x_max: float
    n_interior: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise DomainError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if self.n_interior < 1:
            raise DomainError(f"n_interior={self.n_interior} must be >= 1")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(1, self.n_interior + 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Discrete L2(D) inner product along the node axis."""
        return self.h * np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def norm_h_sq(self, u: np.ndarray) -> np.ndarray:
        return self.inner(u, u)

    def norm_v_sq(self, u: np.ndarray) -> np.ndarray:
        """Discrete H1 norm squared: |u|_H^2 plus h * sum of squared
        difference quotients over all n+1 edges (zero boundary values)."""
        u = np.asarray(u, dtype=float)
        pad = [(0, 0)] * (u.ndim - 1) + [(1, 1)]
        dq = np.diff(np.pad(u, pad), axis=-1) / self.h
        return self.norm_h_sq(u) + self.h * np.sum(dq * dq, axis=-1)


def build_spatial_grid(x_min: float, x_max: float, n_interior: int) -> SpatialGrid:
    return SpatialGrid(float(x_min), float(x_max), int(n_interior))


@dataclass(frozen=True)
class DiscreteOperator:
    """Tridiagonal operator.  ``lower[i]`` couples node i to i-1 and
    ``upper[i]`` couples node i to i+1; ``lower[0]`` and ``upper[-1]`` are
    always zero (the missing Dirichlet neighbours).  ``bc_left``/``bc_right``
    are the weights those missing neighbours would carry, used by the
    forward solver to inject boundary data."""

    grid: SpatialGrid
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    kappa: float = 0.5
    bc_left: float = 0.0
    bc_right: float = 0.0
    _solver_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = self.grid.n_interior
        for name in ("lower", "diag", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DomainError(f"{name} must have shape ({n},), got {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n >= 1 and (self.lower[0] != 0.0 or self.upper[-1] != 0.0):
            raise DomainError("lower[0] and upper[-1] must be zero (Dirichlet closure)")

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[..., 1:] += self.lower[1:] * u[..., :-1]
        out[..., :-1] += self.upper[:-1] * u[..., 1:]
        return out

    def matrix(self) -> np.ndarray:
        n = self.grid.n_interior
        m = np.diag(self.diag)
        if n > 1:
            m += np.diag(self.lower[1:], -1) + np.diag(self.upper[:-1], 1)
        return m

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.lower[1:], self.upper[:-1]))

    def _implicit_bands(self, dt: float) -> np.ndarray:
        # banded layout for (I - dt*L), as expected by scipy.linalg.solve_banded
        ab = np.zeros((3, self.grid.n_interior))
        ab[0, 1:] = -dt * self.upper[:-1]
        ab[1, :] = 1.0 - dt * self.diag
        ab[2, :-1] = -dt * self.lower[1:]
        return ab

    def solve_implicit(self, rhs: np.ndarray, dt: float) -> np.ndarray:
        """Solve (I - dt*L) x = rhs along the node axis (batched)."""
        rhs = np.asarray(rhs, dtype=float)
        key = float(dt)
        ab = self._solver_cache.get(key)
        if ab is None:
            ab = self._implicit_bands(dt)
            self._solver_cache[key] = ab
        n = self.grid.n_interior
        flat = rhs.reshape(-1, n).T
        x = solve_banded((1, 1), ab, flat, check_finite=True)
        return x.T.reshape(rhs.shape)


def assemble_operator_L(grid: SpatialGrid, kappa: float = 0.5) -> DiscreteOperator:
    """kappa * second difference with homogeneous Dirichlet closure."""
    if kappa < 0:
        raise DomainError(f"kappa={kappa} must be >= 0")
    n = grid.n_interior
    c = kappa / grid.h**2
    lower = np.full(n, c)
    upper = np.full(n, c)
    lower[0] = 0.0
    upper[-1] = 0.0
    return DiscreteOperator(grid, lower, np.full(n, -2.0 * c), upper, kappa=kappa, bc_left=c, bc_right=c)


def tridiagonal_operator(grid: SpatialGrid, lower, diag, upper) -> DiscreteOperator:
    """Operator from arbitrary bands; the boundary entries of lower/upper
    are discarded."""
    lower = np.array(lower, dtype=float)
    upper = np.array(upper, dtype=float)
    lower[0] = 0.0
    upper[-1] = 0.0
    return DiscreteOperator(grid, lower, np.asarray(diag, dtype=float), upper, kappa=float("nan"))


def adjoint_operator(op: DiscreteOperator) -> DiscreteOperator:
    # uniform h-weights make the L2(D)-adjoint the plain transpose
    n = op.grid.n_interior
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = op.upper[:-1]
    upper[:-1] = op.lower[1:]
    return DiscreteOperator(
        op.grid, lower, op.diag.copy(), upper, kappa=op.kappa, bc_left=op.bc_left, bc_right=op.bc_right
    )


@dataclass(frozen=True)
class CoercivityReport:
    chi: float
    zeta: float
    min_quotient: float
    satisfied: bool
    exact_min: float


def coercivity_quotient(op: DiscreteOperator, u: np.ndarray, chi: float) -> np.ndarray:
    """(2<-Lu,u> + chi |u|_H^2) / ||u||_V^2 for each field in ``u``."""
    grid = op.grid
    num = 2.0 * grid.inner(-op.apply(u), u) + chi * grid.norm_h_sq(u)
    return num / grid.norm_v_sq(u)


def _v_gram(grid: SpatialGrid) -> np.ndarray:
    n = grid.n_interior
    d = np.zeros((n + 1, n))
    d[np.arange(n), np.arange(n)] = 1.0
    d[np.arange(1, n + 1), np.arange(n)] -= 1.0
    return grid.h * (np.eye(n) + d.T @ d / grid.h**2)


def _exact_min_quotient(op: DiscreteOperator, chi: float) -> float:
    from scipy.linalg import eigh

    grid = op.grid
    m = op.matrix()
    a = -grid.h * (m + m.T) + chi * grid.h * np.eye(grid.n_interior)
    return float(eigh(a, _v_gram(grid), eigvals_only=True)[0])


def check_coercivity(
    op: DiscreteOperator,
    chi: float,
    zeta: float | None,
    n_probes: int = 64,
    seed: int = 0,
) -> CoercivityReport:
    """Probe the coercivity inequality on random fields plus every basis field.

    With ``zeta=None`` the probe minimum is taken as the certified constant
    (clipped at zero) and the report is satisfied iff that constant is > 0.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    n = op.grid.n_interior
    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((n_probes, n))
    probes = np.concatenate([probes, np.eye(n)], axis=0)
    probes = probes[np.any(probes != 0.0, axis=1)]
    q_min = float(np.min(coercivity_quotient(op, probes, chi)))
    exact = _exact_min_quotient(op, chi)
    if zeta is None:
        zeta_val = max(q_min, 0.0)
        ok = zeta_val > 0.0
    else:
        zeta_val = float(zeta)
        ok = q_min >= zeta_val
    return CoercivityReport(chi=float(chi), zeta=zeta_val, min_quotient=q_min, satisfied=ok, exact_min=exact)
