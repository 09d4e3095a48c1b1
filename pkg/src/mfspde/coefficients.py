"""Model coefficients b, sigma, theta, f, g and their partial derivatives.

Every coefficient is a vectorised callable of ``(t, x, y, ybar, u, ubar)``
(the jump coefficient takes a trailing mark argument ``e``).  Arguments are
numpy arrays that broadcast against each other; the solvers pass ``y`` and
``u`` with shape (scenario, node), ``ybar``/``ubar``/``x`` with shape (node,),
and for jump coefficients append a trailing mark axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ARGS = ("y", "ybar", "u", "ubar")


def _zero(*args):
    return 0.0


class CoefficientError(ArithmeticError):
    """A coefficient produced a non-finite value."""


@dataclass(frozen=True)
class Coefficient:
    """A coefficient with its partials in (y, ybar, u, ubar).

    ``relative`` marks a multiplicative coefficient ``relative(t, x[, e]) * y``;
    the forward solver then uses the positivity-preserving update.
    """

    value: Callable = _zero
    dy: Callable = _zero
    dybar: Callable = _zero
    du: Callable = _zero
    dubar: Callable = _zero
    relative: Callable | None = None
    name: str = ""

    @classmethod
    def multiplicative(cls, rel: Callable, name: str = "") -> Coefficient:
        return cls(
            value=lambda t, x, y, yb, u, ub, *e: rel(t, x, *e) * y,
            dy=lambda t, x, y, yb, u, ub, *e: rel(t, x, *e),
            relative=rel,
            name=name,
        )

    def partial(self, wrt: str) -> Callable:
        return {"y": self.dy, "ybar": self.dybar, "u": self.du, "ubar": self.dubar}[wrt]


@dataclass(frozen=True)
class TerminalCoefficient:
    """Bequest g(x, y, ybar) with its partials."""

    value: Callable = _zero
    dy: Callable = _zero
    dybar: Callable = _zero


@dataclass(frozen=True)
class CoefficientSet:
    b: Coefficient = field(default_factory=Coefficient)
    sigma: Coefficient = field(default_factory=Coefficient)
    theta: Coefficient = field(default_factory=Coefficient)
    f: Coefficient = field(default_factory=Coefficient)
    g: TerminalCoefficient = field(default_factory=TerminalCoefficient)
    name: str = "custom"

    @property
    def multiplicative_noise(self) -> bool:
        """True when sigma and theta are both multiplicative (or absent)."""
        sig_ok = self.sigma.relative is not None or self.sigma.value is _zero
        th_ok = self.theta.relative is not None or self.theta.value is _zero
        return sig_ok and th_ok and (self.sigma.relative is not None or self.theta.relative is not None)


def evaluate(fn: Callable, shape, *args) -> np.ndarray:
    out = np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)
    return out


def finite_or_raise(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise CoefficientError(f"non-finite value in {what}")
    return arr


# ---------------------------------------------------------------- presets


def _as_tx(fn_or_value) -> Callable:
    if callable(fn_or_value):
        return fn_or_value
    v = float(fn_or_value)
    return lambda t, x, *rest: np.full(np.shape(x), v)


def heat_coefficients() -> CoefficientSet:
    return CoefficientSet(name="heat")


def harvesting_coefficients(b0, sigma0, theta0, alpha) -> CoefficientSet:
    """Population model with mean-field growth b0(t,x) E[Y], harvest y*u,
    multiplicative noise, log-utility of the harvest and bequest alpha(x) y.

    ``theta0(t, x, e)`` is the relative jump size for mark e.
    """
    b0, sigma0, alpha = _as_tx(b0), _as_tx(sigma0), _as_tx(alpha)
    if not callable(theta0):
        scale = float(theta0)
        theta0 = lambda t, x, e: scale * e * np.ones_like(x)  # noqa: E731

    b = Coefficient(
        value=lambda t, x, y, yb, u, ub: b0(t, x) * yb - y * u,
        dy=lambda t, x, y, yb, u, ub: -u,
        dybar=lambda t, x, y, yb, u, ub: b0(t, x),
        du=lambda t, x, y, yb, u, ub: -y,
        name="b",
    )
    f = Coefficient(
        value=lambda t, x, y, yb, u, ub: np.log(y * u),
        dy=lambda t, x, y, yb, u, ub: 1.0 / y,
        du=lambda t, x, y, yb, u, ub: 1.0 / u,
        name="f",
    )
    g = TerminalCoefficient(
        value=lambda x, y, yb: alpha(0.0, x) * y,
        dy=lambda x, y, yb: alpha(0.0, x) * np.ones_like(y),
    )
    return CoefficientSet(
        b=b,
        sigma=Coefficient.multiplicative(sigma0, name="sigma"),
        theta=Coefficient.multiplicative(theta0, name="theta"),
        f=f,
        g=g,
        name="harvesting",
    )


def linear_test_coefficients(
    a_y=0.0, a_ybar=0.0, a_u=0.0, b_0=0.0, s_y=0.0, s_ybar=0.0, s_u=0.0, j_y=0.0, j_u=0.0,
    f_u=0.0, f_yy=0.0, f_y=0.0, g_y=0.0, g_ybar=0.0,
) -> CoefficientSet:
    """Dynamics affine in (y, ybar, u) with constant parameters.

    Running profit is f_y y + f_u u - f_yy y^2 / 2, bequest g_y y + g_ybar ybar,
    jump coefficient (j_y y + j_u u) * e.
    """

    def cst(v):
        return lambda *args: v

    b = Coefficient(
        value=lambda t, x, y, yb, u, ub: a_y * y + a_ybar * yb + a_u * u + b_0,
        dy=cst(a_y), dybar=cst(a_ybar), du=cst(a_u), name="b",
    )
    sigma = Coefficient(
        value=lambda t, x, y, yb, u, ub: s_y * y + s_ybar * yb + s_u * u,
        dy=cst(s_y), dybar=cst(s_ybar), du=cst(s_u), name="sigma",
    )
    theta = Coefficient(
        value=lambda t, x, y, yb, u, ub, e: (j_y * y + j_u * u) * e,
        dy=lambda t, x, y, yb, u, ub, e: j_y * e,
        du=lambda t, x, y, yb, u, ub, e: j_u * e,
        name="theta",
    )
    f = Coefficient(
        value=lambda t, x, y, yb, u, ub: f_y * y + f_u * u - 0.5 * f_yy * y * y,
        dy=lambda t, x, y, yb, u, ub: f_y - f_yy * y,
        du=cst(f_u),
        name="f",
    )
    g = TerminalCoefficient(
        value=lambda x, y, yb: g_y * y + g_ybar * yb,
        dy=lambda x, y, yb: g_y * np.ones_like(y),
        dybar=lambda x, y, yb: g_ybar * np.ones_like(y),
    )
    return CoefficientSet(b=b, sigma=sigma, theta=theta, f=f, g=g, name="linear_test")


# ---------------------------------------------------------------- diagnostics


def check_partials(coeff: Coefficient, rng: np.random.Generator, n_probes: int = 32,
                   eps: float = 1e-6, marks: np.ndarray | None = None, box=(0.1, 2.0)) -> float:
    """Largest relative mismatch between supplied partials and central
    finite differences at random probe points."""
    worst = 0.0
    lo, hi = box
    for _ in range(n_probes):
        t = rng.uniform(0.0, 1.0)
        x = rng.uniform(0.0, 1.0, size=1)
        vals = {a: rng.uniform(lo, hi, size=1) for a in ARGS}
        extra = () if marks is None else (np.asarray(marks, dtype=float)[None, :],)
        if extra:
            vals = {a: v[:, None] for a, v in vals.items()}
            x = x[:, None]
        for wrt in ARGS:
            up = dict(vals)
            dn = dict(vals)
            up[wrt] = vals[wrt] + eps
            dn[wrt] = vals[wrt] - eps
            f_up = np.asarray(coeff.value(t, x, *[up[a] for a in ARGS], *extra), dtype=float)
            f_dn = np.asarray(coeff.value(t, x, *[dn[a] for a in ARGS], *extra), dtype=float)
            fd = (f_up - f_dn) / (2 * eps)
            given = np.broadcast_to(
                np.asarray(coeff.partial(wrt)(t, x, *[vals[a] for a in ARGS], *extra), dtype=float), fd.shape
            )
            scale = np.maximum(1.0, np.abs(fd))
            worst = max(worst, float(np.max(np.abs(fd - given) / scale)))
    return worst


def lipschitz_probe(coeff: Coefficient, rng: np.random.Generator, n_probes: int = 256, box=(0.1, 2.0)) -> float:
    """Largest observed |c(y1,yb1) - c(y2,yb2)| / (|y1-y2| + |yb1-yb2|)
    with (u, ubar) held fixed; compare against a configured C."""
    lo, hi = box
    worst = 0.0
    for _ in range(n_probes):
        t = rng.uniform()
        x = rng.uniform(size=1)
        u, ub = rng.uniform(lo, hi, size=2)
        y1, yb1, y2, yb2 = rng.uniform(lo, hi, size=4)
        c1 = coeff.value(t, x, y1, yb1, u, ub)
        c2 = coeff.value(t, x, y2, yb2, u, ub)
        d = abs(y1 - y2) + abs(yb1 - yb2)
        if d > 0:
            worst = max(worst, float(np.max(np.abs(np.asarray(c1) - np.asarray(c2)))) / d)
    return worst
