"""Mean-field functionals on the empirical law of a scenario ensemble.

L2(P) is the empirical measure over scenarios (axis 0).  The Frechet
gradient of a functional F at X is returned as per-sample weights w with
the pairing <grad F(X), Z> = mean(w * Z).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class EmptyEnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class MeanFieldOperator:
    """One of three kinds:

    * ``expectation``: F(X) = E[X]
    * ``smoothed_moment``: F(X) = E[phi(X)], phi' supplied explicitly
    * ``scaled``: F(X) = c E[X]
    """

    kind: str = "expectation"
    phi: Callable[[np.ndarray], np.ndarray] | None = None
    dphi: Callable[[np.ndarray], np.ndarray] | None = None
    c: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("expectation", "smoothed_moment", "scaled"):
            raise ValueError(f"unknown mean-field operator kind {self.kind!r}")
        if self.kind == "smoothed_moment" and (self.phi is None or self.dphi is None):
            raise ValueError("smoothed_moment needs both phi and dphi")

    @property
    def is_linear(self) -> bool:
        return self.kind != "smoothed_moment"

    def __call__(self, samples) -> np.ndarray:
        return apply_meanfield(self, samples)

    def gradient(self, samples) -> np.ndarray:
        return frechet_gradient(self, samples)


def expectation() -> MeanFieldOperator:
    return MeanFieldOperator("expectation", label="expectation")


def scaled(c: float) -> MeanFieldOperator:
    return MeanFieldOperator("scaled", c=float(c), label=f"scaled({c})")


def smoothed_moment(phi, dphi, label: str = "custom") -> MeanFieldOperator:
    return MeanFieldOperator("smoothed_moment", phi=phi, dphi=dphi, label=label)


def square_moment() -> MeanFieldOperator:
    return smoothed_moment(np.square, lambda x: 2.0 * x, label="square")


def exp_scale_moment(a: float) -> MeanFieldOperator:
    a = float(a)
    return smoothed_moment(lambda x: np.exp(a * x), lambda x: a * np.exp(a * x), label=f"exp_scale({a})")


def _check(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 0 or x.shape[0] == 0:
        raise EmptyEnsembleError("mean-field operators need a nonempty ensemble")
    return x


def apply_meanfield(op: MeanFieldOperator, samples) -> np.ndarray:
    """Functional value; reduces the scenario axis (axis 0) node-wise."""
    x = _check(samples)
    if op.kind == "expectation":
        return np.mean(x, axis=0)
    if op.kind == "scaled":
        return op.c * np.mean(x, axis=0)
    return np.mean(op.phi(x), axis=0)


def frechet_gradient(op: MeanFieldOperator, samples) -> np.ndarray:
    x = _check(samples)
    if op.kind == "expectation":
        return np.ones_like(x)
    if op.kind == "scaled":
        return np.full_like(x, op.c)
    return np.asarray(op.dphi(x), dtype=float)


def pairing(weights, direction) -> np.ndarray:
    """Empirical L2(P) pairing mean(w * Z) over the scenario axis."""
    return np.mean(np.asarray(weights) * np.asarray(direction), axis=0)


def operator_from_config(spec: dict | None) -> MeanFieldOperator:
    """``{type = "expectation"}``, ``{type = "scaled", c = ...}`` or
    ``{type = "smoothed_moment", phi = "square" | "exp_scale", a = ...}``."""
    if spec is None:
        return expectation()
    kind = spec.get("type", "expectation")
    if kind == "expectation":
        return expectation()
    if kind == "scaled":
        return scaled(spec.get("c", 1.0))
    if kind == "smoothed_moment":
        phi = spec.get("phi", "square")
        if phi == "square":
            return square_moment()
        if phi == "exp_scale":
            return exp_scale_moment(spec.get("a", 1.0))
        raise ValueError(f"unknown phi {phi!r} (expected 'square' or 'exp_scale')")
    raise ValueError(f"unknown mean-field operator type {kind!r}")


def operator_to_config(op: MeanFieldOperator) -> dict:
    if op.kind == "expectation":
        return {"type": "expectation"}
    if op.kind == "scaled":
        return {"type": "scaled", "c": op.c}
    if op.label == "square":
        return {"type": "smoothed_moment", "phi": "square"}
    if op.label.startswith("exp_scale("):
        return {"type": "smoothed_moment", "phi": "exp_scale", "a": float(op.label[10:-1])}
    raise ValueError("custom smoothed moments cannot be serialised")
