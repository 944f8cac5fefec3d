"""Named nodal fields (obstacles, boundary data) with closed-form divergences where known."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["NamedField", "make_field"]


@dataclass(frozen=True)
class NamedField:
    kind: str
    params: dict
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    # div(gamma |D psi|^{p-2} D psi) for constant p and gamma, or None
    divergence: Callable[[np.ndarray, float, float], np.ndarray] | None = field(default=None, repr=False)

    def __call__(self, x):
        return self.func(np.atleast_2d(np.asarray(x, dtype=float)))


def make_field(kind="zero", **params):
    """Registry: zero, constant, affine, paraboloid (c0 - k|x - c|^2)."""
    if kind == "zero":
        return NamedField(kind, {}, lambda x: np.zeros(x.shape[0]), lambda x, p, g: np.zeros(x.shape[0]))
    if kind == "constant":
        c = float(params.get("value", 0.0))
        return NamedField(kind, {"value": c}, lambda x: np.full(x.shape[0], c), lambda x, p, g: np.zeros(x.shape[0]))
    if kind == "affine":
        c0 = float(params.get("c0", 0.0))
        b = np.asarray(params.get("slope", [0.0, 0.0]), dtype=float)
        return NamedField(
            kind, {"c0": c0, "slope": b.tolist()},
            lambda x: c0 + x @ b[: x.shape[1]],
            lambda x, p, g: np.zeros(x.shape[0]),
        )
    if kind == "paraboloid":
        c0 = float(params.get("c0", 0.0))
        k = float(params.get("k", 1.0))
        c = np.asarray(params.get("center", [0.5, 0.5]), dtype=float)

        def func(x):
            return c0 - k * np.sum((x - c[: x.shape[1]]) ** 2, axis=1)

        def div(x, p, g):
            n = x.shape[1]
            s = np.linalg.norm(x - c[:n], axis=1)
            with np.errstate(divide="ignore"):
                sp = np.where(s > 0, np.power(np.where(s > 0, s, 1.0), p - 2.0), 0.0 if p > 2 else np.inf)
            if p == 2.0:
                sp = np.ones_like(s)
            return -2.0 * k * g * (2.0 * abs(k)) ** (p - 2.0) * (n + p - 2.0) * sp

        return NamedField(kind, {"c0": c0, "k": k, "center": c.tolist()}, func, div)
    raise ValueError(f"unknown field kind {kind!r}")
