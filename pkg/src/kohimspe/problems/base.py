"""Common problem interface and field-data generation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..acquisition import lhs
from ..koh import FieldData


@dataclass(frozen=True)
class Problem:
    """A benchmark: simulator, bias, noise and true calibration value.

    ``simulator(X, U)`` and ``bias_fn(X)`` take coded inputs, rows in
    ``[0, 1]``, and return one response per row.
    """

    name: str
    p: int
    s: int
    simulator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bias_fn: Callable[[np.ndarray], np.ndarray]
    noise_sd: float
    u_star: np.ndarray
    bias_scale: float = 1.0

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u_star, dtype=float))
        if u.shape != (self.s,) or np.any(u < 0) or np.any(u > 1):
            raise ValueError("u_star must be an s-vector in [0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        object.__setattr__(self, "u_star", u)

    @property
    def d(self) -> int:
        return self.p + self.s

    def _x(self, X):
        X = np.asarray(X, dtype=float)
        return X.reshape(-1, self.p)

    def simulate(self, X, U) -> np.ndarray:
        X = self._x(X)
        U = np.asarray(U, dtype=float).reshape(X.shape[0], self.s)
        return np.asarray(self.simulator(X, U), dtype=float)

    def simulate_rows(self, Z) -> np.ndarray:
        """Simulator at stacked ``[x, u]`` rows."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self.simulate(Z[:, :self.p], Z[:, self.p:])

    def bias(self, X) -> np.ndarray:
        return np.asarray(self.bias_fn(self._x(X)), dtype=float)

    def field_mean(self, X) -> np.ndarray:
        X = self._x(X)
        U = np.broadcast_to(self.u_star, (X.shape[0], self.s))
        return self.simulate(X, U) + self.bias_scale * self.bias(X)

    def with_bias_scale(self, alpha: float) -> "Problem":
        return replace(self, bias_scale=float(alpha))


@dataclass(frozen=True)
class FieldSpec:
    """``grid``: ``n`` unique sites on a regular lattice of cell midpoints,
    each observed ``replicates`` times.  ``lhs``: ``n`` sites from a Latin
    hypercube, observed ``replicates`` times."""

    kind: str = "grid"
    n: int = 10
    replicates: int = 2

    def __post_init__(self):
        if self.kind not in ("grid", "lhs"):
            raise ValueError(f"field design kind must be 'grid' or 'lhs', got {self.kind!r}")
        if self.n < 1 or self.replicates < 1:
            raise ValueError("field design needs n >= 1 and replicates >= 1")


def grid_sites(n: int, p: int) -> np.ndarray:
    """``n`` lattice sites in ``[0, 1]^p``; ``n`` must be a perfect p-th power.

    Points are cell midpoints ``(i + 0.5) / m`` so no site sits on the
    boundary.
    """
    m = int(round(n ** (1.0 / p)))
    if m ** p != n:
        raise ValueError(f"{n} is not a perfect {p}-th power")
    axis = (np.arange(m) + 0.5) / m
    mesh = np.meshgrid(*([axis] * p), indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def generate_field(problem: Problem, spec: FieldSpec = FieldSpec(), seed=None) -> FieldData:
    rng = np.random.default_rng(seed)
    if spec.kind == "grid":
        sites = grid_sites(spec.n, problem.p)
    else:
        sites = lhs(spec.n, problem.p, rng)
    X = np.repeat(sites, spec.replicates, axis=0)
    y = problem.field_mean(X) + problem.noise_sd * rng.standard_normal(X.shape[0])
    return FieldData(X, y)
