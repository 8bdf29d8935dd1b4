"""Closed-form benchmark problems: a 1-d sinusoid and the 2+2 Goh/Bastos model."""

from __future__ import annotations

import math

import numpy as np

from .base import Problem


def sinusoid(x, u):
    """``sin(10 x u)``; u is used on its coded scale."""
    return np.sin(10.0 * np.asarray(x, dtype=float) * np.asarray(u, dtype=float))


def sinusoid_bias(x):
    x = np.asarray(x, dtype=float)
    return 1.0 - x / 3.0 - 2.0 * x ** 2 / 3.0


def make_sinusoid(bias_scale: float = 1.0, noise_sd: float = 0.1) -> Problem:
    return Problem(
        name="sinusoid", p=1, s=1,
        simulator=lambda X, U: sinusoid(X[:, 0], U[:, 0]),
        bias_fn=lambda X: sinusoid_bias(X[:, 0]),
        noise_sd=noise_sd, u_star=np.array([math.pi / 5.0]), bias_scale=bias_scale,
    )


def goh_bastos(x, u):
    """Rational test function; ``x`` is (..., 2) with ``x_2 > 0``, ``u`` is (..., 2)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    if np.any(x2 <= 0):
        raise ValueError("goh_bastos is singular at x2 = 0")
    u1, u2 = u[..., 0], u[..., 1]
    with np.errstate(over="ignore"):
        damp = 1.0 - np.exp(-0.5 / x2)
    num = 1000.0 * u1 * x1 ** 3 + 1900.0 * x1 ** 2 + 2092.0 * x1 + 60.0
    den = 100.0 * u2 * x1 ** 3 + 500.0 * x1 ** 2 + 4.0 * x1 + 20.0
    return damp * num / den


def goh_bastos_bias(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return (10.0 * x1 ** 2 + 4.0 * x2 ** 2) / (50.0 * x1 * x2 + 10.0)


def make_goh_bastos(bias_scale: float = 1.0, noise_sd: float = 0.25) -> Problem:
    return Problem(
        name="goh-bastos", p=2, s=2,
        simulator=goh_bastos, bias_fn=goh_bastos_bias,
        noise_sd=noise_sd, u_star=np.array([0.2, 0.1]), bias_scale=bias_scale,
    )
