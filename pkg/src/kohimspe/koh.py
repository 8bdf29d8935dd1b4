"""Modular Kennedy-O'Hagan calibration.

A GP surrogate is fit to simulator runs over ``[x, u]``; the calibration
estimate and a bias GP over ``x`` are then fit jointly by MAP to the field
residuals.  Field prediction conditions the joint MVN of field and
simulator responses on both data sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .gp import (
    JITTER_LADDER,
    NEG_VAR_TOL,
    NUGGET_BOUNDS,
    THETA_BOUNDS,
    BetaPrior,
    FactorizationError,
    GammaPrior,
    GpData,
    GpFit,
    GpPriors,
    _concentrated_lml,
    _lhs_unit,
    map_fit,
    symmetrized_inverse_from_chol,
)
from .kernels import DEFAULT_JITTER, KernelConfig, cross_covariance

U_BOUNDS = (1e-6, 1.0 - 1e-6)


def _unit_rows(A, ncol, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, ncol) if ncol else A.reshape(A.shape[0], 0)
    if A.shape[1] != ncol:
        raise ValueError(f"{name}: expected {ncol} columns, got {A.shape[1]}")
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError(f"{name}: entries must lie in [0, 1]")
    return A


@dataclass(frozen=True)
class FieldData:
    Xf: np.ndarray
    yf: np.ndarray

    def __post_init__(self):
        Xf = np.atleast_2d(np.asarray(self.Xf, dtype=float))
        yf = np.asarray(self.yf, dtype=float).ravel()
        if Xf.shape[0] != yf.shape[0]:
            raise ValueError("field inputs and responses differ in length")
        Xf = _unit_rows(Xf, Xf.shape[1], "Xf")
        object.__setattr__(self, "Xf", Xf)
        object.__setattr__(self, "yf", yf)

    @property
    def n(self) -> int:
        return self.Xf.shape[0]

    @classmethod
    def empty(cls, p: int) -> "FieldData":
        return cls(np.zeros((0, p)), np.zeros(0))


@dataclass(frozen=True)
class SimData:
    Xm: np.ndarray
    Um: np.ndarray
    ym: np.ndarray

    def __post_init__(self):
        Xm = np.atleast_2d(np.asarray(self.Xm, dtype=float))
        Um = np.asarray(self.Um, dtype=float)
        if Um.ndim == 1:
            Um = Um.reshape(Xm.shape[0], -1)
        ym = np.asarray(self.ym, dtype=float).ravel()
        if not (Xm.shape[0] == Um.shape[0] == ym.shape[0]):
            raise ValueError("simulator rows disagree in count")
        _unit_rows(Xm, Xm.shape[1], "Xm")
        _unit_rows(Um, Um.shape[1], "Um")
        object.__setattr__(self, "Xm", Xm)
        object.__setattr__(self, "Um", Um)
        object.__setattr__(self, "ym", ym)

    @property
    def n(self) -> int:
        return self.Xm.shape[0]

    @property
    def design(self) -> np.ndarray:
        return np.hstack([self.Xm, self.Um])

    def append(self, x, u, y) -> "SimData":
        return SimData(
            np.vstack([self.Xm, np.atleast_2d(x)]),
            np.vstack([self.Um, np.atleast_2d(u)]),
            np.append(self.ym, y),
        )


@dataclass(frozen=True)
class CalibEstimate:
    u_hat: np.ndarray
    log_posterior: float

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u_hat, dtype=float))
        if np.any(u < 0) or np.any(u > 1):
            raise ValueError("calibration estimate must lie in [0, 1]")
        object.__setattr__(self, "u_hat", u)


@dataclass(frozen=True)
class KohPriors:
    """Priors for the surrogate, the bias GP and the calibration input."""

    theta_m: GammaPrior = GammaPrior(1.5, 2.0)
    theta_b: GammaPrior = GammaPrior(1.5, 5.0)
    g_b: GammaPrior = GammaPrior(1.5, 7.0)
    u: BetaPrior = BetaPrior(2.0, 2.0)

    @property
    def surrogate(self) -> GpPriors:
        return GpPriors(self.theta_m, 0.0)

    @property
    def bias(self) -> GpPriors:
        return GpPriors(self.theta_b, self.g_b)


def joint_covariance(Xf, u_hat, Xm, Um, cfg_m: KernelConfig, cfg_b: KernelConfig, nu_m, nu_b):
    """Covariance of the stacked (field, simulator) responses.

    The simulator kernel covers every row, field rows sitting at
    ``[x, u_hat]``; the bias kernel (with its nugget) touches only the
    field-field block.
    """
    Z = stacked_design(Xf, u_hat, Xm, Um)
    Sigma = nu_m * cross_covariance(Z, Z, cfg_m, add_diagonal=True)
    nf = Xf.shape[0]
    if nf and nu_b > 0:
        Sigma[:nf, :nf] += nu_b * cross_covariance(Xf, Xf, cfg_b, add_diagonal=True)
    return Sigma


def stacked_design(Xf, u_hat, Xm, Um):
    u_hat = np.atleast_1d(u_hat)
    field_rows = np.hstack([Xf, np.broadcast_to(u_hat, (Xf.shape[0], u_hat.shape[0]))])
    return np.vstack([field_rows, np.hstack([Xm, Um])])


@dataclass(frozen=True)
class KohFit:
    """Fitted calibration state; immutable once built."""

    field: FieldData
    sim: SimData
    u_hat: CalibEstimate
    cfg_m: KernelConfig
    cfg_b: KernelConfig
    nu_m: float
    nu_b: float
    joint_chol: np.ndarray
    joint_alpha: np.ndarray
    surrogate: Optional[GpFit] = field(default=None, compare=False, repr=False)
    bias: Optional[GpFit] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_params(
        cls,
        field: FieldData,
        sim: SimData,
        u_hat,
        cfg_m: KernelConfig,
        cfg_b: KernelConfig,
        nu_m: float,
        nu_b: float,
        surrogate=None,
        bias=None,
        log_posterior=float("nan"),
    ) -> "KohFit":
        if not isinstance(u_hat, CalibEstimate):
            u_hat = CalibEstimate(u_hat, log_posterior)
        p = sim.Xm.shape[1]
        if field.n and field.Xf.shape[1] != p:
            raise ValueError("field and simulator design dimensions differ")
        if cfg_m.dim != p + sim.Um.shape[1] or cfg_b.dim != p:
            raise ValueError("kernel dimensions do not match the data")
        ladder = [cfg_m.jitter] + [j for j in JITTER_LADDER if j > cfg_m.jitter]
        for eps in ladder:
            cfg_try = cfg_m.replace(jitter=eps)
            Sigma = joint_covariance(
                field.Xf, u_hat.u_hat, sim.Xm, sim.Um, cfg_try, cfg_b, nu_m, nu_b
            )
            try:
                L = np.linalg.cholesky(Sigma)
            except np.linalg.LinAlgError:
                continue
            y = np.concatenate([field.yf, sim.ym])
            alpha = linalg.cho_solve((L, True), y)
            return cls(field, sim, u_hat, cfg_try, cfg_b, float(nu_m), float(nu_b), L, alpha,
                       surrogate, bias)
        raise FactorizationError(ladder)

    @property
    def p(self) -> int:
        return self.sim.Xm.shape[1]

    @property
    def s(self) -> int:
        return self.sim.Um.shape[1]

    @property
    def d(self) -> int:
        return self.p + self.s

    @property
    def n_field(self) -> int:
        return self.field.n

    @cached_property
    def design(self) -> np.ndarray:
        """Stacked joint design: field rows at ``[x, u_hat]`` then simulator rows."""
        return stacked_design(self.field.Xf, self.u_hat.u_hat, self.sim.Xm, self.sim.Um)

    @cached_property
    def sigma_inverse(self) -> np.ndarray:
        return symmetrized_inverse_from_chol(self.joint_chol)

    def covariance(self) -> np.ndarray:
        return joint_covariance(
            self.field.Xf, self.u_hat.u_hat, self.sim.Xm, self.sim.Um,
            self.cfg_m, self.cfg_b, self.nu_m, self.nu_b,
        )

    def cross_vector(self, Xstar) -> np.ndarray:
        """Rows of ``nu_m k + nu_b k^B`` between predictive sites and the data."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        if Xstar.shape[1] != self.p:
            raise ValueError(f"expected {self.p} design columns, got {Xstar.shape[1]}")
        u = np.broadcast_to(self.u_hat.u_hat, (Xstar.shape[0], self.s))
        c = self.nu_m * cross_covariance(np.hstack([Xstar, u]), self.design, self.cfg_m)
        nf = self.n_field
        if nf and self.nu_b > 0:
            c[:, :nf] += self.nu_b * cross_covariance(Xstar, self.field.Xf, self.cfg_b)
        return c

    def predict_field(self, Xstar):
        return predict_field(self, Xstar)

    def with_sim_row(self, x, u, y=0.0) -> "KohFit":
        """Same hyperparameters and u_hat, one more simulator run."""
        return KohFit.from_params(
            self.field, self.sim.append(x, u, y), self.u_hat,
            self.cfg_m, self.cfg_b, self.nu_m, self.nu_b,
        )


def predict_field(fit: KohFit, Xstar):
    """Mean and variance of the latent field response at ``Xstar`` (m x p)."""
    c = fit.cross_vector(Xstar)
    mean = c @ fit.joint_alpha
    V = linalg.solve_triangular(fit.joint_chol, c.T, lower=True)
    prior = fit.nu_m + fit.nu_b
    var = prior - np.sum(V * V, axis=0)
    if np.any(var < -NEG_VAR_TOL * prior):
        raise FloatingPointError(f"negative field variance {var.min():.3e}")
    return mean, np.maximum(var, 0.0)


def fit_surrogate(sim: SimData, priors: GpPriors, starts=5, seed=None, warm_start=None,
                  jitter=DEFAULT_JITTER) -> GpFit:
    d = sim.Xm.shape[1] + sim.Um.shape[1]
    if sim.n < d + 2:
        raise ValueError(f"need at least {d + 2} simulator runs, got {sim.n}")
    if not priors.fixed_g or float(priors.g) != 0.0:
        priors = GpPriors(priors.theta, 0.0)
    return map_fit(GpData(sim.design, sim.ym), priors, starts=starts, seed=seed,
                   warm_start=warm_start, jitter=jitter)


def _residual_factory(surrogate: GpFit, Xf, p):
    cfg = surrogate.cfg
    Zs = surrogate.data.X
    theta = cfg.lengthscales
    Kx = np.exp(-np.einsum(
        "ijl,l->ij", (Xf[:, None, :] - Zs[None, :, :p]) ** 2, 1.0 / theta[:p]))
    Us = Zs[:, p:]
    inv_tu = 1.0 / theta[p:]
    alpha = surrogate.alpha

    def surrogate_mean(u):
        ku = np.exp(-((u[None, :] - Us) ** 2) @ inv_tu)
        return Kx @ (ku * alpha)

    return surrogate_mean


def estimate_u(
    surrogate: GpFit,
    field: FieldData,
    priors: GpPriors,
    u_prior: BetaPrior = BetaPrior(2.0, 2.0),
    starts: int = 5,
    seed=None,
    warm_start=None,
    jitter: float = DEFAULT_JITTER,
    maxiter: int = 400,
):
    """Joint MAP of (u, bias lengthscales, bias nugget) on field residuals.

    ``warm_start`` is an optional ``(u, KernelConfig)`` pair from the
    previous round; the prior mode ``u = 0.5`` is always one of the starts.

    Returns ``(CalibEstimate, bias GpFit)``, the bias GP trained on the
    residuals at the returned estimate.
    """
    p = field.Xf.shape[1]
    s = surrogate.data.d - p
    if s < 1:
        raise ValueError("surrogate has no calibration columns")
    Xf, yf = field.Xf, field.yf
    nf = Xf.shape[0]
    mean_at = _residual_factory(surrogate, Xf, p)
    diff2 = (Xf[:, None, :] - Xf[None, :, :]) ** 2
    tps = priors.theta_priors(p)
    gprior = priors.g
    idx = np.diag_indices(nf)

    def unpack(z):
        return z[:s], np.exp(z[s:s + p]), float(np.exp(z[s + p]))

    def objective(z):
        u, theta, g = unpack(z)
        r = yf - mean_at(u)
        K = np.exp(-np.einsum("ijl,l->ij", diff2, 1.0 / theta))
        K[idx] += g + jitter
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return -np.inf
        val = _concentrated_lml(L, r)
        val += float(np.sum(u_prior.logpdf(u)))
        val += sum(float(pr.logpdf(t)) for pr, t in zip(tps, theta))
        val += float(gprior.logpdf(g))
        return val if np.isfinite(val) else -np.inf

    def neg(z):
        v = objective(z)
        return -v if np.isfinite(v) else 1e300

    lo = np.array([U_BOUNDS[0]] * s + [math.log(THETA_BOUNDS[0])] * p + [math.log(NUGGET_BOUNDS[0])])
    hi = np.array([U_BOUNDS[1]] * s + [math.log(THETA_BOUNDS[1])] * p + [math.log(NUGGET_BOUNDS[1])])
    hyp_centre = [math.log(pr.mean) for pr in tps] + [math.log(gprior.mean)]
    centre = np.clip(np.array([0.5] * s + hyp_centre), lo, hi)

    inits = []
    if warm_start is not None:
        u0, cfg0 = warm_start
        z = list(np.atleast_1d(u0)) + list(np.log(cfg0.lengthscales))
        z.append(math.log(max(cfg0.nugget, NUGGET_BOUNDS[0])))
        inits.append(np.clip(np.array(z), lo, hi))
    inits.append(centre)
    rng = np.random.default_rng(seed)
    n_rand = max(starts - len(inits), 0)
    if n_rand:
        unit = _lhs_unit(n_rand, s + p + 1, rng)
        z = np.empty_like(unit)
        z[:, :s] = lo[:s] + unit[:, :s] * (hi[:s] - lo[:s])
        z[:, s:] = centre[s:] + (unit[:, s:] - 0.5) * 4.0
        inits.extend(np.clip(z, lo, hi))
    inits = inits[:max(starts, 1)]

    bounds = list(zip(lo, hi))
    best_z, best_val = None, -np.inf
    for z0 in inits:
        f0 = objective(z0)
        res = optimize.minimize(neg, z0, method="Nelder-Mead", bounds=bounds,
                                options={"xatol": 1e-5, "fatol": 1e-8,
                                         "maxiter": maxiter * len(z0)})
        cand, val = res.x, -res.fun
        if not val >= f0:
            cand, val = z0, f0
        if np.isfinite(val) and val > best_val:
            best_z, best_val = cand, val
    if best_z is None:
        raise RuntimeError("calibration objective non-finite at every start")
    u, theta, g = unpack(best_z)
    bias = GpFit.from_config(GpData(Xf, yf - mean_at(u)), KernelConfig(theta, g, jitter),
                             log_post=best_val)
    return CalibEstimate(u.copy(), best_val), bias


@dataclass(frozen=True)
class KohSettings:
    starts: int = 5
    warm_start: bool = True
    jitter: float = DEFAULT_JITTER


def fit_koh(field: FieldData, sim: SimData, priors: KohPriors = KohPriors(),
            settings: KohSettings = KohSettings(), seed=None,
            previous: Optional[KohFit] = None) -> KohFit:
    """Surrogate fit, then calibration + bias fit, then the joint factorization."""
    rng = np.random.default_rng(seed)
    s1, s2 = rng.integers(0, 2**63, size=2)
    warm_m = warm_ub = None
    if previous is not None and settings.warm_start:
        warm_m = previous.cfg_m.replace(jitter=settings.jitter)
        warm_ub = (previous.u_hat.u_hat, previous.cfg_b)
    surrogate = fit_surrogate(sim, priors.surrogate, settings.starts, s1, warm_m, settings.jitter)
    est, bias = estimate_u(surrogate, field, priors.bias, priors.u, settings.starts, s2,
                           warm_ub, settings.jitter)
    return KohFit.from_params(
        field, sim, est, surrogate.cfg, bias.cfg, surrogate.scale, bias.scale,
        surrogate=surrogate, bias=bias,
    )
