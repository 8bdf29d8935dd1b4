"""Zero-mean GP regression with a profiled scale and MAP hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg, optimize, special
from scipy.stats import qmc

from .kernels import DEFAULT_JITTER, KernelConfig, cross_covariance

JITTER_LADDER = (1e-8, 1e-6, 1e-4)
SCALE_FLOOR = 1e-12
NEG_VAR_TOL = 1e-10

THETA_BOUNDS = (1e-3, 20.0)
NUGGET_BOUNDS = (1e-6, 100.0)


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed at every jitter level tried."""

    def __init__(self, jitters):
        self.jitters = tuple(jitters)
        super().__init__(f"covariance not positive definite; jitter tried: {self.jitters}")


@dataclass(frozen=True)
class GammaPrior:
    """Gamma prior in shape-rate form, density ~ t^(shape-1) exp(-rate t)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @classmethod
    def from_shape_scale(cls, shape, scale):
        return cls(shape, 1.0 / scale)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        return (
            self.shape * math.log(self.rate)
            - special.gammaln(self.shape)
            + (self.shape - 1.0) * np.log(t)
            - self.rate * t
        )


@dataclass(frozen=True)
class BetaPrior:
    a: float = 2.0
    b: float = 2.0

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return (
                (self.a - 1.0) * np.log(u)
                + (self.b - 1.0) * np.log1p(-u)
                - special.betaln(self.a, self.b)
            )


@dataclass(frozen=True)
class GpPriors:
    """Priors for one GP.

    ``theta`` is a single prior shared by every lengthscale or one per
    coordinate.  ``g`` is either a prior (nugget estimated) or a float
    (nugget held fixed at that value).
    """

    theta: Union[GammaPrior, Sequence[GammaPrior]]
    g: Union[GammaPrior, float] = 0.0

    def theta_priors(self, d: int):
        if isinstance(self.theta, GammaPrior):
            return [self.theta] * d
        if len(self.theta) != d:
            raise ValueError(f"need {d} lengthscale priors, got {len(self.theta)}")
        return list(self.theta)

    @property
    def fixed_g(self) -> bool:
        return not isinstance(self.g, GammaPrior)

    def log_prior(self, theta, g) -> float:
        lp = sum(float(p.logpdf(t)) for p, t in zip(self.theta_priors(len(theta)), theta))
        if not self.fixed_g:
            lp += float(self.g.logpdf(g))
        return lp


@dataclass(frozen=True)
class GpData:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y row counts differ")
        if X.shape[0] < 2:
            raise ValueError("need at least two training rows")
        if np.any(X < 0) or np.any(X > 1):
            raise ValueError("inputs must be coded to [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def cholesky_with_ladder(K0: np.ndarray, base_diag: float, jitter: float = DEFAULT_JITTER):
    """Cholesky of ``K0 + (base_diag + eps) I`` escalating eps on failure.

    Returns ``(L, eps)`` with ``L`` lower triangular.
    """
    ladder = [jitter] + [j for j in JITTER_LADDER if j > jitter]
    n = K0.shape[0]
    idx = np.diag_indices(n)
    for eps in ladder:
        K = K0.copy()
        K[idx] += base_diag + eps
        try:
            return np.linalg.cholesky(K), eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(ladder)


def symmetrized_inverse_from_chol(L: np.ndarray) -> np.ndarray:
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    Kinv = Linv.T @ Linv
    return 0.5 * (Kinv + Kinv.T)


@dataclass(frozen=True)
class GpFit:
    data: GpData
    cfg: KernelConfig
    scale: float
    chol: np.ndarray
    alpha: np.ndarray
    log_post: float = float("nan")
    start_objectives: tuple = field(default=(), compare=False)

    @classmethod
    def from_config(cls, data: GpData, cfg: KernelConfig, log_post=float("nan")):
        K0 = cross_covariance(data.X, data.X, cfg)
        L, eps = cholesky_with_ladder(K0, cfg.nugget, cfg.jitter)
        if eps != cfg.jitter:
            cfg = cfg.replace(jitter=eps)
        w = linalg.solve_triangular(L, data.y, lower=True)
        alpha = linalg.solve_triangular(L.T, w, lower=False)
        scale = max(float(w @ w) / data.n, SCALE_FLOOR)
        return cls(data, cfg, scale, L, alpha, log_post)

    @property
    def K_inverse(self) -> np.ndarray:
        return symmetrized_inverse_from_chol(self.chol)

    def predict(self, Xstar, include_nugget: bool = False):
        return predict(self, Xstar, include_nugget=include_nugget)


def _concentrated_lml(L: np.ndarray, y: np.ndarray) -> float:
    n = y.shape[0]
    w = linalg.solve_triangular(L, y, lower=True)
    nu = max(float(w @ w) / n, SCALE_FLOOR)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * n * math.log(2.0 * math.pi * nu) - 0.5 * logdet - 0.5 * n


def log_marginal_likelihood(data: GpData, cfg: KernelConfig) -> float:
    """Gaussian log density of y under N(0, nu K) with nu profiled out.

    nu_hat = y' K^-1 y / n, floored at 1e-12 so an all-zero response
    stays finite.
    """
    K0 = cross_covariance(data.X, data.X, cfg)
    L, _ = cholesky_with_ladder(K0, cfg.nugget, cfg.jitter)
    return _concentrated_lml(L, data.y)


def _objective_factory(data: GpData, priors: GpPriors, jitter: float):
    d = data.d
    X = data.X
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    tps = priors.theta_priors(d)
    fixed_g = priors.fixed_g

    def unpack(z):
        theta = np.exp(z[:d])
        g = float(priors.g) if fixed_g else float(np.exp(z[d]))
        return theta, g

    def objective(z):
        theta, g = unpack(z)
        K0 = np.exp(-np.einsum("ijl,l->ij", diff2, 1.0 / theta))
        try:
            L, _ = cholesky_with_ladder(K0, g, jitter)
        except FactorizationError:
            return -np.inf
        lp = sum(float(p.logpdf(t)) for p, t in zip(tps, theta))
        if not fixed_g:
            lp += float(priors.g.logpdf(g))
        val = _concentrated_lml(L, data.y) + lp
        return val if np.isfinite(val) else -np.inf

    return objective, unpack


def _log_bounds(d, fixed_g):
    lo = [math.log(THETA_BOUNDS[0])] * d
    hi = [math.log(THETA_BOUNDS[1])] * d
    if not fixed_g:
        lo.append(math.log(NUGGET_BOUNDS[0]))
        hi.append(math.log(NUGGET_BOUNDS[1]))
    return np.array(lo), np.array(hi)


def _lhs_unit(n, d, rng):
    return qmc.LatinHypercube(d, seed=rng).random(n)


def map_fit(
    data: GpData,
    priors: GpPriors,
    starts: int = 5,
    seed=None,
    warm_start: Optional[KernelConfig] = None,
    jitter: float = DEFAULT_JITTER,
    maxiter: int = 400,
) -> GpFit:
    """MAP lengthscales (and nugget unless fixed) by multi-start Nelder-Mead.

    The search runs over log-parameters.  Start points are the prior mean
    (or ``warm_start`` when given) plus LHS-jittered multiples of the prior
    mean, one to two e-folds either way.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    rng = np.random.default_rng(seed)
    d = data.d
    fixed_g = priors.fixed_g
    objective, unpack = _objective_factory(data, priors, jitter)
    lo, hi = _log_bounds(d, fixed_g)

    centre = [math.log(p.mean) for p in priors.theta_priors(d)]
    if not fixed_g:
        centre.append(math.log(priors.g.mean))
    centre = np.clip(np.array(centre), lo, hi)

    inits = []
    if warm_start is not None:
        z = list(np.log(warm_start.lengthscales))
        if not fixed_g:
            z.append(math.log(max(warm_start.nugget, NUGGET_BOUNDS[0])))
        inits.append(np.clip(np.array(z), lo, hi))
    inits.append(centre)
    n_rand = max(starts - len(inits), 0)
    if n_rand:
        offsets = (_lhs_unit(n_rand, len(centre), rng) - 0.5) * 4.0
        inits.extend(np.clip(centre + offsets, lo, hi))
    inits = inits[:starts]

    def neg(z):
        v = objective(z)
        return -v if np.isfinite(v) else 1e300

    bounds = list(zip(lo, hi))
    best_z, best_val = None, -np.inf
    start_vals = []
    for z0 in inits:
        f0 = objective(z0)
        start_vals.append(f0)
        res = optimize.minimize(
            neg,
            z0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": maxiter * len(z0)},
        )
        cand, val = res.x, -res.fun
        if not val >= f0:
            cand, val = z0, f0
        if np.isfinite(val) and val > best_val:
            best_z, best_val = cand, val
    if best_z is None:
        raise RuntimeError("no start produced a finite MAP objective")
    theta, g = unpack(best_z)
    cfg = KernelConfig(theta, nugget=g, jitter=jitter)
    fit = GpFit.from_config(data, cfg, log_post=best_val)
    return GpFit(fit.data, fit.cfg, fit.scale, fit.chol, fit.alpha, best_val, tuple(start_vals))


def predict(fit: GpFit, Xstar, include_nugget: bool = False):
    """Kriging mean and variance at the rows of ``Xstar``.

    Variances are those of the latent process unless ``include_nugget``.
    """
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != fit.data.d:
        raise ValueError(f"expected {fit.data.d} columns, got {Xstar.shape[1]}")
    kx = cross_covariance(Xstar, fit.data.X, fit.cfg)
    mean = kx @ fit.alpha
    V = linalg.solve_triangular(fit.chol, kx.T, lower=True)
    prior = 1.0 + (fit.cfg.nugget if include_nugget else 0.0)
    s = prior - np.sum(V * V, axis=0)
    if np.any(s < -NEG_VAR_TOL):
        raise FloatingPointError(f"negative predictive variance {s.min():.3e}")
    return mean, fit.scale * np.maximum(s, 0.0)
