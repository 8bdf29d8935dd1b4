"""Closed-form integrated variance criteria for the Gaussian kernel.

Integration is over the design inputs under the uniform measure on the
unit hypercube.  Every W entry factorises over coordinates into 1-d
integrals of products of Gaussian bumps, which reduce to erf
differences.

Notation used throughout: the joint design has ``n`` existing rows (field
rows at ``[x_F, u_hat]`` first, then simulator rows) and a candidate
simulator run ``[x~, u~]`` appended as row ``n``.  Augmenting the joint
covariance by that row is handled with a rank-one block inverse, so only
the inner inverse is ever formed, once per fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gp import GpFit
from .kernels import erf
from .koh import KohFit

SQRT_PI = math.sqrt(math.pi)
PROXIMITY = 1e-6
B_FLOOR = 1e-12


def rejection_floor(scale: float, jitter: float) -> float:
    """Smallest admissible Schur complement ``b``.

    An exact duplicate of a design row leaves ``b ~ 2 * jitter * scale``
    rather than zero, so the floor tracks the jitter.
    """
    return scale * (B_FLOOR + 4.0 * jitter)


class CandidateRejected(ValueError):
    """Candidate (numerically) duplicates an existing design row."""


class ProximityError(ValueError):
    """Candidate too close to an existing row for a stable gradient."""


# --------------------------------------------------------------------------
# 1-d integrals and their derivatives
# --------------------------------------------------------------------------

def w_entry_same_scale(xi, xj, theta):
    """int_0^1 exp(-(xi-x)^2/theta) exp(-(xj-x)^2/theta) dx."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("lengthscale must be positive")
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    s = np.sqrt(2.0 * theta)
    tot = xi + xj
    return (
        np.sqrt(2.0 * np.pi * theta) / 4.0
        * np.exp(-((xi - xj) ** 2) / (2.0 * theta))
        * (erf((2.0 - tot) / s) + erf(tot / s))
    )


def w_entry_mixed_scale(xi, xj, theta_m, theta_b):
    """int_0^1 exp(-(xi-x)^2/theta_m) exp(-(xj-x)^2/theta_b) dx.

    ``xj`` is the field (bias-kernel) coordinate.
    """
    theta_m = np.asarray(theta_m, dtype=float)
    theta_b = np.asarray(theta_b, dtype=float)
    if np.any(theta_m <= 0) or np.any(theta_b <= 0):
        raise ValueError("lengthscales must be positive")
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    tsum = theta_m + theta_b
    var = theta_m * theta_b / tsum  # (1/theta_m + 1/theta_b)^-1
    sd = np.sqrt(var)
    m = (theta_b * xi + theta_m * xj) / tsum
    return (
        np.exp(-((xj - xi) ** 2) / tsum)
        * 0.5 * np.sqrt(np.pi * var)
        * (erf(m / sd) - erf((m - 1.0) / sd))
    )


def dw_same(a, t, theta):
    """Partial of ``w_same(a, t)`` with respect to ``t`` (``a`` held fixed)."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    s = np.sqrt(2.0 * theta)
    tot = a + t
    e = np.exp(-((a - t) ** 2) / (2.0 * theta))
    erfs = erf((2.0 - tot) / s) + erf(tot / s)
    edge = np.exp(-(tot ** 2) / (2.0 * theta)) - np.exp(-((2.0 - tot) ** 2) / (2.0 * theta))
    return np.sqrt(np.pi / 2.0) * e * (
        (a - t) * erfs / (2.0 * np.sqrt(theta)) + 0.5 * np.sqrt(2.0 / np.pi) * edge
    )


def dw_same_diag(t, theta):
    """Total derivative of ``w_same(t, t)`` in ``t`` (both arguments move)."""
    t = np.asarray(t, dtype=float)
    return np.exp(-2.0 * t ** 2 / theta) - np.exp(-2.0 * (t - 1.0) ** 2 / theta)


def dw_mixed(t, xj, theta_m, theta_b):
    """Partial of ``w_mixed(t, xj)`` with respect to the model-side ``t``."""
    t = np.asarray(t, dtype=float)
    xj = np.asarray(xj, dtype=float)
    tsum = theta_m + theta_b
    lam = 1.0 / theta_m + 1.0 / theta_b
    m = (theta_m * xj + theta_b * t) / tsum
    sd = np.sqrt(1.0 / lam)
    pref = np.exp(-((t - xj) ** 2) / tsum) / tsum
    return pref * (
        np.sqrt(np.pi / lam) * (xj - t) * (erf(m / sd) - erf((m - 1.0) / sd))
        + theta_b * (np.exp(-lam * m ** 2) - np.exp(-lam * (m - 1.0) ** 2))
    )


def _w_same_matrix(A, B, theta):
    """Product over columns of w_same between rows of A and B."""
    out = np.ones((A.shape[0], B.shape[0]))
    for l in range(A.shape[1]):
        out *= w_entry_same_scale(A[:, l][:, None], B[:, l][None, :], theta[l])
    return out


def _w_mixed_matrix(A, B, theta_m, theta_b):
    out = np.ones((A.shape[0], B.shape[0]))
    for l in range(A.shape[1]):
        out *= w_entry_mixed_scale(A[:, l][:, None], B[:, l][None, :], theta_m[l], theta_b[l])
    return out


def _prod_except(F):
    """For F (..., k), products over the last axis leaving each entry out."""
    k = F.shape[-1]
    out = np.empty_like(F)
    for l in range(k):
        out[..., l] = np.prod(np.delete(F, l, axis=-1), axis=-1)
    return out


# --------------------------------------------------------------------------
# W matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WSet:
    """Integral matrices over the augmented design and candidate derivatives.

    ``dWmm[l]``/``dWmb[l]`` are derivatives with respect to coordinate ``l``
    of the candidate; only their last row and column are nonzero.  The
    bias-bias derivative is identically zero and is not stored.
    """

    Wmm: np.ndarray
    Wmb: np.ndarray  # rows: model side, columns: field (bias) side
    Wbb: np.ndarray
    dWmm: np.ndarray
    dWmb: np.ndarray
    n_field: int

    def combined(self, nu_m, nu_b):
        mb = self.Wmb + self.Wmb.T
        return nu_m ** 2 * self.Wmm + nu_m * nu_b * mb + nu_b ** 2 * self.Wbb

    def combined_grad(self, nu_m, nu_b):
        mb = self.dWmb + np.swapaxes(self.dWmb, 1, 2)
        return nu_m ** 2 * self.dWmm + nu_m * nu_b * mb


def _u_factor(U, u_hat, theta_u):
    if U.shape[1] == 0:
        return np.ones(U.shape[0])
    return np.exp(-((U - u_hat) ** 2) @ (1.0 / theta_u))


def build_w_set(fit: KohFit, candidate) -> WSet:
    """Dense W matrices over ``[field; simulator; candidate]`` rows."""
    cand = _check_candidate(fit, candidate)
    p, s = fit.p, fit.s
    Z = np.vstack([fit.design, cand[None, :]])
    n1 = Z.shape[0]
    nf = fit.n_field
    tm = fit.cfg_m.lengthscales
    tb = fit.cfg_b.lengthscales
    uh = fit.u_hat.u_hat
    X, U = Z[:, :p], Z[:, p:]
    Xf = fit.field.Xf

    e = _u_factor(U, uh, tm[p:])
    Wmm = _w_same_matrix(X, X, tm[:p]) * np.outer(e, e)
    Wmb = np.zeros((n1, n1))
    Wbb = np.zeros((n1, n1))
    if nf:
        Wmb[:, :nf] = _w_mixed_matrix(X, Xf, tm[:p], tb) * e[:, None]
        Wbb[:nf, :nf] = _w_same_matrix(Xf, Xf, tb)

    d = p + s
    dWmm = np.zeros((d, n1, n1))
    dWmb = np.zeros((d, n1, n1))
    xt, ut = cand[:p], cand[p:]
    # x-coordinates: one factor of the product changes
    Fmm = np.stack([w_entry_same_scale(X[:, l], xt[l], tm[l]) for l in range(p)], axis=-1)
    other_mm = _prod_except(Fmm) if p else np.ones((n1, 0))
    et = e[-1]
    for l in range(p):
        col = dw_same(X[:, l], xt[l], tm[l]) * other_mm[:, l] * e * et
        col[-1] = dw_same_diag(xt[l], tm[l]) * other_mm[-1, l] * et * et
        dWmm[l, :, -1] = col
        dWmm[l, -1, :] = col
    if nf:
        Fmb = np.stack([w_entry_mixed_scale(xt[l], Xf[:, l], tm[l], tb[l]) for l in range(p)],
                       axis=-1)
        other_mb = _prod_except(Fmb)
        for l in range(p):
            dWmb[l, -1, :nf] = dw_mixed(xt[l], Xf[:, l], tm[l], tb[l]) * other_mb[:, l] * et
    # u-coordinates: only the candidate's u-factor moves
    for r in range(s):
        l = p + r
        de = -2.0 * (ut[r] - uh[r]) / tm[l] * et
        col = _w_same_matrix(X, X[-1:], tm[:p])[:, 0] * e * de
        col[-1] = _w_same_matrix(X[-1:], X[-1:], tm[:p])[0, 0] * 2.0 * et * de
        dWmm[l, :, -1] = col
        dWmm[l, -1, :] = col
        if nf:
            dWmb[l, -1, :nf] = _w_mixed_matrix(X[-1:], Xf, tm[:p], tb)[0] * de
    return WSet(Wmm, Wmb, Wbb, dWmm, dWmb, nf)


# --------------------------------------------------------------------------
# augmented-design criterion engine
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockInverse:
    """Inverse of the covariance augmented by one candidate row."""

    inner_inverse: np.ndarray
    k_tilde: np.ndarray
    b_scalar: float
    nu_m: float

    @property
    def q(self) -> np.ndarray:
        return self.nu_m * self.inner_inverse @ self.k_tilde

    def assemble(self) -> np.ndarray:
        q = self.q
        b = self.b_scalar
        n = q.shape[0]
        out = np.empty((n + 1, n + 1))
        out[:n, :n] = self.inner_inverse + np.outer(q, q) / b
        out[:n, n] = -q / b
        out[n, :n] = -q / b
        out[n, n] = 1.0 / b
        return out


class _Augmented:
    """Shared machinery for IMSPE of a design augmented by one row.

    ``total`` is the integrated prior variance, ``coupling`` the scale on
    the candidate's cross-covariance, ``kappa`` its prior self-correlation
    (jitter included), ``chol`` the lower Cholesky factor of the inner
    covariance and ``C0`` the inner combined W matrix.

    Everything goes through triangular solves: with an explicit inverse
    the Schur complement ``b`` loses most of its digits once the design
    is moderately ill-conditioned.
    """

    def __init__(self, total, coupling, kappa, chol, C0):
        self.total = float(total)
        self.coupling = float(coupling)
        self.kappa = float(kappa)
        self.chol = chol
        self.C0 = C0
        self.trace0 = float(np.trace(self.solve(C0)))

    def solve(self, B):
        return linalg.cho_solve((self.chol, True), B)

    @property
    def base_value(self) -> float:
        return self.total - self.trace0

    def value(self, kt, c, gamma):
        """Criterion for a batch: kt, c are (m, n); gamma is (m,)."""
        nu = self.coupling
        W = linalg.solve_triangular(self.chol, kt.T, lower=True)
        V = linalg.solve_triangular(self.chol.T, W, lower=False)
        b = nu * self.kappa - nu * nu * np.sum(W * W, axis=0)
        S = nu * nu * np.sum(V * (self.C0 @ V), axis=0) - 2.0 * nu * np.sum(V * c.T, axis=0) + gamma
        return self.total - self.trace0 - S / b, b

    def grad_terms(self, kt, c, gamma, dk, dc, dgamma):
        """Covariance and W contributions to the gradient for one candidate.

        ``dk``/``dc`` are (d, n), ``dgamma`` is (d,).  The gradient is
        ``cov_term - w_term``; the criterion value and ``b`` come along.
        """
        nu = self.coupling
        w = linalg.solve_triangular(self.chol, kt, lower=True)
        v = linalg.solve_triangular(self.chol.T, w, lower=False)
        q = nu * v
        b = nu * self.kappa - nu * nu * float(w @ w)
        C0v = self.C0 @ v
        S = nu * nu * float(v @ C0v) - 2.0 * float(q @ c) + gamma
        Pk = self.solve(C0v)
        Ac = self.solve(c)
        db = -2.0 * nu * (dk @ q)
        dS_cov = 2.0 * nu * nu * (dk @ Pk) - 2.0 * nu * (dk @ Ac)
        cov_term = -dS_cov / b + S * db / (b * b)
        w_term = (dgamma - 2.0 * (dc @ q)) / b
        value = self.total - self.trace0 - S / b
        return value, cov_term, w_term, b


# --------------------------------------------------------------------------
# KOH criterion
# --------------------------------------------------------------------------

def _check_candidate(fit, candidate):
    cand = np.asarray(candidate, dtype=float).ravel()
    if cand.shape[0] != fit.d:
        raise ValueError(f"candidate must have {fit.d} coordinates")
    if np.any(cand < 0) or np.any(cand > 1):
        raise ValueError("candidate must lie in the unit hypercube")
    return cand


class KohImspe:
    """KOH-IMSPE evaluator bound to one fit; build once, query many times."""

    def __init__(self, fit: KohFit):
        self.fit = fit
        p, s = fit.p, fit.s
        self.p, self.s = p, s
        self.tm = fit.cfg_m.lengthscales
        self.tb = fit.cfg_b.lengthscales
        self.uh = fit.u_hat.u_hat
        self.Z = fit.design
        self.nf = fit.n_field
        self.Xf = fit.field.Xf
        nu_m, nu_b = fit.nu_m, fit.nu_b
        X, U = self.Z[:, :p], self.Z[:, p:]
        self.e = _u_factor(U, self.uh, self.tm[p:])
        Wmm = _w_same_matrix(X, X, self.tm[:p]) * np.outer(self.e, self.e)
        C0 = nu_m ** 2 * Wmm
        nf = self.nf
        if nf and nu_b > 0:
            Wmb = _w_mixed_matrix(X, self.Xf, self.tm[:p], self.tb) * self.e[:, None]
            C0[:, :nf] += nu_m * nu_b * Wmb
            C0[:nf, :] += nu_m * nu_b * Wmb.T
            C0[:nf, :nf] += nu_b ** 2 * _w_same_matrix(self.Xf, self.Xf, self.tb)
        self.engine = _Augmented(nu_m + nu_b, nu_m, 1.0 + fit.cfg_m.diag,
                                 fit.joint_chol, C0)
        self.b_min = rejection_floor(nu_m, fit.cfg_m.jitter)

    @property
    def current_value(self) -> float:
        """Integrated field variance of the unaugmented design."""
        return self.engine.base_value

    def _pieces(self, C):
        """k~, c, gamma for a batch of candidates C (m, d)."""
        p = self.p
        fit = self.fit
        nu_m, nu_b = fit.nu_m, fit.nu_b
        diff = C[:, None, :] - self.Z[None, :, :]
        kt = np.exp(-np.einsum("mil,l->mi", diff * diff, 1.0 / self.tm))
        Xc, Uc = C[:, :p], C[:, p:]
        et = _u_factor(Uc, self.uh, self.tm[p:])
        X = self.Z[:, :p]
        wx = np.ones((C.shape[0], X.shape[0]))
        wcc = np.ones(C.shape[0])
        for l in range(p):
            wx *= w_entry_same_scale(Xc[:, l][:, None], X[:, l][None, :], self.tm[l])
            wcc *= w_entry_same_scale(Xc[:, l], Xc[:, l], self.tm[l])
        c = nu_m ** 2 * wx * self.e[None, :] * et[:, None]
        if self.nf and nu_b > 0:
            wmb = np.ones((C.shape[0], self.nf))
            for l in range(p):
                wmb *= w_entry_mixed_scale(Xc[:, l][:, None], self.Xf[:, l][None, :],
                                           self.tm[l], self.tb[l])
            c[:, :self.nf] += nu_m * nu_b * wmb * et[:, None]
        gamma = nu_m ** 2 * wcc * et * et
        return kt, c, gamma

    def values(self, C, check=True):
        """Criterion at each row of ``C``; ``b`` below the floor gives ``inf``
        unless ``check`` is set, in which case it raises."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        kt, c, gamma = self._pieces(C)
        vals, b = self.engine.value(kt, c, gamma)
        bad = b <= self.b_min
        if np.any(bad):
            if check:
                raise CandidateRejected("candidate duplicates an existing design row")
            vals = np.where(bad, np.inf, vals)
        return vals

    def value(self, candidate) -> float:
        cand = _check_candidate(self.fit, candidate)
        return float(self.values(cand[None, :])[0])

    def _check_proximity(self, cand):
        if np.any(np.max(np.abs(self.Z - cand[None, :]), axis=1) < PROXIMITY):
            raise ProximityError("candidate within 1e-6 of an existing design row")

    def grad_terms(self, candidate):
        """``(value, cov_term, w_term)``; the gradient is ``cov_term - w_term``."""
        cand = _check_candidate(self.fit, candidate)
        self._check_proximity(cand)
        p, s = self.p, self.s
        fit = self.fit
        nu_m, nu_b = fit.nu_m, fit.nu_b
        tm, tb = self.tm, self.tb
        kt, c, gamma = (a[0] for a in self._pieces(cand[None, :]))
        d = p + s
        n = self.Z.shape[0]
        X = self.Z[:, :p]
        xt, ut = cand[:p], cand[p:]
        et = float(_u_factor(ut[None, :], self.uh, tm[p:])[0])

        dk = -2.0 * (cand[:, None] - self.Z.T) / tm[:, None] * kt[None, :]
        dc = np.zeros((d, n))
        dgamma = np.zeros(d)

        F = np.stack([w_entry_same_scale(X[:, l], xt[l], tm[l]) for l in range(p)], axis=-1) \
            if p else np.ones((n, 0))
        Fcc = np.array([w_entry_same_scale(xt[l], xt[l], tm[l]) for l in range(p)])
        oth = _prod_except(F) if p else F
        othcc = _prod_except(Fcc[None, :])[0] if p else Fcc
        wx = np.prod(F, axis=1)
        wcc = float(np.prod(Fcc))
        nf = self.nf
        has_bias = nf and nu_b > 0
        if has_bias:
            G = np.stack([w_entry_mixed_scale(xt[l], self.Xf[:, l], tm[l], tb[l])
                          for l in range(p)], axis=-1)
            othG = _prod_except(G)
            wmb = np.prod(G, axis=1)
        for l in range(p):
            dc[l] = nu_m ** 2 * dw_same(X[:, l], xt[l], tm[l]) * oth[:, l] * self.e * et
            dgamma[l] = nu_m ** 2 * dw_same_diag(xt[l], tm[l]) * othcc[l] * et * et
            if has_bias:
                dc[l, :nf] += nu_m * nu_b * dw_mixed(xt[l], self.Xf[:, l], tm[l], tb[l]) \
                    * othG[:, l] * et
        for r in range(s):
            l = p + r
            de = -2.0 * (ut[r] - self.uh[r]) / tm[l] * et
            dc[l] = nu_m ** 2 * wx * self.e * de
            dgamma[l] = nu_m ** 2 * wcc * 2.0 * et * de
            if has_bias:
                dc[l, :nf] += nu_m * nu_b * wmb * de
        value, cov_term, w_term, b = self.engine.grad_terms(kt, c, gamma, dk, dc, dgamma)
        if b <= self.b_min:
            raise CandidateRejected("candidate duplicates an existing design row")
        return value, cov_term, w_term

    def value_and_grad(self, candidate):
        value, cov_term, w_term = self.grad_terms(candidate)
        return value, cov_term - w_term

    def grad(self, candidate) -> np.ndarray:
        return self.value_and_grad(candidate)[1]


def koh_imspe(fit: KohFit, candidate) -> float:
    """Integrated field variance after adding simulator run ``candidate``."""
    return KohImspe(fit).value(candidate)


def koh_imspe_grad(fit: KohFit, candidate) -> np.ndarray:
    return KohImspe(fit).grad(candidate)


def integrated_variance(fit: KohFit) -> float:
    """Integrated field variance of the current (unaugmented) design."""
    return KohImspe(fit).current_value


def block_inverse(fit: KohFit, candidate) -> BlockInverse:
    cand = _check_candidate(fit, candidate)
    Ainv = fit.sigma_inverse
    kt = np.exp(-np.sum((fit.design - cand) ** 2 / fit.cfg_m.lengthscales, axis=1))
    kappa = 1.0 + fit.cfg_m.diag
    w = linalg.solve_triangular(fit.joint_chol, kt, lower=True)
    b = fit.nu_m * kappa - fit.nu_m ** 2 * float(w @ w)
    if b <= 0:
        raise np.linalg.LinAlgError("augmented covariance is not positive definite")
    return BlockInverse(Ainv, kt, b, fit.nu_m)


def augmented_covariance(fit: KohFit, candidate) -> np.ndarray:
    """Dense covariance with the candidate as an extra simulator row."""
    cand = _check_candidate(fit, candidate)
    return fit.with_sim_row(cand[:fit.p], cand[fit.p:]).covariance()


def koh_imspe_dense(fit: KohFit, candidate) -> float:
    """Reference evaluation: dense W matrices and a dense inverse."""
    ws = build_w_set(fit, candidate)
    Sinv = np.linalg.inv(augmented_covariance(fit, candidate))
    Sinv = 0.5 * (Sinv + Sinv.T)
    return fit.nu_m + fit.nu_b - float(np.sum(Sinv * ws.combined(fit.nu_m, fit.nu_b)))


# --------------------------------------------------------------------------
# standard single-GP criterion over the full input cube
# --------------------------------------------------------------------------

class MImspe:
    """IMSPE of a single GP over all of its inputs (uniform on the cube)."""

    def __init__(self, fit: GpFit):
        self.fit = fit
        self.X = fit.data.X
        self.theta = fit.cfg.lengthscales
        nu = fit.scale
        W = _w_same_matrix(self.X, self.X, self.theta)
        self.engine = _Augmented(nu, nu, 1.0 + fit.cfg.diag,
                                 math.sqrt(nu) * fit.chol, nu * nu * W)
        self.b_min = rejection_floor(nu, fit.cfg.jitter)

    @property
    def current_value(self) -> float:
        return self.engine.base_value

    def _pieces(self, C):
        nu = self.fit.scale
        diff = C[:, None, :] - self.X[None, :, :]
        kt = np.exp(-np.einsum("mil,l->mi", diff * diff, 1.0 / self.theta))
        w = np.ones_like(kt)
        wcc = np.ones(C.shape[0])
        for l in range(C.shape[1]):
            w *= w_entry_same_scale(C[:, l][:, None], self.X[:, l][None, :], self.theta[l])
            wcc *= w_entry_same_scale(C[:, l], C[:, l], self.theta[l])
        return kt, nu * nu * w, nu * nu * wcc

    def values(self, C, check=True):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] != self.X.shape[1]:
            raise ValueError(f"candidate must have {self.X.shape[1]} coordinates")
        vals, b = self.engine.value(*self._pieces(C))
        bad = b <= self.b_min
        if np.any(bad):
            if check:
                raise CandidateRejected("candidate duplicates an existing design row")
            vals = np.where(bad, np.inf, vals)
        return vals

    def value(self, candidate) -> float:
        return float(self.values(np.asarray(candidate, dtype=float).ravel()[None, :])[0])

    def value_and_grad(self, candidate):
        cand = np.asarray(candidate, dtype=float).ravel()
        if cand.shape[0] != self.X.shape[1]:
            raise ValueError(f"candidate must have {self.X.shape[1]} coordinates")
        if np.any(np.max(np.abs(self.X - cand[None, :]), axis=1) < PROXIMITY):
            raise ProximityError("candidate within 1e-6 of an existing design row")
        nu = self.fit.scale
        kt, c, gamma = (a[0] for a in self._pieces(cand[None, :]))
        th = self.theta
        X = self.X
        dk = -2.0 * (cand[:, None] - X.T) / th[:, None] * kt[None, :]
        F = np.stack([w_entry_same_scale(X[:, l], cand[l], th[l]) for l in range(len(cand))],
                     axis=-1)
        Fcc = np.array([w_entry_same_scale(cand[l], cand[l], th[l]) for l in range(len(cand))])
        oth = _prod_except(F)
        othcc = _prod_except(Fcc[None, :])[0]
        dc = np.stack([nu * nu * dw_same(X[:, l], cand[l], th[l]) * oth[:, l]
                       for l in range(len(cand))])
        dgamma = np.array([nu * nu * dw_same_diag(cand[l], th[l]) * othcc[l]
                           for l in range(len(cand))])
        value, cov_term, w_term, b = self.engine.grad_terms(kt, c, gamma, dk, dc, dgamma)
        if b <= self.b_min:
            raise CandidateRejected("candidate duplicates an existing design row")
        return value, cov_term - w_term

    def grad(self, candidate) -> np.ndarray:
        return self.value_and_grad(candidate)[1]


def m_imspe(fit: GpFit, candidate):
    """Single-GP IMSPE after adding ``candidate``, and its gradient."""
    return MImspe(fit).value_and_grad(candidate)
