"""Separable Gaussian covariance kernel and its row derivatives.

All inputs are assumed coded to the unit hypercube.  The kernel is

    k(a, b) = exp(-sum_l (a_l - b_l)^2 / theta_l) + (g + eps) * [same index]

where the diagonal term is only added when a covariance matrix is built
against itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

DEFAULT_JITTER = 1e-8


def erf(x):
    """Gauss error function, vectorised (double precision, ~1 ulp)."""
    return special.erf(x)


def _as_theta(theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim != 1:
        raise ValueError("lengthscales must be a 1-d vector")
    if not np.all(theta > 0) or not np.all(np.isfinite(theta)):
        raise ValueError(f"lengthscales must be positive and finite, got {theta}")
    return theta


@dataclass(frozen=True)
class KernelConfig:
    """Lengthscales plus diagonal terms for one Gaussian kernel.

    Parameters
    ----------
    lengthscales : array_like
        One positive entry per input column.
    nugget : float
        Noise nugget ``g``; added to the diagonal of self-covariances.
    jitter : float
        Small conditioning term added alongside the nugget.
    """

    lengthscales: np.ndarray
    nugget: float = 0.0
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        theta = _as_theta(self.lengthscales)
        theta.setflags(write=False)
        object.__setattr__(self, "lengthscales", theta)
        if self.nugget < 0 or self.jitter < 0:
            raise ValueError("nugget and jitter must be nonnegative")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    @property
    def diag(self) -> float:
        return float(self.nugget + self.jitter)

    def replace(self, **kw) -> "KernelConfig":
        args = dict(lengthscales=self.lengthscales, nugget=self.nugget, jitter=self.jitter)
        args.update(kw)
        return KernelConfig(**args)


def _check_rows(A, d):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.shape[1] != d:
        raise ValueError(f"expected {d} columns, got {A.shape[1]}")
    return A


def kernel_value(a, b, cfg: KernelConfig, same_index: bool = False) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape or a.shape[0] != cfg.dim:
        raise ValueError("dimension mismatch between rows and lengthscales")
    val = float(np.exp(-np.sum((a - b) ** 2 / cfg.lengthscales)))
    if same_index:
        val += cfg.diag
    return val


def sq_dist(A, B, theta) -> np.ndarray:
    """Lengthscale-weighted squared distances between rows of A and B."""
    As = A / np.sqrt(theta)
    Bs = B / np.sqrt(theta)
    D = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    return np.maximum(D, 0.0)


def cross_covariance(A, B, cfg: KernelConfig, add_diagonal: bool = False) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` (n x d) and ``B`` (m x d).

    ``add_diagonal`` adds ``nugget + jitter`` on the diagonal and requires
    ``A`` and ``B`` to be the same design.
    """
    A = _check_rows(A, cfg.dim)
    B = _check_rows(B, cfg.dim)
    # explicit differences keep exact zeros on coincident rows
    if A.shape[0] * B.shape[0] * A.shape[1] <= 2_000_000:
        diff = A[:, None, :] - B[None, :, :]
        K = np.exp(-np.einsum("ijl,l->ij", diff * diff, 1.0 / cfg.lengthscales))
    else:
        K = np.exp(-sq_dist(A, B, cfg.lengthscales))
    if add_diagonal:
        if A.shape != B.shape or not np.array_equal(A, B):
            raise ValueError("add_diagonal requires A and B to be the same design")
        K[np.diag_indices_from(K)] += cfg.diag
    return K


def kernel_grad_row(a, b, cfg: KernelConfig, l: int) -> float:
    """Partial derivative of ``k(a, b)`` with respect to ``a[l]``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if not 0 <= l < a.shape[0]:
        raise IndexError(f"coordinate {l} out of range for a {a.shape[0]}-d row")
    k = kernel_value(a, b, cfg)
    return -2.0 * (a[l] - b[l]) / cfg.lengthscales[l] * k


def cross_covariance_grad(a, B, cfg: KernelConfig, K_row=None) -> np.ndarray:
    """Gradient of ``k(a, B_j)`` with respect to every coordinate of ``a``.

    Returns a (d, m) array whose entry ``[l, j]`` is dk(a, B_j)/da_l.
    """
    a = np.asarray(a, dtype=float).ravel()
    B = _check_rows(B, cfg.dim)
    if K_row is None:
        K_row = cross_covariance(a[None, :], B, cfg)[0]
    return -2.0 * (a[:, None] - B.T) / cfg.lengthscales[:, None] * K_row[None, :]
