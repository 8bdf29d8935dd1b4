"""Mass-action kinetics for La/Na solvent extraction with an organophosphorus acid.

Two reversible reactions between the aqueous and organic phases::

    La3+ + 3 H2A2  <->  La(HA2)3 + 3 H+
    Na+  +   H2A2  <->  Na(HA2)  +   H+

Conservation of La, Na and the extractant reduces the system to ODEs in
``[La3+]`` and ``[Na+]``; the other four species are recovered from the
conservation identities at every Runge-Kutta stage, so those identities
hold to rounding error throughout.

Inputs
------
x (3, coded): mols of NaOH added, volume of NaOH solution, O/A volume ratio.
u (4, coded): k+La, k-La, k+Na, k-Na, decoded log-uniformly onto [1e-3, 1e3].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from .base import Problem

SPECIES = ("La", "Na", "H", "H2A2", "LaA", "NaA")

K_LOG10_BOUNDS = (-3.0, 3.0)
PAPER_STEP = 5e-5
DESK_STEP = 5e-4
T_MAX = 20.0


@dataclass(frozen=True)
class SxChemistry:
    """Fixed experimental constants and coded-input ranges (litres, mol, mol/L)."""

    aqueous_volume: float = 0.1
    la_feed: float = 0.01
    extractant: float = 1.053
    feed_ph: float = 1.99
    naoh_mols: tuple = (1e-4, 5e-3)
    naoh_volume: tuple = (5e-4, 1e-2)
    oa_ratio: tuple = (0.1, 1.0)


DEFAULT_CHEMISTRY = SxChemistry()


def _lin(c, bounds):
    return bounds[0] + c * (bounds[1] - bounds[0])


def decode_rates(u) -> np.ndarray:
    """Coded kinetic constants in [0, 1] to rates on [1e-3, 1e3] (log scale)."""
    u = np.asarray(u, dtype=float)
    lo, hi = K_LOG10_BOUNDS
    return 10.0 ** (lo + u * (hi - lo))


def initial_state(x, chem: SxChemistry = DEFAULT_CHEMISTRY):
    """Initial (La, Na, H, H2A2) concentrations and the two volumes used to
    renormalise outputs: ``(c0, total_volume, aqueous_total)``."""
    x = np.asarray(x, dtype=float)
    n_naoh = _lin(x[0], chem.naoh_mols)
    v_naoh = _lin(x[1], chem.naoh_volume)
    v_org = _lin(x[2], chem.oa_ratio) * chem.aqueous_volume
    v_aq = chem.aqueous_volume
    v_tot = v_aq + v_org + v_naoh
    la0 = chem.la_feed * v_aq / v_tot
    na0 = n_naoh / v_tot
    a0 = chem.extractant * v_org / v_tot
    acid_mols = 10.0 ** (-chem.feed_ph) * v_aq
    excess = acid_mols - n_naoh
    if excess > 0:
        h0 = excess / v_tot
    elif excess < 0:
        h0 = 1e-14 / (-excess / v_tot)
    else:
        h0 = 1e-7
    return np.array([la0, na0, h0, a0]), v_tot, v_aq + v_naoh


@numba.njit(cache=True)
def _derived(la, na, c0):
    la_c = c0[0] - la
    na_c = c0[1] - na
    a = c0[3] - 3.0 * la_c - na_c
    h = c0[2] + c0[3] - a
    return la_c, na_c, a, h


@numba.njit(cache=True)
def _rhs(la, na, c0, k):
    la_c, na_c, a, h = _derived(la, na, c0)
    dla = k[0] * la_c * h ** 3 - k[1] * la * a ** 3
    dna = k[2] * na_c * h - k[3] * na * a
    return dla, dna


@numba.njit(cache=True)
def _rk4(c0, k, step, n_steps, record_every):
    """Classical RK4 on (La, Na).

    Returns ``(states, status)`` where ``states`` holds the six species at
    step 0 and every ``record_every`` steps, and ``status`` is 0 on
    success, ``+i`` for a non-finite state at step i, ``-i`` for a
    negative concentration at step i.
    """
    n_rec = n_steps // record_every + 1
    out = np.empty((n_rec, 6))
    la, na = c0[0], c0[1]
    la_c, na_c, a, h = _derived(la, na, c0)
    out[0, 0] = la; out[0, 1] = na; out[0, 2] = h
    out[0, 3] = a; out[0, 4] = la_c; out[0, 5] = na_c
    r = 1
    for i in range(1, n_steps + 1):
        k1a, k1b = _rhs(la, na, c0, k)
        k2a, k2b = _rhs(la + 0.5 * step * k1a, na + 0.5 * step * k1b, c0, k)
        k3a, k3b = _rhs(la + 0.5 * step * k2a, na + 0.5 * step * k2b, c0, k)
        k4a, k4b = _rhs(la + step * k3a, na + step * k3b, c0, k)
        la = la + step / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        na = na + step / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        if not (np.isfinite(la) and np.isfinite(na)):
            return out[:r], i
        la_c, na_c, a, h = _derived(la, na, c0)
        if min(la, na, h, a, la_c, na_c) < -1e-12:
            return out[:r], -i
        if i % record_every == 0:
            out[r, 0] = la; out[r, 1] = na; out[r, 2] = h
            out[r, 3] = a; out[r, 4] = la_c; out[r, 5] = na_c
            r += 1
    return out, 0


class SxIntegrationError(FloatingPointError):
    def __init__(self, kind, step_index):
        self.step_index = step_index
        super().__init__(f"{kind} at integration step {step_index}")


def integrate(x, u, step: float = PAPER_STEP, tmax: float = T_MAX,
              n_records: int = 1, rates: Optional[Sequence[float]] = None,
              chem: SxChemistry = DEFAULT_CHEMISTRY):
    """Trajectory of the six species.

    Returns ``(times, states, c0)`` with ``states`` of shape
    ``(n_records + 1, 6)`` in the order of ``SPECIES``, sampled at equal
    spacing from 0 to ``tmax``.  ``rates`` overrides the decoded
    constants (natural units) when given.
    """
    n_steps = int(round(tmax / step))
    if n_steps < 1 or abs(n_steps * step - tmax) > 1e-9 * tmax:
        raise ValueError("tmax must be a whole number of steps")
    if n_steps % n_records:
        raise ValueError("n_records must divide the number of steps")
    c0, _, _ = initial_state(x, chem)
    k = np.asarray(rates if rates is not None else decode_rates(u), dtype=float)
    states, status = _rk4(c0, k, float(step), n_steps, n_steps // n_records)
    if status > 0:
        raise SxIntegrationError("non-finite state", status)
    if status < 0:
        raise SxIntegrationError("negative concentration", -status)
    times = np.linspace(0.0, tmax, n_records + 1)
    return times, states, c0


def conservation_residuals(state, c0) -> np.ndarray:
    """Relative residuals of the four conservation identities."""
    la, na, h, a, la_c, na_c = state
    la0, na0, h0, a0 = c0
    res = np.array([
        (la + la_c - la0) / la0,
        (na + na_c - na0) / na0,
        (3.0 * la_c + na_c + a - a0) / a0,
        (h + a - h0 - a0) / (h0 + a0),
    ])
    return np.abs(res)


def sx_simulate(x, u, step: float = PAPER_STEP, tmax: float = T_MAX, rates=None,
                chem: SxChemistry = DEFAULT_CHEMISTRY):
    """Natural-log aqueous La and Na concentrations after ``tmax``.

    Concentrations are rescaled from the whole mixture to the aqueous
    volume (feed plus NaOH solution).
    """
    _, states, c0 = integrate(x, u, step, tmax, 1, rates, chem)
    _, v_tot, v_aq = initial_state(x, chem)
    scale = v_tot / v_aq
    la, na = states[-1, 0], states[-1, 1]
    return math.log(la * scale), math.log(na * scale)


def sx_batch(X, U, step: float = PAPER_STEP, tmax: float = T_MAX) -> np.ndarray:
    """``(n, 2)`` array of (log La, log Na) for coded rows ``X`` (n x 3), ``U`` (n x 4)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if X.shape[1] != 3 or U.shape[1] != 4 or X.shape[0] != U.shape[0]:
        raise ValueError("expected X (n x 3) and U (n x 4)")
    if np.any((X < 0) | (X > 1)) or np.any((U < 0) | (U > 1)):
        raise ValueError("coded inputs must lie in [0, 1]")
    return np.array([sx_simulate(x, u, step, tmax) for x, u in zip(X, U)]).reshape(-1, 2)


INPUT_COLUMNS = ("naoh_mols", "naoh_volume", "oa_ratio", "k_plus_la", "k_minus_la",
                 "k_plus_na", "k_minus_na")


def simulate_csv(in_path, out_path, step: float = PAPER_STEP, tmax: float = T_MAX) -> int:
    """Batch mode: coded 7-column rows in, the same rows plus log_La, log_Na out."""
    rows = np.loadtxt(in_path, delimiter=",", ndmin=2, skiprows=_header_rows(in_path))
    if rows.shape[1] != 7:
        raise ValueError(f"expected 7 coded input columns, got {rows.shape[1]}")
    out = sx_batch(rows[:, :3], rows[:, 3:], step, tmax)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(INPUT_COLUMNS) + ["log_La", "log_Na"])
        for r, o in zip(rows, out):
            w.writerow([repr(float(v)) for v in r] + [repr(float(v)) for v in o])
    return rows.shape[0]


def _header_rows(path) -> int:
    with open(path) as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
        return 0
    except ValueError:
        return 1


# synthetic field truth: fixed rates plus a smooth low-order discrepancy
SX_U_STAR = np.array([0.62, 0.45, 0.55, 0.40])


def sx_bias(X):
    X = np.asarray(X, dtype=float)
    return 0.15 * X[:, 0] - 0.10 * X[:, 2] ** 2 + 0.05 * X[:, 0] * X[:, 1]


def make_sx(bias_scale: float = 1.0, noise_sd: float = 0.02, step: float = DESK_STEP,
            tmax: float = T_MAX) -> Problem:
    """SX problem with log La as the response."""

    def simulator(X, U):
        return sx_batch(X, U, step, tmax)[:, 0]

    return Problem(name="sx", p=3, s=4, simulator=simulator, bias_fn=sx_bias,
                   noise_sd=noise_sd, u_star=SX_U_STAR, bias_scale=bias_scale)
