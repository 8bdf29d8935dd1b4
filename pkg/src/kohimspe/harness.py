"""Monte-Carlo comparison of sequential design strategies.

Each MC iteration draws field data, a master Latin hypercube over the
simulator inputs and a test set.  Every strategy starts from the first
``n_m0`` master rows and the same field data, then alternates acquire,
simulate and refit until ``n_m_final`` runs, recording field-prediction
RMSE on the test set after every fit.

Output is a CSV with one row per (strategy, iteration, N_M) plus a JSON
sidecar holding the resolved configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from .acquisition import STRATEGIES, DesignStrategy, OptimizerSettings, acquire_comparator, lhs
from .gp import BetaPrior, GammaPrior
from .koh import KohPriors, KohSettings, SimData, fit_koh, predict_field
from .problems import FieldSpec, Problem, generate_field, get_problem

log = logging.getLogger(__name__)


def rmse(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    if predictions.size == 0:
        raise ValueError("rmse of an empty vector")
    return float(np.sqrt(np.mean((predictions - truth) ** 2)))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

PROBLEM_PRIORS = {
    "sinusoid": dict(theta_m=(1.5, 2.0), theta_b=(1.5, 5.0), g_b=(1.5, 7.0)),
    "goh-bastos": dict(theta_m=(1.5, 1.25), theta_b=(1.5, 2.5), g_b=(1.5, 0.05)),
    "sx": dict(theta_m=(1.5, 0.9), theta_b=(1.5, 0.9), g_b=(1.5, 0.05)),
}


@dataclass
class PriorConfig:
    """Gamma parameters as ``(shape, second)`` pairs.

    ``gamma_form`` says whether the second number is a rate or a scale.
    """

    theta_m: List[float] = field(default_factory=lambda: [1.5, 2.0])
    theta_b: List[float] = field(default_factory=lambda: [1.5, 5.0])
    g_b: List[float] = field(default_factory=lambda: [1.5, 7.0])
    u_beta: List[float] = field(default_factory=lambda: [2.0, 2.0])
    gamma_form: str = "shape-rate"

    def __post_init__(self):
        if self.gamma_form not in ("shape-rate", "shape-scale"):
            raise ValueError("gamma_form must be 'shape-rate' or 'shape-scale'")

    @classmethod
    def for_problem(cls, name: str) -> "PriorConfig":
        d = PROBLEM_PRIORS.get(name, PROBLEM_PRIORS["sinusoid"])
        return cls(**{k: list(v) for k, v in d.items()})

    def _gamma(self, pair):
        shape, second = pair
        if self.gamma_form == "shape-rate":
            return GammaPrior(shape, second)
        return GammaPrior.from_shape_scale(shape, second)

    def build(self) -> KohPriors:
        return KohPriors(self._gamma(self.theta_m), self._gamma(self.theta_b),
                         self._gamma(self.g_b), BetaPrior(*self.u_beta))


@dataclass
class ExperimentConfig:
    problem: str = "sinusoid"
    strategies: List[str] = field(default_factory=lambda: ["koh-imspe", "lhs", "m-imspe"])
    n_m0: int = 10
    n_m_final: int = 50
    mc_reps: int = 30
    field_design: str = "grid"
    field_n: int = 10
    field_replicates: int = 2
    test_size: int = 100
    test_noiseless: bool = True
    priors: Optional[PriorConfig] = None
    seed: int = 0
    bias_scale: float = 1.0
    output: Optional[str] = None
    n_candidates: Optional[int] = None
    n_starts: int = 5
    fit_starts: int = 5
    refit_starts: int = 2
    warm_start: bool = True
    sx_step: float = 5e-4
    sx_tmax: float = 20.0
    record_wall_time: bool = False

    def __post_init__(self):
        if isinstance(self.priors, dict):
            self.priors = _from_dict(PriorConfig, self.priors)
        if self.priors is None:
            self.priors = PriorConfig.for_problem(self.problem)
        self.strategies = list(self.strategies)
        for s in self.strategies:
            DesignStrategy(s)
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("strategies must be distinct")
        if not self.n_m0 < self.n_m_final:
            raise ValueError("n_m0 must be below n_m_final")
        if self.mc_reps < 1:
            raise ValueError("mc_reps must be >= 1")

    @property
    def n_steps(self) -> int:
        return self.n_m_final - self.n_m0 + 1

    def problem_instance(self) -> Problem:
        kw = {}
        if self.problem == "sx":
            kw = dict(step=self.sx_step, tmax=self.sx_tmax)
        return get_problem(self.problem, bias_scale=self.bias_scale, **kw)

    def field_spec(self) -> FieldSpec:
        return FieldSpec(self.field_design, self.field_n, self.field_replicates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_dict(cls, d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _from_dict(cls, d):
    if not isinstance(d, dict):
        raise TypeError(f"{cls.__name__} expects a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**d)


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRecord:
    strategy: str
    mc_iter: int
    n_m: int
    rmse: float
    u_hat: tuple
    acquisition: tuple
    wall_time: float

    def row(self) -> list:
        return ([self.strategy, self.mc_iter, self.n_m, _fmt(self.rmse)]
                + [_fmt(v) for v in self.u_hat] + [_fmt(v) for v in self.acquisition]
                + [_fmt(self.wall_time)])


def _fmt(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def header(s: int, d: int) -> list:
    return (["strategy", "mc_iter", "n_m", "rmse"] + [f"u_hat_{i + 1}" for i in range(s)]
            + [f"acq_{i + 1}" for i in range(d)] + ["wall_time_s"])


def read_records(path) -> List[ExperimentRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    head = rows[0]
    s = sum(h.startswith("u_hat_") for h in head)
    d = sum(h.startswith("acq_") for h in head)
    out = []
    for r in rows[1:]:
        if len(r) != len(head):
            continue
        vals = [float(v) for v in r[3:]]
        out.append(ExperimentRecord(r[0], int(r[1]), int(r[2]), vals[0], tuple(vals[1:1 + s]),
                                    tuple(vals[1 + s:1 + s + d]), vals[-1]))
    return out


# --------------------------------------------------------------------------
# campaign
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationSetup:
    """Everything strategies share within one MC iteration."""

    field: object
    master: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.field.Xf, self.field.yf, self.master, self.X_test, self.y_test):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _seed(cfg: ExperimentConfig, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, *key])


def iteration_setup(cfg: ExperimentConfig, problem: Problem, mc_iter: int) -> IterationSetup:
    ss_field, ss_master, ss_test = _seed(cfg, mc_iter, 0).spawn(3)
    fld = generate_field(problem, cfg.field_spec(), np.random.default_rng(ss_field))
    master = lhs(cfg.n_m_final, problem.d, np.random.default_rng(ss_master))
    rng_t = np.random.default_rng(ss_test)
    X_test = lhs(cfg.test_size, problem.p, rng_t)
    y_test = problem.field_mean(X_test)
    if not cfg.test_noiseless:
        y_test = y_test + problem.noise_sd * rng_t.standard_normal(y_test.shape)
    return IterationSetup(fld, master, X_test, y_test)


def run_strategy(cfg: ExperimentConfig, problem: Problem, setup: IterationSetup,
                 kind: str, mc_iter: int) -> Iterator[ExperimentRecord]:
    """Sequential design for one strategy; yields a record after every fit."""
    rng = np.random.default_rng(_seed(cfg, mc_iter, 1 + STRATEGIES.index(kind)))
    priors = cfg.priors.build()
    opts = OptimizerSettings(n_candidates=cfg.n_candidates, n_starts=cfg.n_starts)
    strategy = DesignStrategy(kind, opts)
    p, d = problem.p, problem.d
    Z = setup.master[:cfg.n_m0]
    sim = SimData(Z[:, :p], Z[:, p:], problem.simulate_rows(Z))
    first = KohSettings(starts=cfg.fit_starts, warm_start=cfg.warm_start)
    later = KohSettings(starts=cfg.refit_starts if cfg.warm_start else cfg.fit_starts,
                        warm_start=cfg.warm_start)
    t0 = time.perf_counter()
    fit = fit_koh(setup.field, sim, priors, first, seed=rng)
    acq = (float("nan"),) * d
    n_m = cfg.n_m0
    while True:
        mean, _ = predict_field(fit, setup.X_test)
        wall = time.perf_counter() - t0 if cfg.record_wall_time else float("nan")
        yield ExperimentRecord(kind, mc_iter, n_m, rmse(mean, setup.y_test),
                               tuple(fit.u_hat.u_hat), acq, wall)
        if n_m == cfg.n_m_final:
            return
        t0 = time.perf_counter()
        res = acquire_comparator(strategy, fit, seed=rng, pool_row=setup.master[n_m], dim=d)
        if res.fallback:
            log.warning("%s iter %d N_M=%d: every start hit the proximity guard; "
                        "using the best raw candidate", kind, mc_iter, n_m)
        z = res.point
        sim = sim.append(z[:p], z[p:], problem.simulate_rows(z))
        fit = fit_koh(setup.field, sim, priors, later, seed=rng, previous=fit)
        acq = tuple(float(v) for v in z)
        n_m += 1


def _failed(kind, mc_iter, n_from, cfg, s, d):
    nan = float("nan")
    return [ExperimentRecord(kind, mc_iter, n, nan, (nan,) * s, (nan,) * d, nan)
            for n in range(n_from, cfg.n_m_final + 1)]


def run_iteration(cfg: ExperimentConfig, problem: Problem, mc_iter: int
                  ) -> Iterator[ExperimentRecord]:
    setup = iteration_setup(cfg, problem, mc_iter)
    for kind in cfg.strategies:
        n_next = cfg.n_m0
        try:
            for rec in run_strategy(cfg, problem, setup, kind, mc_iter):
                n_next = rec.n_m + 1
                yield rec
        except Exception as exc:  # noqa: BLE001 - one strategy must not sink the others
            log.error("%s iter %d failed at N_M=%d: %s", kind, mc_iter, n_next, exc)
            yield from _failed(kind, mc_iter, n_next, cfg, problem.s, problem.d)


def _complete_iterations(path, cfg, s, d):
    """Rows of fully finished iterations in an existing output file."""
    expected = len(cfg.strategies) * cfg.n_steps
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header(s, d):
        raise ValueError(f"{path} exists with a different header; refusing to resume")
    by_iter = {}
    for r in rows[1:]:
        if len(r) == len(rows[0]):
            by_iter.setdefault(int(r[1]), []).append(r)
    return {k: v for k, v in by_iter.items() if len(v) == expected}


def sidecar_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".json")


def run_campaign(cfg: ExperimentConfig, out_path=None, resume: bool = True
                 ) -> Iterator[ExperimentRecord]:
    """Run (or resume) a campaign, streaming records to ``out_path``.

    On resume, iterations already complete in the file are kept and
    skipped; a partially written iteration is discarded and rerun.
    """
    problem = cfg.problem_instance()
    s, d = problem.s, problem.d
    out_path = out_path or cfg.output
    done = {}
    fh = writer = None
    if out_path is not None:
        out_path = Path(out_path)
        if resume and out_path.exists() and out_path.stat().st_size:
            done = _complete_iterations(out_path, cfg, s, d)
        tmp = out_path.with_name(out_path.name + ".tmp")
        with open(tmp, "w", newline="") as tf:
            w = csv.writer(tf, lineterminator="\n")
            w.writerow(header(s, d))
            for k in sorted(done):
                w.writerows(done[k])
        os.replace(tmp, out_path)
        with open(sidecar_path(out_path), "w") as sf:
            json.dump(cfg.to_dict(), sf, indent=2, sort_keys=True)
            sf.write("\n")
        fh = open(out_path, "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
    try:
        for mc_iter in range(cfg.mc_reps):
            if mc_iter in done:
                continue
            for rec in run_iteration(cfg, problem, mc_iter):
                if writer is not None:
                    writer.writerow(rec.row())
                    fh.flush()
                yield rec
    finally:
        if fh is not None:
            fh.close()


def run_to_file(cfg: ExperimentConfig, out_path, resume: bool = True) -> int:
    n = 0
    for _ in run_campaign(cfg, out_path, resume):
        n += 1
    return n


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

SUMMARY_COLUMNS = ("strategy", "n_m", "count", "failed", "mean_rmse", "q05_rmse", "q95_rmse",
                   "mean_sq_dist")


def _sq_dist(recs, s):
    """Squared distance between each acquired u and the estimate in force
    when it was chosen (the previous record's u_hat)."""
    by_key = {(r.strategy, r.mc_iter, r.n_m): r for r in recs}
    out = {}
    for r in recs:
        prev = by_key.get((r.strategy, r.mc_iter, r.n_m - 1))
        if prev is None or s == 0:
            continue
        u_acq = np.array(r.acquisition[len(r.acquisition) - s:])
        out[(r.strategy, r.mc_iter, r.n_m)] = float(np.sum((u_acq - np.array(prev.u_hat)) ** 2))
    return out


def summarize(records) -> List[dict]:
    """Per (strategy, N_M): mean RMSE, 5%/95% quantiles and mean squared
    distance of acquired u to the current estimate.

    Quantiles are the type-7 (linear interpolation) empirical quantiles.
    Failed records (RMSE ``nan``) are counted, not averaged.
    """
    if isinstance(records, (str, Path)):
        records = read_records(records)
    records = list(records)
    if not records:
        raise ValueError("no records to summarise")
    s = len(records[0].u_hat)
    dist = _sq_dist(records, s)
    groups = {}
    for r in records:
        groups.setdefault((r.strategy, r.n_m), []).append(r)
    out = []
    order = {k: i for i, k in enumerate(dict.fromkeys(r.strategy for r in records))}
    for (kind, n_m) in sorted(groups, key=lambda k: (order[k[0]], k[1])):
        grp = groups[(kind, n_m)]
        vals = np.array([r.rmse for r in grp])
        ok = vals[~np.isnan(vals)]
        ds = [dist[(kind, r.mc_iter, n_m)] for r in grp if (kind, r.mc_iter, n_m) in dist]
        ds = [v for v in ds if not math.isnan(v)]
        nan = float("nan")
        out.append({
            "strategy": kind, "n_m": n_m, "count": len(grp), "failed": int(np.isnan(vals).sum()),
            "mean_rmse": float(ok.mean()) if ok.size else nan,
            "q05_rmse": float(np.quantile(ok, 0.05)) if ok.size else nan,
            "q95_rmse": float(np.quantile(ok, 0.95)) if ok.size else nan,
            "mean_sq_dist": float(np.mean(ds)) if ds else nan,
        })
    return out


def write_summary(rows: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
