"""Seeded replication engine, estimators and goodness-of-fit tests."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .walk import make_rng

REPORT_SCHEMA = "report-v1"
Z_95 = 1.959963984540054
Z_PASS = 3.0
P_PASS = 1e-3


class ReplicationError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        idx = ", ".join(str(i) for i, _ in failures[:10])
        super().__init__(f"{len(failures)} replication(s) failed (indices {idx}): {failures[0][1]!r}")


class InsufficientDataError(ValueError):
    pass


class SparseTableError(ValueError):
    pass


@dataclass
class RunConfig:
    master_seed: int
    sample_count: int
    N: int | Sequence[int] = 64
    a: float = 0.5
    domain: str = "disc"
    estimator: str = ""
    b: float | None = None
    eps: float | None = None
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not 0.0 < self.a < 2.0:
            raise ValueError("a must lie in (0, 2)")
        for n in self.N_list:
            if n < 8:
                raise ValueError("N must be >= 8")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def N_list(self) -> list[int]:
        return [int(self.N)] if np.isscalar(self.N) else [int(n) for n in self.N]


@dataclass
class EstimateReport:
    estimator: str
    n: int
    estimate: float
    stderr: float
    ci_95: tuple
    target: float | None = None
    verdict: str = "informational"
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        """Serializable form; wall time is left out so reports are reproducible."""
        d = asdict(self)
        d.pop("wall_time")
        d["ci_95"] = list(self.ci_95)
        d["schema"] = REPORT_SCHEMA
        return d


def summarize(values, estimator="", target=None, abs_tol=0.0, z=Z_PASS, wall_time=0.0,
              informational=False, extra=None) -> EstimateReport:
    """Mean, standard error, 95% interval and verdict of a sample of statistics."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n == 0:
        raise InsufficientDataError("no values")
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    ci = (mean - Z_95 * se, mean + Z_95 * se)
    verdict = "informational"
    if target is not None and not informational:
        verdict = "pass" if abs(mean - target) <= max(abs_tol, z * se) else "fail"
    return EstimateReport(estimator, n, mean, se, ci, target, verdict, wall_time, dict(extra or {}))


def default_workers() -> int:
    env = os.environ.get("THICKPOINTS_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def replicate(seed: int, n: int, statistic: Callable[[int, np.random.Generator], object],
              workers: int | None = None, offset: int = 0) -> list:
    """Evaluate ``statistic(index, rng)`` for ``n`` replications, in index order.

    Replication ``i`` always receives stream ``offset + i`` of ``seed``, so the
    result does not depend on the number of workers.
    """
    workers = default_workers() if workers is None else max(1, int(workers))

    def one(i):
        idx = offset + i
        try:
            return True, statistic(idx, make_rng(seed, idx))
        except Exception as exc:  # collected and reported together
            return False, (idx, exc)

    if workers == 1:
        results = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n)))
    failures = [r for ok, r in results if not ok]
    if failures:
        raise ReplicationError(failures)
    return [r for _, r in results]


def run_replications(cfg: RunConfig, statistic, workers=None, target=None, abs_tol=0.0,
                     informational=False) -> EstimateReport:
    """Replicate a scalar statistic and summarise it."""
    t0 = time.perf_counter()
    values = replicate(cfg.master_seed, cfg.sample_count, statistic, workers)
    return summarize(values, cfg.estimator, target, abs_tol, wall_time=time.perf_counter() - t0,
                     informational=informational)


def ks_uniform_test(samples) -> tuple[float, float]:
    """One-sample KS statistic against Uniform(0, 1) with its asymptotic p-value."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 5:
        raise InsufficientDataError(f"need at least 5 samples, got {len(x)}")
    res = stats.kstest(x, "uniform", method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_test(samples, cdf) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if len(x) < 5:
        raise InsufficientDataError(f"need at least 5 samples, got {len(x)}")
    res = stats.kstest(x, cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def gamma_tail(k: int, t: float) -> float:
    """``P(Gamma(k, 1) > t)``, the regularized upper incomplete gamma function."""
    if k < 1:
        raise ValueError("shape k must be >= 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(special.gammaincc(k, t))


def chi2_independence_test(table) -> tuple[float, float]:
    """Pearson chi-square test of independence with ``(r-1)(c-1)`` degrees of freedom."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or min(t.shape) < 2:
        raise ValueError("need a two-way table with at least 2 rows and 2 columns")
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()
    if (expected < 5).any():
        raise SparseTableError("expected cell counts below 5; merge bins")
    stat = float(((t - expected) ** 2 / expected).sum())
    dof = (t.shape[0] - 1) * (t.shape[1] - 1)
    return stat, float(stats.chi2.sf(stat, dof))


def chi2_goodness_of_fit(observed, expected_probs, min_expected=5.0) -> tuple[float, float, int]:
    """Pearson goodness of fit after merging adjacent bins with low expectation."""
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    p = p / p.sum()
    exp = p * obs.sum()
    merged_o, merged_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            merged_o.append(acc_o)
            merged_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and merged_e:
        merged_o[-1] += acc_o
        merged_e[-1] += acc_e
    if len(merged_e) < 2:
        raise SparseTableError("too few populated bins")
    o, e = np.array(merged_o), np.array(merged_e)
    stat = float(((o - e) ** 2 / e).sum())
    dof = len(e) - 1
    return stat, float(stats.chi2.sf(stat, dof)), dof


@dataclass
class ConvergenceRow:
    N: int
    report: EstimateReport
    drift: float | None = None


def convergence_table(cfg: RunConfig, statistic_for_N, normalization=lambda N: 1.0,
                      workers=None, limit=None) -> list[ConvergenceRow]:
    """Normalised estimates across ``cfg.N_list`` with the drift between consecutive scales.

    ``statistic_for_N(N)`` returns a replication statistic; every scale uses
    its own block of streams so scales are independent.
    """
    Ns = cfg.N_list
    if len(Ns) < 2:
        raise ValueError("convergence table needs at least two values of N")
    rows = []
    prev = None
    for k, N in enumerate(Ns):
        t0 = time.perf_counter()
        stat = statistic_for_N(N)
        c = normalization(N)
        vals = replicate(cfg.master_seed, cfg.sample_count, lambda i, rng: c * stat(i, rng),
                         workers, offset=k * 10**9)
        rep = summarize(vals, f"{cfg.estimator}@N={N}", limit, wall_time=time.perf_counter() - t0,
                        informational=True)
        drift = None if prev is None else abs(rep.estimate - prev)
        rows.append(ConvergenceRow(N, rep, drift))
        prev = rep.estimate
    return rows


def write_table_csv(path, header, rows):
    """CSV with a header row and reals printed to 17 significant digits."""
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v)).lower()
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.17g}"
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
