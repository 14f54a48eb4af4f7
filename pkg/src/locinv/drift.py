"""Drift detection over multi-context count data with log-likelihood-ratio
tests, a Hochberg step-up correction and an aggregate N_sigma test."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Sequence

import numpy as np

_EPS = 1e-16
_MAX_ITER = 10_000


@dataclass(frozen=True)
class ContextCounts:
    """Counts x[q, s, m] of outcome m for circuit q in context s."""

    x: np.ndarray
    circuits: tuple[str, ...] = ()
    contexts: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.ndim != 3:
            raise ValueError("counts must have shape (circuits, contexts, outcomes)")
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.equal(np.mod(x, 1), 0)):
                raise ValueError("counts must be integers")
            x = x.astype(np.int64)
        if np.any(x < 0):
            raise ValueError("counts must be nonnegative")
        q, s, m = x.shape
        if m < 2:
            raise ValueError("need at least two outcomes")
        if s < 1:
            raise ValueError("need at least one context")
        circuits = tuple(self.circuits) or tuple(str(k) for k in range(q))
        contexts = tuple(self.contexts) or tuple(str(k) for k in range(s))
        if len(circuits) != q or len(contexts) != s:
            raise ValueError("id lists do not match the counts shape")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "circuits", circuits)
        object.__setattr__(self, "contexts", contexts)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.x.shape

    @property
    def n_qs(self) -> np.ndarray:
        return self.x.sum(axis=2)

    @property
    def n_q(self) -> np.ndarray:
        return self.x.sum(axis=(1, 2))

    def select(self, contexts: Sequence[int]) -> "ContextCounts":
        idx = list(contexts)
        return ContextCounts(self.x[:, idx, :], self.circuits, tuple(self.contexts[k] for k in idx))


def _xlogy(x: np.ndarray, n: np.ndarray) -> np.ndarray:
    """x log(x / n) with 0 log 0 = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe / n), 0.0)


def llr(x: np.ndarray) -> np.ndarray | float:
    """LLR statistic for counts of shape (..., S, M); S >= 2."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ValueError("llr needs at least two contexts")
    n_s = x.sum(axis=-1, keepdims=True)
    if np.any(n_s == 0):
        raise ValueError("a context has no counts")
    pooled = x.sum(axis=-2)
    n = pooled.sum(axis=-1, keepdims=True)
    lam = -2.0 * (_xlogy(pooled, n).sum(axis=-1) - _xlogy(x, n_s).sum(axis=(-2, -1)))
    lam = np.where(lam < 0, 0.0, lam)
    return float(lam) if lam.ndim == 0 else lam


def _gamma_p_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return _gamma_q_fraction(a, x)


def pvalue(lam: float, k: int) -> float:
    """1 - F_k(lam) for the chi-squared distribution with k degrees of freedom."""
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if lam < 0:
        raise ValueError("statistic must be nonnegative")
    return gamma_q(k / 2.0, lam / 2.0)


def chi2_cdf(x: float, k: int) -> float:
    return 1.0 - pvalue(x, k) if x > 0 else 0.0


@lru_cache(maxsize=None)
def chi2_quantile(prob: float, k: int) -> float:
    """Inverse chi-squared CDF by bisection on [0, k + 40 sqrt(2k)]."""
    if not 0.0 < prob < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    lo, hi = 0.0, k + 40.0 * math.sqrt(2.0 * k)
    target = 1.0 - prob
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if pvalue(mid, k) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def hochberg(pvalues: Sequence[float], alpha: float) -> tuple[frozenset[int], float]:
    """Hochberg step-up procedure; returns (rejected indices, p threshold).

    r_max is the largest rank r with p_(r) <= alpha / (Q - r + 1); circuits
    with p strictly below alpha / (Q - r_max + 1) are rejected.
    """
    p = np.asarray(pvalues, dtype=float)
    q = p.size
    if q < 1:
        raise ValueError("need at least one p-value")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    ordered = np.sort(p)
    r_max = 0
    for r in range(q, 0, -1):
        if ordered[r - 1] <= alpha / (q - r + 1):
            r_max = r
            break
    threshold = alpha / (q - r_max + 1)
    if r_max == 0:
        return frozenset(), threshold
    return frozenset(int(k) for k in np.flatnonzero(p < threshold)), threshold


def aggregate(lams: Sequence[float], S: int, M: int) -> tuple[float, int, float]:
    """(lambda_agg, k_agg, N_sigma) for Q per-circuit statistics."""
    lam_agg = float(np.sum(lams))
    k_agg = len(lams) * (S - 1) * (M - 1)
    if k_agg < 1:
        raise ValueError("aggregate test needs S >= 2 and M >= 2")
    return lam_agg, k_agg, (lam_agg - k_agg) / math.sqrt(2.0 * k_agg)


def n_sigma_threshold(alpha: float, k_agg: int) -> float:
    return (chi2_quantile(1.0 - alpha, k_agg) - k_agg) / math.sqrt(2.0 * k_agg)


@dataclass(frozen=True)
class Comparison:
    """One aggregate-then-ICT test over a set of contexts."""

    contexts: tuple[int, ...]
    alpha: float
    lam: np.ndarray
    pvalues: np.ndarray
    lam_agg: float
    k_agg: int
    n_sigma: float
    n_sigma_threshold: float
    beta: float
    p_threshold: float
    rejected: frozenset[int]

    @property
    def detected(self) -> bool:
        return self.n_sigma > self.n_sigma_threshold or bool(self.rejected)


def compare(counts: ContextCounts, contexts: Sequence[int], alpha: float) -> Comparison:
    """Aggregate test at alpha/2, then Hochberg ICTs at beta (alpha or alpha/2)."""
    sub = counts.select(contexts)
    _, S, M = sub.shape
    lam = np.atleast_1d(llr(sub.x))
    k = (S - 1) * (M - 1)
    pv = np.array([pvalue(float(v), k) for v in lam])
    lam_agg, k_agg, ns = aggregate(lam, S, M)
    thr = n_sigma_threshold(alpha / 2, k_agg)
    beta = alpha if ns > thr else alpha / 2
    rejected, p_thr = hochberg(pv, beta)
    return Comparison(tuple(contexts), alpha, lam, pv, lam_agg, k_agg, ns, thr, beta, p_thr, rejected)


@dataclass(frozen=True)
class DriftReport:
    counts: ContextCounts
    alpha: float
    joint: Comparison
    pairs: dict[tuple[int, int], Comparison]

    @property
    def comparison_alpha(self) -> float:
        return self.joint.alpha

    @property
    def detected(self) -> bool:
        return self.joint.detected or any(c.detected for c in self.pairs.values())

    def pairwise_matrix(self) -> np.ndarray:
        """Upper triangle N_sigma, lower triangle number of rejected circuits."""
        S = self.counts.shape[1]
        out = np.full((S, S), np.nan)
        for (a, b), c in self.pairs.items():
            out[a, b] = c.n_sigma
            out[b, a] = len(c.rejected)
        return out

    def to_json(self) -> dict:
        j = self.joint
        ids = self.counts.circuits
        return {
            "alpha": self.alpha,
            "comparison_alpha": j.alpha,
            "comparisons": round(self.alpha / j.alpha),
            "detected": self.detected,
            "joint": {
                "lambda_agg": j.lam_agg, "k_agg": j.k_agg,
                "n_sigma": j.n_sigma, "n_sigma_threshold": j.n_sigma_threshold,
                "beta": j.beta, "p_threshold": j.p_threshold,
                "rejected": [ids[k] for k in sorted(j.rejected)],
            },
            "circuits": [{"id": ids[k], "lambda": float(j.lam[k]), "p": float(j.pvalues[k])}
                         for k in range(len(ids))],
            "pairs": [{"contexts": [self.counts.contexts[a], self.counts.contexts[b]],
                       "n_sigma": c.n_sigma, "n_sigma_threshold": c.n_sigma_threshold,
                       "rejected": [ids[k] for k in sorted(c.rejected)]}
                      for (a, b), c in sorted(self.pairs.items())],
        }

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["context", *self.counts.contexts])
        for a, (name, row) in enumerate(zip(self.counts.contexts, self.pairwise_matrix())):
            cells = []
            for b, v in enumerate(row):
                if np.isnan(v):
                    cells.append("")
                else:
                    cells.append(repr(float(v)) if b > a else str(int(v)))
            w.writerow([name, *cells])
        return buf.getvalue()


def two_step(counts: ContextCounts, alpha: float = 0.05,
             comparisons: int | None = None) -> DriftReport:
    """Joint test over all contexts plus every pairwise comparison.

    With S > 2 contexts alpha is split evenly over the C(S,2) + 1
    comparisons (``comparisons`` overrides that divisor); with S = 2 the only
    pair is the joint test itself.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    S = counts.shape[1]
    if S < 2:
        raise ValueError("drift testing needs at least two contexts")
    if S == 2:
        joint = compare(counts, (0, 1), alpha)
        return DriftReport(counts, alpha, joint, {(0, 1): joint})
    pairs = list(combinations(range(S), 2))
    if comparisons is None:
        comparisons = len(pairs) + 1
    elif comparisons < 1:
        raise ValueError("comparisons must be >= 1")
    a_c = alpha / comparisons
    joint = compare(counts, tuple(range(S)), a_c)
    return DriftReport(counts, alpha, joint, {p: compare(counts, p, a_c) for p in pairs})
