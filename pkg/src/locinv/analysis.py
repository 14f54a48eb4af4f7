"""Layer sensitivity scores: TVD profiles, Pearson correlation, bootstrap
error bars and the quasi-Fisher information matrix."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit, InversionSpec, TwirlConfig, attach_twirl, build_inverted
from .sim import ProbDist, sample, simulate
from .superop import ErrorModel

QFIM_FLOOR = 1e-12
PSEUDO_COUNT = 0.5


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, ProbDist) else np.asarray(p, dtype=float)


def tvd(p, q) -> float:
    """Half the L1 distance between two distributions on the same outcomes."""
    a, b = _probs(p), _probs(q)
    if a.shape != b.shape:
        raise ValueError(f"outcome spaces differ: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for a zero-variance input")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class Qfim:
    matrix: np.ndarray
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns, matching eigenvalues

    @property
    def top_eigenvector(self) -> np.ndarray:
        return self.eigenvectors[:, 0]

    @property
    def dominant_layer(self) -> int:
        """1-based layer with the largest |component| of the top eigenvector."""
        return int(np.argmax(np.abs(self.top_eigenvector))) + 1

    def to_json(self) -> dict:
        return {"eigenvalues": [float(v) for v in self.eigenvalues],
                "top_eigenvector": [float(v) for v in self.top_eigenvector]}


def _log_ratios(baseline: np.ndarray, inverted: Sequence[np.ndarray]) -> np.ndarray:
    base = np.asarray(baseline, dtype=float)
    rows = []
    for p in inverted:
        p = np.asarray(p, dtype=float)
        if p.shape != base.shape:
            raise ValueError("qfim inputs must share one outcome space")
        rows.append(np.log(p) - np.log(base))
    return np.array(rows).reshape(len(rows), base.size)


def _qfim_from_probs(base: np.ndarray, inverted: Sequence[np.ndarray]) -> Qfim:
    g = _log_ratios(base, inverted)
    f = (g * base) @ g.T
    f = 0.5 * (f + f.T)
    w, v = np.linalg.eigh(f)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    # fix the sign so the largest component is positive
    for k in range(v.shape[1]):
        j = np.argmax(np.abs(v[:, k]))
        if v[j, k] < 0:
            v[:, k] = -v[:, k]
    return Qfim(f, w, v)


def qfim(baseline, inverted: Sequence) -> Qfim:
    """qFIM from exact distributions, with probabilities floored at 1e-12."""
    base = np.maximum(_probs(baseline), QFIM_FLOOR)
    return _qfim_from_probs(base / base.sum(),
                            [np.maximum(_probs(p), QFIM_FLOOR) / np.maximum(_probs(p), QFIM_FLOOR).sum()
                             for p in inverted])


def qfim_from_counts(baseline: Sequence[int], inverted: Sequence[Sequence[int]]) -> Qfim:
    """qFIM from counts, adding half a pseudo-count to every outcome."""
    def smooth(c):
        c = np.asarray(c, dtype=float) + PSEUDO_COUNT
        return c / c.sum()
    return _qfim_from_probs(smooth(baseline), [smooth(c) for c in inverted])


def bootstrap_std(baseline: Sequence[int], inverted: Sequence[Sequence[int]],
                  B: int = 1000, seed: int = 0) -> np.ndarray:
    """Per-layer sample std of eta over B non-parametric resamples.

    Each circuit's outcome multiset is resampled independently; replicate
    streams are seeded from (seed, circuit index) with the baseline at 0.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    counts = [np.asarray(baseline, dtype=np.int64)] + [np.asarray(c, dtype=np.int64) for c in inverted]
    draws = []
    for idx, c in enumerate(counts):
        total = int(c.sum())
        if total < 1:
            raise ValueError("every circuit needs at least one shot")
        rng = np.random.default_rng([seed, idx])
        draws.append(rng.multinomial(total, c / total, size=B) / total)
    base = draws[0]
    etas = np.array([0.5 * np.abs(d - base).sum(axis=1) for d in draws[1:]])
    return etas.std(axis=1, ddof=1)


@dataclass(frozen=True)
class SensitivityReport:
    eta: np.ndarray
    std: np.ndarray | None = None
    eta_ideal: np.ndarray | None = None
    m: int = 1
    twirl: TwirlConfig | None = None
    shots: int | None = None
    qfim: Qfim | None = None
    baseline: np.ndarray | None = field(default=None, repr=False)
    inverted: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def depth(self) -> int:
        return len(self.eta)

    @property
    def dominant_layer(self) -> int:
        return int(np.argmax(self.eta)) + 1

    @property
    def pearson(self) -> float | None:
        if self.eta_ideal is None:
            return None
        try:
            return pearson(self.eta, self.eta_ideal)
        except ValueError:
            return None

    def to_json(self) -> dict:
        layers = []
        for k, e in enumerate(self.eta):
            layers.append({
                "i": k + 1,
                "eta": float(e),
                "std": float(self.std[k]) if self.std is not None else 0.0,
                "eta_ideal": float(self.eta_ideal[k]) if self.eta_ideal is not None else None,
            })
        return {
            "layers": layers,
            "pearson": self.pearson,
            "qfim": self.qfim.to_json() if self.qfim is not None else None,
            "m": self.m,
            "twirl": None if self.twirl is None else
                {"instances": self.twirl.instances, "seed": self.twirl.seed},
            "shots": self.shots,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "eta", "std", "eta_ideal"])
        for row in self.to_json()["layers"]:
            w.writerow([row["i"], repr(row["eta"]), repr(row["std"]),
                        "" if row["eta_ideal"] is None else repr(row["eta_ideal"])])
        return buf.getvalue()


def inverted_circuits(circuit: Circuit, i: int, m: int = 1,
                      twirl: TwirlConfig | None = None) -> list[Circuit]:
    """C^(i), or its R twirled instances. Virtual targets are never twirled."""
    spec = InversionSpec(i, m, twirl)
    inv = build_inverted(circuit, spec)
    if twirl is None or circuit.layers[i - 1].is_virtual:
        return [inv]
    return attach_twirl(inv, spec)


def inverted_distribution(circuit: Circuit, model: ErrorModel, i: int, m: int = 1,
                          twirl: TwirlConfig | None = None) -> ProbDist:
    """Exact output of C^(i), averaged over twirl instances when twirl is on."""
    variants = inverted_circuits(circuit, i, m, twirl)
    total = np.zeros(2**circuit.n)
    for c in variants:
        total += simulate(c, model).probs
    return ProbDist(circuit.n, total / len(variants))


def ideal_profile(circuit: Circuit, model: ErrorModel, baseline=None) -> np.ndarray:
    """eta^(i,ideal): TVD between the noisy baseline and the i-ideal circuit."""
    base = simulate(circuit, model) if baseline is None else baseline
    src = circuit.tagged()
    return np.array([tvd(base, simulate(src, model, overrides=(i,)))
                     for i in range(1, circuit.depth + 1)])


def profile(circuit: Circuit, model: ErrorModel, m: int = 1, twirl: TwirlConfig | None = None,
            shots: int | None = None, seed: int = 0, bootstrap: int = 0,
            with_ideal: bool = True, with_qfim: bool = False) -> SensitivityReport:
    """Per-layer eta^(i) for every layer of ``circuit``.

    Exact mode (``shots`` None) uses the simulated distributions directly. In
    shots mode each circuit is sampled ``shots`` times from its (twirl-averaged)
    distribution with the stream seeded by (seed, circuit index), and
    ``bootstrap`` > 1 adds error bars.
    """
    d = circuit.depth
    base = simulate(circuit, model)
    dists = [inverted_distribution(circuit, model, i, m, twirl) for i in range(1, d + 1)]
    eta_ideal = ideal_profile(circuit, model, base) if with_ideal else None
    std = None
    if shots is None:
        base_p = base.probs
        inv_p = tuple(p.probs for p in dists)
        eta = np.array([tvd(base_p, p) for p in inv_p])
        q = qfim(base_p, inv_p) if with_qfim else None
    else:
        base_c = sample(base, shots, np.random.default_rng([seed, 0]))
        inv_c = [sample(p, shots, np.random.default_rng([seed, i])) for i, p in enumerate(dists, start=1)]
        base_p = base_c / shots
        inv_p = tuple(c / shots for c in inv_c)
        eta = np.array([tvd(base_p, p) for p in inv_p])
        if bootstrap:
            std = bootstrap_std(base_c, inv_c, bootstrap, seed)
        q = qfim_from_counts(base_c, inv_c) if with_qfim else None
    return SensitivityReport(eta, std, eta_ideal, m, twirl, shots, q, base_p, inv_p)
