"""l-value thresholding procedures and false/true discovery functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

__all__ = ["PLUS_INF", "TestingOutcome", "ErrorReport", "threshold_procedure", "post_fdr",
           "select_k_hat", "procedure_hat", "error_report", "marginal_rates"]


class _PlusInfinity:
    """Threshold above every l-value (``K_hat = N``); not a float."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "PLUS_INF"

    def __float__(self):
        return float("inf")

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("PLUS_INF")

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __reduce__(self):
        return (_PlusInfinity, ())


PLUS_INF = _PlusInfinity()


def _values(lv) -> np.ndarray:
    return np.asarray(getattr(lv, "values", lv), dtype=float)


@dataclass(frozen=True)
class TestingOutcome:
    K_hat: int
    lambda_hat: object          # float or PLUS_INF
    rejections: np.ndarray      # boolean vector
    post_fdr: float
    level_t: float

    __test__ = False  # not a pytest class

    @property
    def rejected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.rejections)


@dataclass(frozen=True)
class ErrorReport:
    fdp: float
    tdp: float
    n_rejected: int
    n_signals: int
    n_false: int

    @property
    def n_true(self) -> int:
        return self.n_rejected - self.n_false


def threshold_procedure(lv, lam) -> np.ndarray:
    """``phi_i = [l_i < lambda]``."""
    v = _values(lv)
    if lam is PLUS_INF:
        return np.ones(v.size, dtype=bool)
    return v < float(lam)


def post_fdr(lv, phi) -> float:
    """Average of the selected l-values (0 when nothing is selected)."""
    v = _values(lv)
    phi = np.asarray(phi, dtype=bool)
    if v.shape != phi.shape:
        raise ValueError("l-values and decisions must have equal length")
    k = int(phi.sum())
    return float(v[phi].sum() / max(1, k))


def _k_hat(sorted_vals: np.ndarray, t: float) -> int:
    n = sorted_vals.size
    k = np.arange(1, n + 1)
    means = np.cumsum(sorted_vals) / k
    # Rounding bound on a float cumulative mean.
    scale = max(1.0, float(np.max(np.abs(sorted_vals)))) if n else 1.0
    tol = (2.0 * k + 4.0) * np.finfo(float).eps * scale
    sure_ok = means <= t - tol
    sure_bad = means > t + tol
    # Exact cumulative means are nondecreasing, so the admissible K form a prefix.
    lo = int(np.nonzero(sure_ok)[0][-1]) + 1 if sure_ok.any() else 0
    hi = int(np.argmax(sure_bad)) if sure_bad.any() else n
    if lo == hi:
        return lo
    # Near-ties with t: decide in exact rationals.
    tq = Fraction(t)
    acc = sum((Fraction(float(v)) for v in sorted_vals[:lo]), Fraction(0))
    K = lo
    for j in range(lo, hi):
        acc += Fraction(float(sorted_vals[j]))
        if acc > tq * (j + 1):
            break
        K = j + 1
    return K


def select_k_hat(lv, t: float):
    """``(K_hat, lambda_hat)``: largest K whose K smallest l-values average at most t."""
    if not 0 < t < 1:
        raise ValueError("level t must lie in (0, 1)")
    srt = np.sort(_values(lv), kind="stable")
    K = _k_hat(srt, t)
    lam = PLUS_INF if K == srt.size else float(srt[K])
    return K, lam


def procedure_hat(lv, t: float) -> TestingOutcome:
    """Reject the ``K_hat`` smallest l-values, ties broken by lowest index."""
    v = _values(lv)
    order = np.argsort(v, kind="stable")
    srt = v[order]
    K, lam = select_k_hat(srt, t)
    rej = np.zeros(v.size, dtype=bool)
    rej[order[:K]] = True
    # The exact mean is <= t; drop a last-ulp excess from the division.
    pf = min(math.fsum(srt[:K]) / K, t) if K else 0.0
    return TestingOutcome(K, lam, rej, pf, t)


def error_report(theta, phi) -> ErrorReport:
    theta = np.asarray(theta)
    phi = np.asarray(phi, dtype=bool)
    if theta.shape != phi.shape:
        raise ValueError("states and decisions must have equal length")
    null = theta == 0
    n_rej = int(phi.sum())
    n_false = int((phi & null).sum())
    n_sig = int((~null).sum())
    n_true = n_rej - n_false
    return ErrorReport(n_false / max(1, n_rej), n_true / max(1, n_sig), n_rej, n_sig, n_false)


def marginal_rates(replicates: Iterable) -> tuple[float, float]:
    """Ratio-of-means ``(mFDR_hat, mTDR_hat)`` over ``(theta, phi)`` pairs or ErrorReports."""
    n_false = n_rej = n_true = n_sig = 0
    count = 0
    for rep in replicates:
        r = rep if isinstance(rep, ErrorReport) else error_report(*rep)
        n_false += r.n_false
        n_rej += r.n_rejected
        n_true += r.n_true
        n_sig += r.n_signals
        count += 1
    if count == 0:
        raise ValueError("need at least one replicate")
    mfdr = n_false / n_rej if n_rej else 0.0
    mtdr = n_true / n_sig if n_sig else 0.0
    return mfdr, mtdr
