"""Posterior state probabilities (l-values) by scaled forward-backward."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateLikelihood, IndexOutOfWindow
from .hmm_core import HmmParams

__all__ = ["LValueVector", "FilterState", "l_values", "posterior_marginals",
           "forward_loglik", "windowed_l_value", "filter_step", "forward_filter",
           "DENSITY_FLOOR"]

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LValueVector:
    values: np.ndarray
    params_tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v < 0) or np.any(v > 1):
            raise ValueError("l-values must be a vector in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@numba.njit(cache=True)
def _forward_backward(lik, Q, pi):
    N, J = lik.shape
    alpha = np.empty((N, J))
    c = np.empty(N)
    s = 0.0
    for j in range(J):
        alpha[0, j] = pi[j] * lik[0, j]
        s += alpha[0, j]
    c[0] = s
    if s <= 0.0:
        return alpha, c, 0
    for j in range(J):
        alpha[0, j] /= s
    for n in range(1, N):
        s = 0.0
        for k in range(J):
            acc = 0.0
            for j in range(J):
                acc += alpha[n - 1, j] * Q[j, k]
            alpha[n, k] = acc * lik[n, k]
            s += alpha[n, k]
        c[n] = s
        if s <= 0.0:
            return alpha, c, n
        for k in range(J):
            alpha[n, k] /= s
    beta = np.ones(J)
    post = alpha  # overwritten in place from the end
    tmp = np.empty(J)
    for n in range(N - 2, -1, -1):
        for j in range(J):
            acc = 0.0
            for k in range(J):
                acc += Q[j, k] * lik[n + 1, k] * beta[k]
            tmp[j] = acc / c[n + 1]
        for j in range(J):
            beta[j] = tmp[j]
        t = 0.0
        for j in range(J):
            post[n, j] = alpha[n, j] * beta[j]
            t += post[n, j]
        for j in range(J):
            post[n, j] /= t
    return post, c, -1


@numba.njit(cache=True)
def _loglik(lik, Q, pi):
    N, J = lik.shape
    a = np.empty(J)
    b = np.empty(J)
    total = 0.0
    s = 0.0
    for j in range(J):
        a[j] = pi[j] * lik[0, j]
        s += a[j]
    if s <= 0.0:
        return -np.inf
    total += np.log(s)
    for j in range(J):
        a[j] /= s
    for n in range(1, N):
        s = 0.0
        for k in range(J):
            acc = 0.0
            for j in range(J):
                acc += a[j] * Q[j, k]
            b[k] = acc * lik[n, k]
            s += b[k]
        if s <= 0.0:
            return -np.inf
        total += np.log(s)
        for k in range(J):
            a[k] = b[k] / s
    return total


@numba.njit(cache=True)
def loglik_two_state_grid(lik, ps, qs):
    """Log-likelihood for every ``(p, q)`` pair, stationary start."""
    out = np.empty(ps.shape[0])
    Q = np.empty((2, 2))
    pi = np.empty(2)
    for g in range(ps.shape[0]):
        p, q = ps[g], qs[g]
        Q[0, 0] = 1 - p
        Q[0, 1] = p
        Q[1, 0] = q
        Q[1, 1] = 1 - q
        pi[0] = q / (p + q)
        pi[1] = p / (p + q)
        out[g] = _loglik(lik, Q, pi)
    return out


def _lik(X, H: HmmParams, floor: float):
    return np.ascontiguousarray(H.likelihoods(X, floor))


def posterior_marginals(X, H: HmmParams, floor: float = DENSITY_FLOOR) -> np.ndarray:
    """``(N, J)`` matrix of ``P_H(theta_i = j | X_1..X_N)``."""
    lik = _lik(X, H, floor)
    post, _, bad = _forward_backward(lik, np.ascontiguousarray(H.Q.entries), H.pi.probs.copy())
    if bad >= 0:
        raise DegenerateLikelihood(f"all states have zero likelihood at position {bad}")
    return np.clip(post, 0.0, 1.0)


def l_values(X, H: HmmParams, floor: float = DENSITY_FLOOR) -> LValueVector:
    """l-values ``P_H(theta_i = 0 | X)`` for every position."""
    return LValueVector(posterior_marginals(X, H, floor)[:, 0], H.tag())


def forward_loglik(X, H: HmmParams, floor: float = DENSITY_FLOOR) -> float:
    return float(_loglik(_lik(X, H, floor), np.ascontiguousarray(H.Q.entries), H.pi.probs.copy()))


def windowed_l_value(X, H: HmmParams, i: int, A: int, floor: float = DENSITY_FLOOR) -> float:
    """``P_H(theta_i = 0 | X_{i-A..i+A})`` with a stationary start at ``i - A``.

    ``i`` is 0-based and must satisfy ``A <= i < N - A``.
    """
    X = np.asarray(X, dtype=float)
    if A < 0 or i - A < 0 or i + A >= X.size:
        raise IndexOutOfWindow(f"window [{i - A}, {i + A}] leaves [0, {X.size - 1}]")
    return float(posterior_marginals(X[i - A:i + A + 1], H, floor)[A, 0])


@dataclass(frozen=True)
class FilterState:
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("filter state must lie in [0, 1]")


def _ratio(f0: float, f1: float) -> float:
    # Conventions 1/0 = inf and 0/0 = 0.
    if f0 == 0.0:
        return np.inf if f1 > 0.0 else 0.0
    return f1 / f0


def filter_step(state: FilterState, x: float, H: HmmParams) -> FilterState:
    """One step of the two-state filter ``P(theta_i = 0 | X_{<= i})``."""
    if H.J != 2:
        raise ValueError("the closed-form filter is for two-state models")
    p, q = H.Q.entries[0, 1], H.Q.entries[1, 0]
    a = (1 - p) * state.phi + q * (1 - state.phi)
    r = _ratio(float(H.emissions[0].pdf(x)), float(H.emissions[1].pdf(x)))
    if np.isinf(r):
        return FilterState(0.0 if a < 1 else 1.0)
    denom = a + r * (1 - a)
    return FilterState(min(max(a / denom, 0.0), 1.0) if denom > 0 else a)


def forward_filter(X, H: HmmParams) -> np.ndarray:
    """Filter sequence ``P(theta_i = 0 | X_1..X_i)``.

    The recursion starts from ``phi_0 = pi_0``, which the prediction step maps
    to itself, so the first update is plain Bayes under the stationary prior.
    """
    state = FilterState(float(H.pi[0]))
    out = np.empty(len(X))
    for n, x in enumerate(np.asarray(X, dtype=float)):
        state = filter_step(state, x, H)
        out[n] = state.phi
    return out
