"""Transition-matrix recovery with emissions held fixed, and label alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .errors import AmbiguousAlignment, FlatLikelihood
from .hmm_core import (CONTINUOUS, DISCRETE, EmissionModel, HmmParams, StationaryDist,
                       TransitionMatrix, stationary_distribution)
from .smoothing import DENSITY_FLOOR, loglik_two_state_grid

__all__ = ["ByStationaryMass", "ByTailRatio", "AlignmentRule", "RecoveredParams",
           "estimate_transition", "align_labels", "tail_anchor", "fit_params"]

P_LO, P_HI = 1e-4, 1.0 - 1e-4
GRID_SIZE = 32
Q_FLOOR = 1e-6
FLAT_TOL = 1e-10
TIE_TOL = 1e-12


@dataclass(frozen=True)
class ByStationaryMass:
    """Null is the state with the larger stationary mass."""


@dataclass(frozen=True)
class ByTailRatio:
    """Null is decided by the density ratio near the top of ``(-inf, x_star]``."""

    x_star: float = math.inf

    def __post_init__(self):
        if math.isnan(self.x_star) or self.x_star == -math.inf:
            raise ValueError("x_star must be finite or +inf")


AlignmentRule = Union[ByStationaryMass, ByTailRatio]


@dataclass(frozen=True)
class RecoveredParams:
    Q_hat: TransitionMatrix
    pi_hat: StationaryDist
    permutation: tuple[int, ...]
    loglik: float

    def to_params(self, emissions: Sequence[EmissionModel]) -> HmmParams:
        emissions = tuple(emissions)
        measure = DISCRETE if all(f.discrete for f in emissions) else CONTINUOUS
        return HmmParams(self.Q_hat, self.pi_hat, emissions, measure)

    def permuted(self, perm: Sequence[int]) -> "RecoveredParams":
        perm = tuple(int(k) for k in perm)
        Q = self.Q_hat.permuted(perm)
        return RecoveredParams(Q, StationaryDist(self.pi_hat.probs[list(perm)]),
                               tuple(self.permutation[k] for k in perm), self.loglik)


def _two_state(p: float, q: float) -> tuple[TransitionMatrix, StationaryDist]:
    p, q = max(p, Q_FLOOR), max(q, Q_FLOOR)
    p, q = min(p, 1 - Q_FLOOR), min(q, 1 - Q_FLOOR)
    Q = TransitionMatrix.two_state(p, q)
    return Q, stationary_distribution(Q)


def estimate_transition(X, emissions: Sequence[EmissionModel],
                        floor: float = DENSITY_FLOOR) -> RecoveredParams:
    """Maximum-likelihood ``(p, q) = (Q01, Q10)`` with the emissions held fixed.

    A 32x32 grid on ``[1e-4, 1 - 1e-4]^2`` locates the basin, Nelder-Mead
    polishes it. The chain starts from its stationary law.
    """
    if len(emissions) != 2:
        raise ValueError("transition recovery is implemented for two states")
    X = np.asarray(X, dtype=float)
    lik = np.column_stack([np.maximum(np.asarray(f.pdf(X), dtype=float), floor) for f in emissions])
    lik = np.ascontiguousarray(lik)

    axis = np.linspace(P_LO, P_HI, GRID_SIZE)
    pg, qg = np.meshgrid(axis, axis, indexing="ij")
    ll = loglik_two_state_grid(lik, pg.ravel(), qg.ravel()).reshape(pg.shape)
    finite = ll[np.isfinite(ll)]
    scale = max(1.0, float(np.max(np.abs(finite)))) if finite.size else 1.0
    # Curvature proxy: total variation of the grid surface relative to its size.
    if finite.size == 0 or float(np.ptp(finite)) <= FLAT_TOL * scale:
        raise FlatLikelihood("likelihood does not depend on the transition matrix")

    g = int(np.argmax(np.where(np.isfinite(ll), ll, -np.inf)))
    x0 = np.array([pg.ravel()[g], qg.ravel()[g]])

    def negll(z):
        z = np.clip(z, P_LO, P_HI)
        return -float(loglik_two_state_grid(lik, z[:1].copy(), z[1:].copy())[0])

    res = minimize(negll, x0, method="Nelder-Mead", bounds=[(P_LO, P_HI)] * 2,
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    z = res.x if res.fun <= negll(x0) else x0
    p, q = (float(v) for v in np.clip(z, P_LO, P_HI))
    Q, pi = _two_state(p, q)
    return RecoveredParams(Q, pi, (0, 1), -negll(np.array([p, q])))


def tail_anchor(X, x_star: float = math.inf) -> float:
    """``M_N``: the maximum of ``X_i [X_i <= x_star]`` over the first ``ceil(ln N)`` points."""
    X = np.asarray(X, dtype=float)
    n = max(1, math.ceil(math.log(X.size))) if X.size > 1 else 1
    head = X[:n]
    return float(np.max(np.where(head <= x_star, head, 0.0)))


def _as_swap(flag: bool) -> tuple[int, int]:
    return (1, 0) if flag else (0, 1)


def align_labels(densities, params: RecoveredParams,
                 rule: AlignmentRule, X=None) -> tuple[int, int]:
    """Permutation ``perm`` with ``perm[0]`` the estimated null label.

    ``densities`` is a ``SpectralFit`` or a sequence of two emission models.

    Apply it with ``HmmParams.permuted(perm)``: new state ``j`` is old state
    ``perm[j]``.
    """
    densities = getattr(densities, "densities", densities)
    if len(densities) != 2:
        raise ValueError("alignment is implemented for two states")
    if isinstance(rule, ByStationaryMass):
        pi0, pi1 = params.pi_hat.probs
        if abs(pi1 - pi0) < TIE_TOL:
            raise AmbiguousAlignment("estimated stationary masses coincide")
        return _as_swap(pi1 > pi0)
    if isinstance(rule, ByTailRatio):
        if X is None:
            raise ValueError("tail-ratio alignment needs the observations")
        m = tail_anchor(X, rule.x_star)
        f0 = float(densities[0].pdf(m))
        f1 = float(densities[1].pdf(m))
        if abs(f0 - f1) < TIE_TOL:
            raise AmbiguousAlignment(f"estimated densities tie at the anchor {m}")
        # The alternative dominates near the top of the range; null is the smaller density.
        return _as_swap(f0 > f1)
    raise TypeError(f"unknown alignment rule {rule!r}")


def fit_params(X, densities: Sequence[EmissionModel], rule: AlignmentRule) -> HmmParams:
    """Recover ``(Q, pi)``, align labels and return the estimated model."""
    rec = estimate_transition(X, densities)
    perm = align_labels(densities, rec, rule, X)
    return rec.to_params(densities).permuted(perm)
