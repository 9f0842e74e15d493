"""Hidden Markov model types, emission densities and seeded simulation.

The model is a stationary Markov chain ``theta`` on ``{0, ..., J-1}`` with
transition matrix ``Q`` and invariant law ``pi``; given ``theta`` the
observations ``X_n`` are independent with density ``f_{theta_n}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numba
import numpy as np
from scipy import stats

from .errors import NonIrreducible

__all__ = [
    "TransitionMatrix", "StationaryDist", "EmissionModel", "Gaussian", "Cauchy",
    "Beta", "Uniform", "DiscretePmf", "GridDensity", "HmmParams", "SampledPath",
    "stationary_distribution", "density_at", "marginal_density", "simulate",
    "make_rng", "emission_from_dict", "register_emission", "CONTINUOUS", "DISCRETE",
]

CONTINUOUS = "continuous"
DISCRETE = "discrete"


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator for ``(seed, *stream)``.

    The stream key is mixed by ``SeedSequence`` so that replicate ``r`` of a
    campaign with master seed ``s`` uses ``make_rng(s, N, r)`` and never
    overlaps another replicate, independently of execution order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Markov chain parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionMatrix:
    entries: np.ndarray

    def __post_init__(self):
        Q = np.array(self.entries, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 2:
            raise ValueError(f"transition matrix must be J x J with J >= 2, got {Q.shape}")
        if np.any(Q < 0):
            raise ValueError("transition matrix has negative entries")
        if np.max(np.abs(Q.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition matrix rows must sum to 1")
        Q.setflags(write=False)
        object.__setattr__(self, "entries", Q)

    @classmethod
    def two_state(cls, p: float, q: float) -> "TransitionMatrix":
        """``p = Q[0, 1]`` (leave null), ``q = Q[1, 0]`` (return to null)."""
        return cls(np.array([[1.0 - p, p], [q, 1.0 - q]]))

    @property
    def J(self) -> int:
        return self.entries.shape[0]

    @property
    def delta(self) -> float:
        return float(self.entries.min())

    def is_strictly_positive(self) -> bool:
        return self.delta > 0.0

    def is_full_rank(self, rtol: float = 1e-12) -> bool:
        sv = np.linalg.svd(self.entries, compute_uv=False)
        return float(sv[-1]) > rtol * float(sv[0])

    def permuted(self, perm: Sequence[int]) -> "TransitionMatrix":
        perm = np.asarray(perm)
        return TransitionMatrix(self.entries[np.ix_(perm, perm)])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class StationaryDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"invalid probability vector {p}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __getitem__(self, j):
        return self.probs[j]

    def __len__(self):
        return len(self.probs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


def stationary_distribution(Q: TransitionMatrix | np.ndarray) -> StationaryDist:
    """Solve ``(Q^T - I) pi = 0`` with the normalisation row appended."""
    Q = np.asarray(Q, dtype=float)
    J = Q.shape[0]
    A = np.vstack([Q.T - np.eye(J), np.ones((1, J))])
    b = np.zeros(J + 1)
    b[-1] = 1.0
    # Reducible chains leave a repeated singular value of zero in (Q^T - I).
    sv = np.linalg.svd(Q.T - np.eye(J), compute_uv=False)
    if J > 1 and sv[-2] < 1e-10:
        raise NonIrreducible("transition matrix is reducible: invariant law not unique")
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return StationaryDist(pi / pi.sum())


# ---------------------------------------------------------------------------
# Emission models
# ---------------------------------------------------------------------------

class EmissionModel:
    """A density (continuous variants) or pmf on the integers (discrete).

    Subclasses implement ``pdf`` vectorised over numpy arrays and ``sample``.
    """

    kind: ClassVar[str] = ""
    discrete: ClassVar[bool] = False

    def pdf(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.pdf(x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Points where the density is not smooth (used to split quadrature)."""
        return ()

    def support(self) -> tuple[float, float]:
        """An interval carrying all (or all but ~1e-12) of the mass."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class _ScipyContinuous(EmissionModel):
    def _dist(self):
        raise NotImplementedError

    def pdf(self, x):
        return self._dist().pdf(x)

    def cdf(self, x):
        return self._dist().cdf(x)

    def ppf(self, q):
        return self._dist().ppf(q)

    def sample(self, rng, size):
        return self._dist().rvs(size=size, random_state=rng)

    def support(self):
        lo, hi = self._dist().support()
        if not np.isfinite(lo):
            lo = float(self.ppf(1e-12))
        if not np.isfinite(hi):
            hi = float(self.ppf(1 - 1e-12))
        return float(lo), float(hi)


@dataclass(frozen=True)
class Gaussian(_ScipyContinuous):
    mean: float = 0.0
    sd: float = 1.0
    kind: ClassVar[str] = "gaussian"

    def _dist(self):
        return stats.norm(self.mean, self.sd)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))

    def sample(self, rng, size):
        return self.mean + self.sd * rng.standard_normal(size)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class Cauchy(_ScipyContinuous):
    location: float = 0.0
    scale: float = 1.0
    kind: ClassVar[str] = "cauchy"

    def _dist(self):
        return stats.cauchy(self.location, self.scale)

    def sample(self, rng, size):
        return self.location + self.scale * rng.standard_cauchy(size)

    def support(self):
        # Cauchy tails are too heavy for a 1e-12 cut; 1e-6 keeps grids finite.
        return float(self.ppf(1e-6)), float(self.ppf(1 - 1e-6))

    def to_dict(self):
        return {"kind": self.kind, "location": self.location, "scale": self.scale}


@dataclass(frozen=True)
class Beta(_ScipyContinuous):
    alpha: float = 1.0
    beta: float = 1.0
    kind: ClassVar[str] = "beta"

    def _dist(self):
        return stats.beta(self.alpha, self.beta)

    def sample(self, rng, size):
        return rng.beta(self.alpha, self.beta, size)

    def breakpoints(self):
        return (0.0, 1.0)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class Uniform(_ScipyContinuous):
    lo: float = 0.0
    hi: float = 1.0
    kind: ClassVar[str] = "uniform"

    def _dist(self):
        return stats.uniform(self.lo, self.hi - self.lo)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    def breakpoints(self):
        return (self.lo, self.hi)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class DiscretePmf(EmissionModel):
    """Probability mass function on a finite set of integers."""

    probs: dict = field(default_factory=dict)
    kind: ClassVar[str] = "discrete_pmf"
    discrete: ClassVar[bool] = True

    def __post_init__(self):
        pm = {int(k): float(v) for k, v in sorted(self.probs.items())}
        if any(v < 0 for v in pm.values()) or abs(sum(pm.values()) - 1.0) > 1e-12:
            raise ValueError("pmf must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", pm)

    @property
    def points(self) -> np.ndarray:
        return np.array(list(self.probs), dtype=float)

    @property
    def masses(self) -> np.ndarray:
        return np.array(list(self.probs.values()), dtype=float)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        pts, w = self.points, self.masses
        idx = np.clip(np.searchsorted(pts, x), 0, len(pts) - 1)
        return np.where(pts[idx] == x, w[idx], 0.0)

    def sample(self, rng, size):
        return rng.choice(self.points, size=size, p=self.masses)

    def support(self):
        return float(self.points[0]), float(self.points[-1])

    def to_dict(self):
        return {"kind": self.kind, "probs": {str(k): v for k, v in self.probs.items()}}


@dataclass(frozen=True)
class GridDensity(EmissionModel):
    """Piecewise-linear function on a uniform grid, zero outside it.

    Used for estimator output, so values may be negative; they are clamped
    to ``[-cap, cap]`` at construction.
    """

    lo: float
    step: float
    values: np.ndarray
    cap: float = math.inf
    kind: ClassVar[str] = "grid"

    def __post_init__(self):
        v = np.clip(np.array(self.values, dtype=float), -self.cap, self.cap)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def hi(self) -> float:
        return self.lo + self.step * (len(self.values) - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.lo + self.step * np.arange(len(self.values))

    def pdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.grid, self.values, left=0.0, right=0.0)

    def sample(self, rng, size):
        # Inverse-cdf sampling of the positive part of the interpolant.
        w = np.clip(self.values, 0, None)
        mass = 0.5 * (w[1:] + w[:-1]) * self.step
        cells = rng.choice(len(mass), size=size, p=mass / mass.sum())
        return self.lo + self.step * (cells + rng.uniform(size=size))

    def support(self):
        return self.lo, self.hi

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "step": self.step,
                "values": self.values.tolist(), "cap": self.cap}


_KINDS = {cls.kind: cls for cls in (Gaussian, Cauchy, Beta, Uniform, DiscretePmf, GridDensity)}


def register_emission(cls: type) -> type:
    """Make an ``EmissionModel`` subclass loadable by :func:`emission_from_dict`."""
    if not cls.kind:
        raise ValueError("emission classes need a non-empty kind")
    _KINDS[cls.kind] = cls
    return cls


def emission_from_dict(d: dict) -> EmissionModel:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown emission kind {kind!r}")
    if kind == DiscretePmf.kind:
        return DiscretePmf({int(k): v for k, v in d["probs"].items()})
    return _KINDS[kind](**d)


def density_at(f: EmissionModel, x):
    """Evaluate ``f`` at ``x`` (scalar in, float out; arrays pass through)."""
    out = f.pdf(x)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Full parameter set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HmmParams:
    Q: TransitionMatrix
    pi: StationaryDist
    emissions: tuple
    measure: str = CONTINUOUS

    def __post_init__(self):
        if not isinstance(self.Q, TransitionMatrix):
            object.__setattr__(self, "Q", TransitionMatrix(self.Q))
        if not isinstance(self.pi, StationaryDist):
            object.__setattr__(self, "pi", StationaryDist(self.pi))
        object.__setattr__(self, "emissions", tuple(self.emissions))
        if len(self.emissions) != self.Q.J or len(self.pi) != self.Q.J:
            raise ValueError("Q, pi and emissions disagree on the number of states")
        if self.measure not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown measure {self.measure!r}")
        grid_ok = lambda f: isinstance(f, GridDensity) and self.measure == CONTINUOUS
        if any(f.discrete != (self.measure == DISCRETE) and not grid_ok(f) for f in self.emissions):
            raise ValueError("all emissions must share the dominating measure")
        if np.max(np.abs(self.pi.probs @ self.Q.entries - self.pi.probs)) > 1e-8:
            raise ValueError("pi is not stationary for Q")

    @classmethod
    def from_transitions(cls, Q, emissions, measure=None) -> "HmmParams":
        Q = Q if isinstance(Q, TransitionMatrix) else TransitionMatrix(Q)
        if measure is None:
            measure = DISCRETE if all(f.discrete for f in emissions) else CONTINUOUS
        return cls(Q, stationary_distribution(Q), tuple(emissions), measure)

    @property
    def J(self) -> int:
        return self.Q.J

    def likelihoods(self, X, floor: float = 0.0) -> np.ndarray:
        """``(N, J)`` matrix of ``f_j(X_n)``, floored below at ``floor``."""
        X = np.asarray(X, dtype=float)
        lik = np.column_stack([np.asarray(f.pdf(X), dtype=float) for f in self.emissions])
        return np.maximum(lik, floor) if floor > 0 else lik

    def permuted(self, perm: Sequence[int]) -> "HmmParams":
        """Relabel so that new state ``j`` is old state ``perm[j]``."""
        perm = list(perm)
        return HmmParams(self.Q.permuted(perm), StationaryDist(self.pi.probs[perm]),
                         tuple(self.emissions[j] for j in perm), self.measure)

    def tag(self) -> str:
        import hashlib
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {"Q": self.Q.entries.tolist(), "pi": self.pi.probs.tolist(),
                "emissions": [f.to_dict() for f in self.emissions], "measure": self.measure}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        Q = TransitionMatrix(np.array(d["Q"], dtype=float))
        emissions = tuple(emission_from_dict(e) for e in d["emissions"])
        pi = d.get("pi")
        pi = stationary_distribution(Q) if pi is None else StationaryDist(np.array(pi, dtype=float))
        measure = d.get("measure") or (DISCRETE if all(f.discrete for f in emissions) else CONTINUOUS)
        return cls(Q, pi, emissions, measure)

    @classmethod
    def from_json(cls, text: str) -> "HmmParams":
        return cls.from_dict(json.loads(text))


def marginal_density(H: HmmParams, x):
    """``f_pi(x) = sum_j pi_j f_j(x)``."""
    out = sum(H.pi[j] * np.asarray(f.pdf(x), dtype=float) for j, f in enumerate(H.emissions))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledPath:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ValueError("states and observations must have equal length")

    def __len__(self):
        return len(self.states)


@numba.njit(cache=True)
def _chain(cumQ, cum_pi, u):
    n = u.shape[0]
    J = cumQ.shape[0]
    out = np.empty(n, dtype=np.int64)
    s = 0
    while s < J - 1 and u[0] >= cum_pi[s]:
        s += 1
    out[0] = s
    for i in range(1, n):
        row = out[i - 1]
        s = 0
        while s < J - 1 and u[i] >= cumQ[row, s]:
            s += 1
        out[i] = s
    return out


def simulate(H: HmmParams, N: int, seed: int, *stream: int) -> SampledPath:
    """Draw ``(theta, X)`` of length ``N``; a pure function of its arguments."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = make_rng(seed, *stream)
    u = rng.uniform(size=N)
    states = _chain(np.cumsum(H.Q.entries, axis=1), np.cumsum(H.pi.probs), u)
    obs = np.empty(N)
    for j, f in enumerate(H.emissions):
        idx = np.flatnonzero(states == j)
        if idx.size:
            obs[idx] = f.sample(rng, idx.size)
    return SampledPath(states, obs, int(seed))
