"""Spectral kernel estimation of HMM emission densities.

Consecutive triples ``(X_n, X_{n+1}, X_{n+2})`` give the moment matrices

    P   = E[h(X_1) h(X_3)^T]                = O diag(pi) Q^2 O^T
    M^x = E[h(X_1) K_L(x, X_2) h(X_3)^T]     = O diag(pi) Q D^x Q O^T

with ``D^x = diag(K_L[f_j](x))``. After projecting onto the top right singular
vectors ``V`` of ``P`` the matrices ``B^x = (V^T P V)^{-1} V^T M^x V`` share one
eigenbasis, and their eigenvalues are the smoothed emission densities at
``x``. The estimator replaces expectations by triple averages, fixes the
eigenbasis ``R`` at the point of largest eigen-separation, and reads
``diag(R^{-1} B^x R)`` off on a grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (NearSingularProjection, NotDiagonalisable, QuadratureFailure,
                     RankDeficient, TooFewObservations)
from .hmm_core import DISCRETE, DiscretePmf, GridDensity, HmmParams
from .kernels import BandwidthLevel, Kernel, build_kernel, choose_level, eval_KL, smooth

__all__ = [
    "FeatureSet", "MomentMatrices", "DiagonalizerSearchSpace", "SpectralFit",
    "default_features", "moment_matrices", "empirical_P", "empirical_M",
    "population_moments", "project_svd", "b_matrix", "eigen_separation",
    "select_diagonalizer", "estimate_emissions", "estimate_emissions_discrete",
]

COMPLEX_TOL = 1e-8
SEP_TOL = 1e-10


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSet:
    """Bounded feature maps ``h_1..h_{L0}`` evaluated column-wise.

    ``kind`` is one of ``"cells"`` (indicators of the partition cut at
    ``params``), ``"points"`` (indicators of the integers in ``params``) or
    ``"functions"`` (arbitrary callables in ``funcs``).
    """

    kind: str
    params: tuple = ()
    funcs: tuple = ()
    bound: float = 1.0

    @classmethod
    def cells(cls, cuts: Sequence[float]) -> "FeatureSet":
        cuts = tuple(sorted(float(c) for c in cuts))
        if len(set(cuts)) != len(cuts):
            raise ValueError("partition cut points must be distinct")
        return cls("cells", cuts)

    @classmethod
    def points(cls, support: Sequence[int]) -> "FeatureSet":
        return cls("points", tuple(sorted(int(v) for v in support)))

    @classmethod
    def functions(cls, funcs: Sequence[Callable], bound: float) -> "FeatureSet":
        return cls("functions", (), tuple(funcs), float(bound))

    @classmethod
    def constant_and_set(cls, lo: float, hi: float) -> "FeatureSet":
        """Two-state shortcut ``h_1 = 1``, ``h_2 = 1_{[lo, hi)}``."""
        return cls.functions([lambda x: np.ones_like(np.asarray(x, dtype=float)),
                              lambda x: ((np.asarray(x) >= lo) & (np.asarray(x) < hi)).astype(float)],
                             1.0)

    @property
    def L0(self) -> int:
        if self.kind == "cells":
            return len(self.params) + 1
        if self.kind == "points":
            return len(self.params)
        return len(self.funcs)

    def cell_index(self, X) -> np.ndarray:
        """Index of the single active indicator (``-1`` if none) for cell/point families."""
        X = np.asarray(X, dtype=float)
        if self.kind == "cells":
            return np.searchsorted(np.asarray(self.params), X, side="right")
        if self.kind == "points":
            pts = np.asarray(self.params, dtype=float)
            idx = np.clip(np.searchsorted(pts, X), 0, len(pts) - 1)
            return np.where(pts[idx] == X, idx, -1)
        raise TypeError("cell_index is only defined for indicator families")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "functions":
            return np.column_stack([np.broadcast_to(np.asarray(h(X), dtype=float), X.shape)
                                    for h in self.funcs])
        out = np.zeros((X.size, self.L0))
        idx = self.cell_index(X.ravel())
        ok = idx >= 0
        out[np.flatnonzero(ok), idx[ok]] = 1.0
        return out

    def conditional_means(self, f, quad=None) -> np.ndarray:
        """``E[h_l(X)]`` for ``X ~ f``, by quadrature on each feature's support."""
        if self.kind == "points":
            return np.asarray(f.pdf(np.asarray(self.params, dtype=float)), dtype=float)
        if self.kind == "cells":
            from .kernels import gauss_legendre_integral
            lo, hi = f.support()
            edges = [-math.inf, *self.params, math.inf]
            out = []
            for a, b in zip(edges[:-1], edges[1:]):
                a, b = max(a, lo), min(b, hi)
                if b <= a:
                    out.append(0.0)
                    continue
                cuts = np.array(sorted({a, b, *[c for c in f.breakpoints() if a < c < b]}))
                out.append(gauss_legendre_integral(f.pdf, cuts, n=16))
            return np.array(out)
        raise TypeError("conditional means need an indicator family")


def default_features(X, J: int = 2, L0: int | None = None, discrete: bool = False) -> FeatureSet:
    """Indicator family used when the caller gives none.

    Continuous data: ``L0 = max(J, 4)`` cells cut at dyadic rationals nearest
    the empirical ``k / L0`` quantiles (depth grows until the cuts separate).
    Discrete data: indicators of the observed support (the 32 most frequent
    values when it is larger).
    """
    X = np.asarray(X, dtype=float)
    if discrete:
        vals, counts = np.unique(X, return_counts=True)
        if len(vals) > 32:
            vals = vals[np.sort(np.argsort(-counts, kind="stable")[:32])]
        return FeatureSet.points(vals.astype(int))
    L0 = max(J, 4) if L0 is None else L0
    q = np.quantile(X, np.arange(1, L0) / L0)
    for depth in range(2, 20):
        cuts = np.round(q * 2 ** depth) / 2 ** depth
        if len(np.unique(cuts)) == len(cuts):
            return FeatureSet.cells(cuts)
    raise ValueError("data too concentrated to build distinct feature cells")


# ---------------------------------------------------------------------------
# Empirical moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentMatrices:
    """``P_hat`` plus the sorted triple data needed to evaluate ``M_hat^x``.

    Triples are sorted on the middle coordinate so that the kernel's compact
    support restricts each ``M_hat^x`` to a contiguous slice.
    """

    P_hat: np.ndarray
    mid: np.ndarray            # sorted X_{n+1}
    left: np.ndarray           # h(X_n) rows, aligned with ``mid`` (or cell ids)
    right: np.ndarray          # h(X_{n+2}) rows (or cell ids)
    n_triples: int
    features: FeatureSet

    @property
    def L0(self) -> int:
        return self.P_hat.shape[0]

    @property
    def indicator(self) -> bool:
        return self.left.ndim == 1

    def _weighted(self, lo: int, hi: int, w: np.ndarray) -> np.ndarray:
        L0 = self.L0
        if self.indicator:
            a, b = self.left[lo:hi], self.right[lo:hi]
            ok = (a >= 0) & (b >= 0)
            flat = np.bincount(a[ok] * L0 + b[ok], weights=w[ok], minlength=L0 * L0)
            return flat.reshape(L0, L0) / self.n_triples
        return (self.left[lo:hi] * w[:, None]).T @ self.right[lo:hi] / self.n_triples

    def M(self, x: float, K: Kernel, L) -> np.ndarray:
        h = 2.0 ** -int(L)
        lo = np.searchsorted(self.mid, x - h, side="left")
        hi = np.searchsorted(self.mid, x + h, side="right")
        w = eval_KL(K, L, x, self.mid[lo:hi])
        return self._weighted(lo, hi, np.atleast_1d(w))

    def M_point(self, x: float) -> np.ndarray:
        """Discrete analogue: kernel replaced by the indicator ``1{X_{n+1} = x}``."""
        lo = np.searchsorted(self.mid, x, side="left")
        hi = np.searchsorted(self.mid, x, side="right")
        return self._weighted(lo, hi, np.ones(hi - lo))

    def M_batch(self, xs, K: Kernel | None = None, L=None) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        if K is None:
            return np.stack([self.M_point(x) for x in xs])
        return np.stack([self.M(x, K, L) for x in xs])


def moment_matrices(X, h: FeatureSet) -> MomentMatrices:
    X = np.asarray(X, dtype=float)
    if X.size < 3:
        raise TooFewObservations(f"need at least 3 observations to form a triple, got {X.size}")
    n = X.size - 2
    order = np.argsort(X[1:-1], kind="stable")
    if h.kind in ("cells", "points"):
        ids = h.cell_index(X)
        a, b = ids[:-2], ids[2:]
        L0 = h.L0
        ok = (a >= 0) & (b >= 0)
        P = np.bincount(a[ok] * L0 + b[ok], minlength=L0 * L0).reshape(L0, L0) / n
        left, right = a[order], b[order]
    else:
        H = h(X)
        P = H[:-2].T @ H[2:] / n
        left, right = H[:-2][order], H[2:][order]
    return MomentMatrices(P, X[1:-1][order], left, right, n, h)


def empirical_P(X, h: FeatureSet) -> np.ndarray:
    """Average of ``h(X_n) h(X_{n+2})^T`` over the ``N - 2`` triples."""
    return moment_matrices(X, h).P_hat


def empirical_M(mm: MomentMatrices, K: Kernel, L, x: float) -> np.ndarray:
    return mm.M(x, K, L)


# ---------------------------------------------------------------------------
# Population moments (test oracle)
# ---------------------------------------------------------------------------

def population_moments(H: HmmParams, h: FeatureSet, K: Kernel, L, x: float):
    """Population ``(P, M^x, O, D^x)``.

    ``O`` and ``D^x`` come from quadrature; ``P`` and ``M^x`` are assembled by
    summing over hidden paths ``(a, b, c)`` term by term, so they can be
    checked against the closed-form matrix products.
    """
    if H.measure == DISCRETE:
        raise ValueError("population moments are computed for continuous models")
    J = H.J
    O = np.column_stack([h.conditional_means(f) for f in H.emissions])
    try:
        D = np.diag([smooth(K, L, f)(x) for f in H.emissions])
    except QuadratureFailure:
        raise
    Q, pi = H.Q.entries, H.pi.probs
    L0 = O.shape[0]
    P = np.zeros((L0, L0))
    M = np.zeros((L0, L0))
    for a, b, c in itertools.product(range(J), repeat=3):
        w = pi[a] * Q[a, b] * Q[b, c]
        outer = np.outer(O[:, a], O[:, c])
        P += w * outer
        M += w * D[b, b] * outer
    return P, M, O, D


# ---------------------------------------------------------------------------
# Projection and diagonalisation
# ---------------------------------------------------------------------------

def project_svd(P_hat, J: int) -> np.ndarray:
    """Top-``J`` right singular vectors, largest-magnitude entry made positive."""
    P_hat = np.asarray(P_hat, dtype=float)
    if P_hat.shape[0] < J:
        raise ValueError("need L0 >= J features")
    _, s, Vt = np.linalg.svd(P_hat)
    if s[J - 1] < 1e-10:
        raise RankDeficient(f"sigma_J(P_hat) = {s[J - 1]:.3g} < 1e-10")
    V = Vt[:J].T.copy()
    return V * _column_signs(V)


def _column_signs(V):
    pivot = np.argmax(np.abs(V), axis=0)
    return np.where(V[pivot, np.arange(V.shape[1])] < 0, -1.0, 1.0)


def _projector(P_hat, V):
    G = V.T @ P_hat @ V
    if np.linalg.cond(G) > 1e12:
        raise NearSingularProjection("V^T P_hat V is numerically singular")
    return G


def b_matrix(mm: MomentMatrices, V_hat, K: Kernel, L, x) -> np.ndarray:
    """``B_hat^x = (V^T P_hat V)^{-1} V^T M_hat^x V``; vectorised over ``x``."""
    G = _projector(mm.P_hat, V_hat)
    Ms = mm.M_batch(x, K, L)
    B = np.linalg.solve(G[None], V_hat.T[None] @ Ms @ V_hat[None])
    return B[0] if np.ndim(x) == 0 else B


def _eig_sorted(B):
    """Real eigen-decomposition with ascending eigenvalues, or None if complex."""
    J = B.shape[0]
    if J == 2:
        tr = B[0, 0] + B[1, 1]
        # (a - d)^2 + 4bc equals tr^2 - 4 det but keeps precision near a double root.
        disc = (B[0, 0] - B[1, 1]) ** 2 + 4 * B[0, 1] * B[1, 0]
        if disc < 0 and 0.5 * math.sqrt(-disc) > COMPLEX_TOL:
            return None
        r = 0.5 * math.sqrt(max(disc, 0.0))
        lam = np.array([0.5 * tr - r, 0.5 * tr + r])
        vecs = []
        for l in lam:
            # Null vector of B - l I from whichever row is better conditioned.
            a, b = B[0, 0] - l, B[0, 1]
            c, d = B[1, 0], B[1, 1] - l
            v = np.array([-b, a]) if abs(a) + abs(b) >= abs(c) + abs(d) else np.array([-d, c])
            nv = np.linalg.norm(v)
            vecs.append(v / nv if nv > 0 else np.eye(2)[len(vecs)])
        return lam, np.column_stack(vecs)
    lam, R = np.linalg.eig(B)
    if np.max(np.abs(lam.imag)) > COMPLEX_TOL or np.max(np.abs(R.imag)) > COMPLEX_TOL:
        return None
    order = np.argsort(lam.real, kind="stable")
    R = R.real[:, order]
    return lam.real[order], R / np.linalg.norm(R, axis=0)


def eigen_separation(B) -> float:
    """Minimum pairwise eigenvalue gap; 0 if eigenvalues are not (numerically) real."""
    B = np.asarray(B, dtype=float)
    res = _eig_sorted(B)
    if res is None:
        return 0.0
    return float(np.min(np.diff(res[0])))


def _separations(Bs: np.ndarray) -> np.ndarray:
    if Bs.shape[-1] == 2:
        disc = (Bs[:, 0, 0] - Bs[:, 1, 1]) ** 2 + 4 * Bs[:, 0, 1] * Bs[:, 1, 0]
        return np.where(disc >= 0, np.sqrt(np.abs(disc)), 0.0)
    lam = np.linalg.eigvals(Bs)
    real = np.max(np.abs(lam.imag), axis=1) <= COMPLEX_TOL
    srt = np.sort(lam.real, axis=1)
    return np.where(real, np.min(np.diff(srt, axis=1), axis=1), 0.0)


@dataclass(frozen=True)
class DiagonalizerSearchSpace:
    """Finite set of ``(a, u)`` with ``a, u in R^{J(J-1)/2}`` and ``sum|a| <= 1``."""

    a: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if a.shape != u.shape or a.shape[0] == 0:
            raise ValueError("search space needs matching, nonempty (a, u) arrays")
        if np.any(np.abs(a).sum(axis=1) > 1 + 1e-12):
            raise ValueError("every a must satisfy sum |a_i| <= 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", u)

    def __len__(self):
        return self.a.shape[0]

    @classmethod
    def dyadic(cls, lo: float, hi: float, depth: int = 7, J: int = 2,
               max_points: int = 8) -> "DiagonalizerSearchSpace":
        """Dyadic rationals ``k / 2^depth`` in ``[lo, hi]``.

        For ``J = 2`` the weight is fixed at ``a = 1``. For larger ``J`` each
        ``u_i`` ranges over an evenly thinned subset (at most ``max_points``)
        and ``a`` over the dyadic ``l1``-ball of step 1/2.
        """
        step = 2.0 ** -depth
        pts = np.arange(math.ceil(lo / step), math.floor(hi / step) + 1) * step
        if pts.size == 0:
            pts = np.array([round(0.5 * (lo + hi) / step) * step])
        k = J * (J - 1) // 2
        if k == 1:
            return cls(np.ones((pts.size, 1)), pts[:, None])
        if pts.size > max_points:
            pts = pts[np.linspace(0, pts.size - 1, max_points).round().astype(int)]
        steps = np.arange(-2, 3) / 2.0
        a_set = [a for a in itertools.product(steps, repeat=k) if sum(map(abs, a)) <= 1 and any(a)]
        combos = list(itertools.product(a_set, itertools.product(pts, repeat=k)))
        return cls(np.array([c[0] for c in combos]), np.array([c[1] for c in combos]))

    @classmethod
    def points(cls, xs, J: int = 2) -> "DiagonalizerSearchSpace":
        """Scalar search over the given points (``J = 2``; used by the discrete variant)."""
        xs = np.asarray(xs, dtype=float)
        if J != 2:
            return cls.dyadic(xs.min(), xs.max(), 0, J)
        return cls(np.ones((xs.size, 1)), xs[:, None])


def _combined(Bu: np.ndarray, idx: np.ndarray, a: np.ndarray) -> np.ndarray:
    # B^{a,u} = sum_i a_i B^{u_i}
    return np.einsum("nk,nkij->nij", a, Bu[idx])


def _search(Bu_of, space: DiagonalizerSearchSpace):
    uniq, inv = np.unique(space.u.ravel(), return_inverse=True)
    Bu = Bu_of(uniq)
    idx = inv.reshape(space.u.shape)
    seps = np.empty(len(space))
    chunk = 4096
    for s in range(0, len(space), chunk):
        seps[s:s + chunk] = _separations(_combined(Bu, idx[s:s + chunk], space.a[s:s + chunk]))
    best = int(np.argmax(seps))  # first index among ties
    B_best = _combined(Bu, idx[best:best + 1], space.a[best:best + 1])[0]
    res = _eig_sorted(B_best)
    sep = float(np.min(np.diff(res[0]))) if res is not None else 0.0
    if res is None or sep < SEP_TOL:
        raise NotDiagonalisable(f"best eigen-separation {sep:.3g} is below {SEP_TOL}")
    R = res[1] * _column_signs(res[1])
    return space.a[best].copy(), space.u[best].copy(), R, sep


def select_diagonalizer(mm: MomentMatrices, V_hat, K: Kernel | None, L,
                        space: DiagonalizerSearchSpace):
    """Maximise eigen-separation of ``B_hat^{a,u}`` over ``space``.

    Returns ``(a_hat, u_hat, R_hat, sep)`` where the columns of ``R_hat`` are
    unit eigenvectors in ascending eigenvalue order. ``K=None`` selects the
    discrete (point-indicator) moments.
    """
    G = _projector(mm.P_hat, V_hat)

    def Bu_of(xs):
        Ms = mm.M_batch(xs, K, L)
        return np.linalg.solve(G[None], V_hat.T[None] @ Ms @ V_hat[None])

    return _search(Bu_of, space)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralFit:
    V_hat: np.ndarray
    R_hat: np.ndarray
    densities: tuple
    level: BandwidthLevel
    alpha: float
    sep_achieved: float
    a_hat: np.ndarray
    u_hat: np.ndarray
    n_obs: int
    raw: np.ndarray = field(repr=False, default=None)  # unclamped diag(R^-1 B^x R), (J, grid)

    @property
    def J(self) -> int:
        return len(self.densities)

    @property
    def grid(self) -> np.ndarray:
        return self.densities[0].grid

    def to_dict(self) -> dict:
        return {
            "grid": {"lo": self.densities[0].lo, "step": self.densities[0].step,
                     "n": len(self.densities[0].values)},
            "values": [d.values.tolist() for d in self.densities],
            "level": self.level.L,
            "alpha": self.alpha,
            "cap": self.densities[0].cap,
            "sep_achieved": self.sep_achieved,
            "a_hat": self.a_hat.tolist(),
            "u_hat": self.u_hat.tolist(),
            "V_hat": self.V_hat.tolist(),
            "R_hat": self.R_hat.tolist(),
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralFit":
        g = d["grid"]
        dens = tuple(GridDensity(g["lo"], g["step"], np.array(v), d["cap"]) for v in d["values"])
        return cls(np.array(d["V_hat"]), np.array(d["R_hat"]), dens, BandwidthLevel(d["level"]),
                   d["alpha"], d["sep_achieved"], np.array(d["a_hat"]), np.array(d["u_hat"]),
                   d["n_obs"])


MIN_OBSERVATIONS = 100


def estimate_emissions(X, s: float, h: FeatureSet | None = None,
                       space: DiagonalizerSearchSpace | None = None, alpha: float = 0.5,
                       grid=None, J: int = 2, level: BandwidthLevel | None = None,
                       level_multiplier: float = 1.0, n_grid: int = 1024,
                       search_depth: int = 7, V_hat=None) -> SpectralFit:
    """Estimate the ``J`` emission densities from one observed sequence.

    Output densities are in estimator-internal order (ascending eigenvalue at
    the selected diagonaliser point); matching them to null/alternative is
    the job of :func:`hmmfdr.recovery.align_labels`.
    """
    X = np.asarray(X, dtype=float)
    N = X.size
    if N < MIN_OBSERVATIONS:
        raise TooFewObservations(f"spectral estimation needs at least {MIN_OBSERVATIONS} points")
    K = build_kernel(s)
    L = level if level is not None else choose_level(N, s, level_multiplier)
    h = h if h is not None else default_features(X, J)
    mm = moment_matrices(X, h)
    V = project_svd(mm.P_hat, J) if V_hat is None else np.asarray(V_hat, dtype=float)
    if space is None:
        space = DiagonalizerSearchSpace.dyadic(X.min(), X.max(), search_depth, J)
    a_hat, u_hat, R, sep = select_diagonalizer(mm, V, K, L, space)
    if grid is None:
        grid = np.linspace(X.min() - 1.0, X.max() + 1.0, n_grid)
    grid = np.asarray(grid, dtype=float)
    Bx = b_matrix(mm, V, K, L, grid)
    Rinv = np.linalg.inv(R)
    raw = np.einsum("ij,njk,ki->ni", Rinv, Bx, R).T
    cap = float(N) ** alpha
    step = float(grid[1] - grid[0]) if grid.size > 1 else 1.0
    dens = tuple(GridDensity(float(grid[0]), step, raw[j], cap) for j in range(J))
    return SpectralFit(V, R, dens, L, alpha, sep, a_hat, u_hat, N, raw)


def estimate_emissions_discrete(X, J: int = 2, h: FeatureSet | None = None,
                                space: DiagonalizerSearchSpace | None = None) -> list[DiscretePmf]:
    """Discrete variant: point indicators as features, ``1{x = y}`` as kernel.

    Returns pmfs over the observed support, negatives clipped and renormalised,
    in estimator-internal (ascending-eigenvalue) order.
    """
    X = np.asarray(X, dtype=float)
    if not np.all(X == np.round(X)):
        raise ValueError("discrete estimation needs integer observations")
    h = h if h is not None else default_features(X, J, discrete=True)
    if h.L0 < J:
        raise RankDeficient(f"only {h.L0} features for {J} states")
    mm = moment_matrices(X, h)
    V = project_svd(mm.P_hat, J)
    support = np.unique(X)
    if space is None:
        space = DiagonalizerSearchSpace.points(support, J)
    _, _, R, _ = select_diagonalizer(mm, V, None, None, space)
    G = _projector(mm.P_hat, V)
    Ms = mm.M_batch(support)
    Bx = np.linalg.solve(G[None], V.T[None] @ Ms @ V[None])
    raw = np.einsum("ij,njk,ki->ni", np.linalg.inv(R), Bx, R).T
    pmfs = []
    for j in range(J):
        w = np.clip(raw[j], 0.0, None)
        if w.sum() <= 0:
            raise NotDiagonalisable("estimated pmf has no positive mass")
        pmfs.append(DiscretePmf(dict(zip(support.astype(int).tolist(), (w / w.sum()).tolist()))))
    return pmfs
