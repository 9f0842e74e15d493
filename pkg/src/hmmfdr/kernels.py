"""Compactly supported convolution kernels of order s and their rescalings.

``K`` is a polynomial on ``[-1, 1]`` of the form ``(1 - u^2) p(u)``: the
Gegenbauer weight with parameter 3/2 times a polynomial ``p`` of degree
``ceil(s) - 1`` fixed by the moment conditions ``int u^j K(u) du = [j == 0]``.
The weight vanishes at the endpoints, so ``K`` is Lipschitz on the line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import QuadratureFailure
from .hmm_core import EmissionModel

__all__ = ["Kernel", "BandwidthLevel", "build_kernel", "choose_level", "eval_KL",
           "smooth", "gauss_legendre_integral"]


@dataclass(frozen=True)
class Kernel:
    order: int                 # number of vanishing moments beyond the zeroth
    coeffs: np.ndarray         # power-basis coefficients of K on [-1, 1]
    lipschitz_bound: float
    sup_bound: float

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coeffs)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.where(np.abs(u) <= 1.0, np.polynomial.polynomial.polyval(u, self.coeffs), 0.0)
        return float(out) if out.ndim == 0 else out

    def moment(self, j: int) -> float:
        """Exact ``int_{-1}^{1} u^j K(u) du``."""
        antider = (Polynomial([0] * j + [1]) * self.poly).integ()
        return float(antider(1.0) - antider(-1.0))


@dataclass(frozen=True)
class BandwidthLevel:
    L: int

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("bandwidth level must be nonnegative")

    @property
    def scale(self) -> float:
        return float(2 ** self.L)

    @property
    def bandwidth(self) -> float:
        return 2.0 ** -self.L

    def __int__(self):
        return self.L


def _weight_moment(n: int) -> float:
    # int_{-1}^{1} u^n (1 - u^2) du
    if n % 2:
        return 0.0
    return 2.0 / (n + 1) - 2.0 / (n + 3)


def build_kernel(s: float) -> Kernel:
    if s <= 0:
        raise ValueError("smoothness must be positive")
    order = max(math.ceil(s) - 1, 0)
    G = np.array([[_weight_moment(j + k) for k in range(order + 1)] for j in range(order + 1)])
    rhs = np.zeros(order + 1)
    rhs[0] = 1.0
    p = Polynomial(np.linalg.solve(G, rhs))
    K = Polynomial([1.0, 0.0, -1.0]) * p

    # Extrema of K and K' on [-1, 1] occur at interior critical points or ends.
    def max_abs(poly):
        crit = poly.deriv().roots()
        crit = crit[np.isreal(crit)].real
        pts = np.concatenate([[-1.0, 1.0], crit[np.abs(crit) <= 1.0]])
        return float(np.max(np.abs(poly(pts))))

    return Kernel(order, K.coef.copy(), max_abs(K.deriv()), max_abs(K))


def choose_level(N: int, s: float, multiplier: float = 1.0) -> BandwidthLevel:
    """Dyadic level with ``2^L`` nearest to ``c (N / ln N)^{1/(1+2s)}``."""
    if N < 3:
        raise ValueError("need N >= 3")
    target = multiplier * (N / math.log(N)) ** (1.0 / (1.0 + 2.0 * s))
    return BandwidthLevel(max(int(round(math.log2(target))), 0))


def eval_KL(K: Kernel, L, x, y):
    """``K_L(x, y) = 2^L K(2^L (x - y))``."""
    scale = 2.0 ** int(L)
    return scale * K(scale * (np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))


# ---------------------------------------------------------------------------
# Quadrature oracle
# ---------------------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _graded_panels(a: float, b: float, ratio: float = 0.2, depth: int = 14) -> np.ndarray:
    """Panel edges on [a, b], geometrically refined towards both ends."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    g = half * ratio ** np.arange(depth, 0, -1)
    return np.concatenate([[a], a + g, [mid], b - g[::-1], [b]])


def gauss_legendre_integral(func: Callable, cuts, n: int = 12) -> float:
    """Composite Gauss-Legendre over graded panels between sorted ``cuts``.

    Grading towards every cut point resolves endpoint singularities of the
    integrand (kinks, square-root cusps) without adaptivity.
    """
    nodes, weights = _gl(n)
    edges = np.unique(np.concatenate([_graded_panels(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]))
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes[None, :]
    vals = func(pts.ravel()).reshape(pts.shape)
    return float(np.sum(half[:, None] * weights[None, :] * vals))


def smooth(K: Kernel, L, f: EmissionModel | Callable, tol: float = 1e-8,
           breakpoints=None) -> Callable:
    """Return ``x -> K_L[f](x) = int K_L(x, y) f(y) dy`` evaluated by quadrature.

    Test oracle only. ``breakpoints`` lists non-smooth points of ``f`` (taken
    from ``f.breakpoints()`` for emission models).
    """
    if isinstance(f, EmissionModel):
        if f.discrete:
            raise ValueError("smoothing requires a continuous-measure density")
        pdf = f.pdf
        brk = tuple(f.breakpoints()) if breakpoints is None else tuple(breakpoints)
    else:
        pdf = f
        brk = tuple(breakpoints or ())
    h = 2.0 ** -int(L)

    def one(x):
        # Substituting y = x - h u gives int_{-1}^{1} K(u) f(x - h u) du.
        inner = sorted(u for u in ((x - b) / h for b in brk) if -1.0 < u < 1.0)
        cuts = np.array([-1.0, *inner, 1.0])
        integrand = lambda u: K(u) * pdf(x - h * u)
        coarse = gauss_legendre_integral(integrand, cuts, n=10)
        fine = gauss_legendre_integral(integrand, cuts, n=16)
        if abs(fine - coarse) > tol:
            raise QuadratureFailure(f"K_L[f]({x}) did not reach tolerance {tol}: "
                                    f"|{fine} - {coarse}|")
        return fine

    def KLf(x):
        if np.ndim(x) == 0:
            return one(float(x))
        x = np.asarray(x, dtype=float)
        return np.array([one(float(v)) for v in x.ravel()]).reshape(x.shape)

    return KLf
