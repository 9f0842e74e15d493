"""Monte Carlo campaigns, estimation-risk curves, minimax stress instances and
chain diagnostics.

A campaign simulates ``replicates`` independent paths for every length in
``N_grid`` and runs each requested pipeline on the same path:

* ``Oracle``: l-values at the true parameters, data-driven threshold.
* ``PluginTrueH``: l-values at the true parameters, thresholded at a fixed
  ``lambda*`` estimated once from a pooled pilot sample.
* ``FullEmpirical``: spectral emission estimates, likelihood recovery of the
  transition matrix, label alignment, then the data-driven threshold.

Replicate ``r`` at length ``N`` draws from the random stream
``(master_seed, N, r)``, so results do not depend on execution order.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import ClassVar, Sequence

import numpy as np
from scipy import stats

from .errors import ESTIMATOR_FAILURES, NotADensity, SingularQ
from .hmm_core import (DISCRETE, EmissionModel, HmmParams, TransitionMatrix, register_emission,
                       simulate)
from .recovery import AlignmentRule, ByStationaryMass, ByTailRatio, fit_params
from .smoothing import l_values
from .spectral import default_features, estimate_emissions, estimate_emissions_discrete
from .testing import (ErrorReport, error_report, marginal_rates, procedure_hat, select_k_hat,
                      threshold_procedure)

__all__ = ["PIPELINES", "ExperimentConfig", "ExperimentReport", "run_experiment",
           "estimation_risk_curve", "rate_slope", "rho_loss", "evaluation_grid",
           "estimate_lambda_star", "PerturbedGaussian", "MinimaxInstance", "minimax_instance",
           "Diagnostics", "diagnostics", "condition_number", "bump", "ROW_FIELDS"]

PIPELINES = ("Oracle", "PluginTrueH", "FullEmpirical")

ROW_FIELDS = ("N", "replicate", "pipeline", "status", "K_hat", "lambda_hat", "post_fdr",
              "n_rejected", "n_signals", "n_false", "fdp", "tdp",
              "err_f0", "err_f1", "rho", "err_Q", "err_pi")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _rule_to_dict(rule: AlignmentRule) -> dict:
    if isinstance(rule, ByStationaryMass):
        return {"rule": "stationary_mass"}
    x = rule.x_star
    return {"rule": "tail_ratio", "x_star": None if math.isinf(x) else x}


def _rule_from_dict(d: dict) -> AlignmentRule:
    if d.get("rule") == "stationary_mass":
        return ByStationaryMass()
    if d.get("rule") == "tail_ratio":
        x = d.get("x_star")
        return ByTailRatio(math.inf if x is None else float(x))
    raise ValueError(f"unknown alignment rule {d!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    params: HmmParams
    N_grid: tuple
    replicates: int
    t: float = 0.1
    s: float = 2.0
    alpha: float = 0.5
    pipelines: tuple = PIPELINES
    alignment: AlignmentRule = field(default_factory=ByStationaryMass)
    master_seed: int = 0
    level_multiplier: float = 1.0
    search_depth: int = 7
    n_features: int | None = None
    pilot_paths: int = 4
    pilot_length: int = 50_000
    csv_path: str = "results.csv"
    json_path: str = "summary.json"
    svg: bool = True

    def __post_init__(self):
        object.__setattr__(self, "N_grid", tuple(int(n) for n in self.N_grid))
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        if not 0 < self.t < 1:
            raise ValueError("level t must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.N_grid or any(b <= a for a, b in zip(self.N_grid, self.N_grid[1:])):
            raise ValueError("N_grid must be nonempty and strictly increasing")
        unknown = set(self.pipelines) - set(PIPELINES)
        if unknown:
            raise ValueError(f"unknown pipelines {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(), "N_grid": list(self.N_grid),
            "replicates": self.replicates, "t": self.t, "s": self.s, "alpha": self.alpha,
            "pipelines": list(self.pipelines), "alignment": _rule_to_dict(self.alignment),
            "master_seed": self.master_seed, "level_multiplier": self.level_multiplier,
            "search_depth": self.search_depth, "n_features": self.n_features,
            "pilot": {"paths": self.pilot_paths, "length": self.pilot_length},
            "output": {"csv": self.csv_path, "json": self.json_path, "svg": self.svg},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {k: d[k] for k in ("N_grid", "replicates", "t", "s", "alpha", "pipelines",
                                "master_seed", "level_multiplier", "search_depth", "n_features")
              if k in d}
        kw["params"] = HmmParams.from_dict(d["params"])
        if "alignment" in d:
            kw["alignment"] = _rule_from_dict(d["alignment"])
        pilot = d.get("pilot", {})
        kw.update({k2: pilot[k1] for k1, k2 in (("paths", "pilot_paths"), ("length", "pilot_length"))
                   if k1 in pilot})
        out = d.get("output", {})
        kw.update({k2: out[k1] for k1, k2 in (("csv", "csv_path"), ("json", "json_path"), ("svg", "svg"))
                   if k1 in out})
        return cls(**kw)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def evaluation_grid(H: HmmParams, n: int = 1024, mass: float = 1e-3) -> np.ndarray:
    """Nodes spanning the truth's central ``1 - 2 mass`` quantile range.

    For discrete models the grid is the union of the support points.
    """
    if H.measure == DISCRETE:
        return np.unique(np.concatenate([f.points for f in H.emissions])).astype(float)
    lo, hi = math.inf, -math.inf
    for f in H.emissions:
        if hasattr(f, "ppf"):
            a, b = float(f.ppf(mass)), float(f.ppf(1 - mass))
        else:
            a, b = f.support()
        lo, hi = min(lo, a), max(hi, b)
    return np.linspace(lo, hi, n)


def _sup_errors(est: Sequence, truth: Sequence, grid) -> np.ndarray:
    """``E[j, k] = max_grid |est_j - truth_k|``."""
    fe = [np.asarray(e(grid) if callable(e) else e, dtype=float) for e in est]
    ft = [np.asarray(t(grid) if callable(t) else t, dtype=float) for t in truth]
    return np.array([[np.max(np.abs(a - b)) for b in ft] for a in fe])


def rho_loss(est: Sequence, truth: Sequence, grid, return_perm: bool = False):
    """Grid version of ``min_tau sum_j sup |est_{tau(j)} - truth_j|``.

    ``est`` and ``truth`` hold callables or arrays already evaluated on ``grid``.
    """
    E = _sup_errors(est, truth, grid)
    J = E.shape[0]
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(J)):
        v = float(sum(E[perm[j], j] for j in range(J)))
        if v < best:
            best, best_perm = v, perm
    return (best, best_perm, E) if return_perm else best


def rate(N: int, s: float) -> float:
    """``r_N = (N / log N)^{-s / (1 + 2 s)}``."""
    return (N / math.log(N)) ** (-s / (1.0 + 2.0 * s))


# ---------------------------------------------------------------------------
# Oracle threshold
# ---------------------------------------------------------------------------

def estimate_lambda_star(H: HmmParams, t: float, n_paths: int = 4, length: int = 50_000,
                         seed: int = 0):
    """Pooled-pilot estimate of the population threshold ``lambda*``.

    Pilot paths use streams ``(seed, 0, k)``; ``N = 0`` never labels a campaign
    replicate, so they are independent of every replicate stream.
    """
    pooled = np.concatenate([l_values(simulate(H, length, seed, 0, k).observations, H).values
                             for k in range(n_paths)])
    return select_k_hat(pooled, t)[1]


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------

def _blank(N: int, r: int, pipeline: str, status: str = "ok") -> dict:
    row = dict.fromkeys(ROW_FIELDS)
    row.update(N=N, replicate=r, pipeline=pipeline, status=status)
    return row


def _fill_testing(row: dict, theta, lv, rejections, K_hat, lam, pf) -> dict:
    rep = error_report(theta, rejections)
    row.update(K_hat=int(K_hat), lambda_hat=lam, post_fdr=float(pf), n_rejected=rep.n_rejected,
               n_signals=rep.n_signals, n_false=rep.n_false, fdp=rep.fdp, tdp=rep.tdp)
    return row


def _empirical_row(cfg: ExperimentConfig, X, theta, N: int, r: int, grid) -> dict:
    H = cfg.params
    try:
        if H.measure == DISCRETE:
            dens = estimate_emissions_discrete(X, H.J)
        else:
            h = default_features(X, H.J, cfg.n_features) if cfg.n_features else None
            dens = estimate_emissions(X, cfg.s, h=h, alpha=cfg.alpha, J=H.J,
                                      level_multiplier=cfg.level_multiplier,
                                      search_depth=cfg.search_depth).densities
        H_hat = fit_params(X, dens, cfg.alignment)
        lv = l_values(X, H_hat)
        out = procedure_hat(lv, cfg.t)
    except ESTIMATOR_FAILURES as exc:
        return _blank(N, r, "FullEmpirical", type(exc).__name__)
    row = _fill_testing(_blank(N, r, "FullEmpirical"), theta, lv, out.rejections,
                        out.K_hat, out.lambda_hat, out.post_fdr)
    _, _, E = rho_loss([f.pdf for f in H_hat.emissions], [f.pdf for f in H.emissions], grid,
                       return_perm=True)
    # Per-state errors under the best relabelling, rho as its total.
    perm = min(itertools.permutations(range(H.J)), key=lambda p: sum(E[p[j], j] for j in range(H.J)))
    errs = [float(E[perm[j], j]) for j in range(H.J)]
    row.update(err_f0=errs[0], err_f1=errs[1] if H.J > 1 else None, rho=float(sum(errs)),
               err_Q=float(np.linalg.norm(H_hat.Q.entries - H.Q.entries)),
               err_pi=float(np.linalg.norm(H_hat.pi.probs - H.pi.probs)))
    return row


def replicate_rows(cfg: ExperimentConfig, N: int, r: int, lam_star=None) -> list[dict]:
    """All pipeline rows for replicate ``r`` at length ``N``."""
    H = cfg.params
    path = simulate(H, N, cfg.master_seed, N, r)
    X, theta = path.observations, path.states
    rows = []
    lv = None
    if "Oracle" in cfg.pipelines or "PluginTrueH" in cfg.pipelines:
        lv = l_values(X, H)
    if "Oracle" in cfg.pipelines:
        out = procedure_hat(lv, cfg.t)
        rows.append(_fill_testing(_blank(N, r, "Oracle"), theta, lv, out.rejections,
                                  out.K_hat, out.lambda_hat, out.post_fdr))
    if "PluginTrueH" in cfg.pipelines:
        phi = threshold_procedure(lv, lam_star)
        pf = float(lv.values[phi].sum() / max(1, int(phi.sum())))
        rows.append(_fill_testing(_blank(N, r, "PluginTrueH"), theta, lv, phi,
                                  int(phi.sum()), lam_star, pf))
    if "FullEmpirical" in cfg.pipelines:
        rows.append(_empirical_row(cfg, X, theta, N, r, evaluation_grid(H)))
    return rows


def _job(args):
    return replicate_rows(*args)


@dataclass(frozen=True)
class ExperimentReport:
    """Per-replicate rows sorted by ``(N, replicate, pipeline)`` plus aggregates.

    Aggregates use only rows with ``status == "ok"``. ``mFDR_hat`` and
    ``mTDR_hat`` are ratios of sums over replicates; their standard errors
    come from the delta method.
    """

    config: dict
    rows: tuple
    aggregates: tuple
    lambda_star: object = None

    def aggregate(self, N: int, pipeline: str) -> dict:
        for a in self.aggregates:
            if a["N"] == N and a["pipeline"] == pipeline:
                return a
        raise KeyError((N, pipeline))

    def column(self, name: str, N: int | None = None, pipeline: str | None = None,
               ok_only: bool = True) -> np.ndarray:
        sel = [r[name] for r in self.rows
               if (N is None or r["N"] == N) and (pipeline is None or r["pipeline"] == pipeline)
               and (not ok_only or r["status"] == "ok")]
        return np.array(sel, dtype=float)


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan


def _ratio_se(num: np.ndarray, den: np.ndarray) -> float:
    n = num.size
    if n < 2 or den.sum() == 0:
        return math.nan
    R = num.sum() / den.sum()
    return float(math.sqrt(np.sum((num - R * den) ** 2) / (n * (n - 1))) / den.mean())


def aggregate_rows(rows: Sequence[dict]) -> list[dict]:
    keys = sorted({(r["N"], r["pipeline"]) for r in rows},
                  key=lambda k: (k[0], PIPELINES.index(k[1])))
    out = []
    for N, pipe in keys:
        grp = [r for r in rows if r["N"] == N and r["pipeline"] == pipe]
        ok = [r for r in grp if r["status"] == "ok"]
        agg = {"N": N, "pipeline": pipe, "n_total": len(grp), "n_flagged": len(grp) - len(ok),
               "n_aggregated": len(ok), "failure_rate": (len(grp) - len(ok)) / len(grp)}
        if ok:
            col = lambda k: np.array([r[k] for r in ok], dtype=float)
            fdp, tdp = col("fdp"), col("tdp")
            n_false, n_rej, n_sig = col("n_false"), col("n_rejected"), col("n_signals")
            mfdr, mtdr = marginal_rates(ErrorReport(r["fdp"], r["tdp"], r["n_rejected"],
                                                    r["n_signals"], r["n_false"]) for r in ok)
            agg.update(FDR_hat=float(np.mean(fdp)), FDR_se=_se(fdp),
                       TDR_hat=float(np.mean(tdp)), TDR_se=_se(tdp),
                       mFDR_hat=mfdr, mFDR_se=_ratio_se(n_false, n_rej),
                       mTDR_hat=mtdr, mTDR_se=_ratio_se(n_rej - n_false, n_sig),
                       mean_post_fdr=float(np.mean(col("post_fdr"))),
                       max_post_fdr=float(np.max(col("post_fdr"))))
            if ok[0]["rho"] is not None:
                agg["median_rho"] = float(np.median(col("rho")))
                agg["median_err_Q"] = float(np.median(col("err_Q")))
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run every ``(N, replicate)`` and aggregate. Deterministic given the config."""
    lam_star = None
    if "PluginTrueH" in cfg.pipelines:
        lam_star = estimate_lambda_star(cfg.params, cfg.t, cfg.pilot_paths, cfg.pilot_length,
                                        cfg.master_seed)
    jobs = [(cfg, N, r, lam_star) for N in cfg.N_grid for r in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_job, jobs))
    else:
        chunks = [_job(j) for j in jobs]
    rows = sorted((row for chunk in chunks for row in chunk),
                  key=lambda r: (r["N"], r["replicate"], PIPELINES.index(r["pipeline"])))
    return ExperimentReport(cfg.to_dict(), tuple(rows), tuple(aggregate_rows(rows)), lam_star)


def estimation_risk_curve(cfg: ExperimentConfig, report: ExperimentReport | None = None,
                          threads: int = 1) -> list[dict]:
    """Per ``N``: median rho-loss of the full empirical fit next to ``r_N``."""
    if len(cfg.N_grid) < 3:
        raise ValueError("a risk curve needs at least three sample sizes")
    if report is None:
        report = run_experiment(replace(cfg, pipelines=("FullEmpirical",)), threads)
    table = []
    for N in cfg.N_grid:
        rho = report.column("rho", N, "FullEmpirical")
        table.append({"N": N, "median_rho": float(np.median(rho)) if rho.size else math.nan,
                      "r_N": rate(N, cfg.s), "n": int(rho.size)})
    return table


def rate_slope(table: Sequence[dict], x: str = "r_N", y: str = "median_rho") -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log([row[x] for row in table])
    ly = np.log([row[y] for row in table])
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# Minimax stress instances
# ---------------------------------------------------------------------------

def _smooth_bump(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    inside = np.abs(v) < 1
    out[inside] = np.exp(-1.0 / (1.0 - v[inside] ** 2))
    return out


def bump(u):
    """Smooth, odd, ``sup |psi| = 1``, zero integral, support in ``(-1/2, 1/2)``."""
    u = np.asarray(u, dtype=float)
    out = math.e * (_smooth_bump(4 * u + 1) - _smooth_bump(4 * u - 1))
    return float(out) if out.ndim == 0 else out


@register_emission
@dataclass(frozen=True)
class PerturbedGaussian(EmissionModel):
    """``r phi(r x) + A psi(M x - m + 1/2)``: a scaled normal with bump ``m`` of ``M`` added."""

    r: float
    A: float = 0.0
    M: int = 1
    m: int = 1
    kind: ClassVar[str] = "perturbed_gaussian"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = self.r * stats.norm.pdf(self.r * x) + self.A * bump(self.M * x - self.m + 0.5)
        return float(out) if out.ndim == 0 else out

    def bump_interval(self) -> tuple[float, float]:
        return (self.m - 1) / self.M, self.m / self.M

    def sample(self, rng, size):
        # Rejection from r phi(r x) plus a uniform slab of height A over the bump.
        lo, hi = self.bump_interval()
        slab = self.A * (hi - lo)
        out = np.empty(0)
        while out.size < size:
            n = 2 * (size - out.size) + 16
            from_slab = rng.uniform(size=n) < slab / (1 + slab)
            x = np.where(from_slab, rng.uniform(lo, hi, size=n), rng.standard_normal(n) / self.r)
            env = self.r * stats.norm.pdf(self.r * x) + self.A * ((x > lo) & (x < hi))
            keep = rng.uniform(size=n) * env <= self.pdf(x)
            out = np.concatenate([out, x[keep]])
        return out[:size]

    def support(self):
        return -9.0 / self.r, 9.0 / self.r

    def to_dict(self):
        return {"kind": self.kind, "r": self.r, "A": self.A, "M": self.M, "m": self.m}


@dataclass(frozen=True)
class MinimaxInstance:
    r: float
    A: float
    M: int
    m: int
    densities: tuple

    def check_grid(self, n: int = 4096) -> np.ndarray:
        """Grid over ``[0, 1]`` that contains every bump's extrema."""
        k = np.arange(1, self.M + 1)
        ext = np.concatenate([(k - 0.75) / self.M, (k - 0.25) / self.M])
        return np.unique(np.concatenate([np.linspace(0.0, 1.0, n), ext]))


def minimax_instance(m: int, A: float, M: int, r: float = 1.0) -> MinimaxInstance:
    """Pair ``(g_0, g_{m,A})`` of emission densities that differ by one bump."""
    if not 1 <= m <= M:
        raise ValueError("bump index must satisfy 1 <= m <= M")
    g = PerturbedGaussian(r, A, M, m)
    lo, hi = g.bump_interval()
    xs = np.linspace(lo, hi, 2049)
    if np.min(g.pdf(xs)) < 0:
        raise NotADensity(f"bump height {A} makes the density negative")
    return MinimaxInstance(r, A, M, m, (PerturbedGaussian(r), g))


# ---------------------------------------------------------------------------
# Chain diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostics:
    kappa: float
    gamma_star: float
    delta: float
    singular: bool = False


def condition_number(Q) -> float:
    """Spectral condition number ``||Q|| ||Q^-1||``."""
    Q = np.asarray(getattr(Q, "entries", Q), dtype=float)
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= 1e-14 * sv[0]:
        raise SingularQ("transition matrix is not invertible")
    return float(sv[0] / sv[-1])


def diagnostics(Q) -> Diagnostics:
    """Condition number, absolute spectral gap and smallest entry of a two-state ``Q``."""
    Q = Q if isinstance(Q, TransitionMatrix) else TransitionMatrix(Q)
    if Q.J != 2:
        raise ValueError("closed-form diagnostics are for two-state chains")
    p, q = Q.entries[0, 1], Q.entries[1, 0]
    gamma = 0.0 if p + q == 0 else 1.0 - abs(1.0 - p - q)
    try:
        kappa, singular = condition_number(Q), False
    except SingularQ:
        kappa, singular = math.inf, True
    return Diagnostics(kappa, float(gamma), Q.delta, singular)
