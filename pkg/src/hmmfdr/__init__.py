"""False discovery rate control for hidden Markov models with nonparametric emissions."""

from .errors import *  # noqa: F401,F403
from .harness import (ExperimentConfig, ExperimentReport, diagnostics, estimation_risk_curve,
                      minimax_instance, rho_loss, run_experiment)
from .hmm_core import (Beta, Cauchy, DiscretePmf, Gaussian, GridDensity, HmmParams,
                       StationaryDist, TransitionMatrix, Uniform, simulate,
                       stationary_distribution)
from .kernels import BandwidthLevel, Kernel, build_kernel, choose_level
from .recovery import ByStationaryMass, ByTailRatio, align_labels, estimate_transition, fit_params
from .smoothing import l_values, windowed_l_value
from .spectral import SpectralFit, estimate_emissions, estimate_emissions_discrete
from .testing import (PLUS_INF, error_report, marginal_rates, post_fdr, procedure_hat,
                      select_k_hat, threshold_procedure)

__version__ = "0.1.0"
