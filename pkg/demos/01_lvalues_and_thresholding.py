"""
Posterior null probabilities and the adaptive threshold
=======================================================

Simulate a two-state chain with Gaussian emissions, compute l-values under
the true model and reject the smallest ones while their running average
stays below the target level.
"""

import numpy as np

from hmmfdr import (Gaussian, HmmParams, TransitionMatrix, error_report, l_values,
                    procedure_hat, simulate)

H = HmmParams.from_transitions(TransitionMatrix([[0.7, 0.3], [0.2, 0.8]]),
                               [Gaussian(0, 1), Gaussian(2, 1)])
path = simulate(H, 5000, seed=1)

lv = l_values(path.observations, H)
out = procedure_hat(lv, t=0.1)
rep = error_report(path.states, out.rejections)

print(f"rejected {out.K_hat} of {len(lv)} positions, threshold {out.lambda_hat:.4f}")
print(f"posterior FDR {out.post_fdr:.4f}, realised FDP {rep.fdp:.4f}, TDP {rep.tdp:.4f}")

# The same observation is treated differently depending on its neighbours.
x = path.observations
near = np.flatnonzero(np.abs(x - 1.0) < 0.01)
for i in near[:5]:
    print(f"x[{i}] = {x[i]:.3f}  l = {lv.values[i]:.3f}  neighbours {x[max(0, i - 1)]:.2f}, "
          f"{x[min(len(x) - 1, i + 1)]:.2f}")
