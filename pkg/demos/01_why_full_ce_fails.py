"""
Why cross-entropy with a full covariance breaks down in high dimension
=======================================================================

The failure domain here is the half-space {x_1 + ... + x_n >= 3 sqrt(n)}, so
P = Phi(-3) ~ 1.35e-3 in every dimension.  We follow one run of plain CE
(full covariance) and one run of CE-m* (covariance kept to a rank-one
correction along the mean) at n = 100, printing the level gamma_t, the
effective sample size of the weights and, for CE-m*, the variance v along
the mean direction.
"""

import numpy as np
from scipy import special

from rare_sim import EstimatorConfig, FullCovariance, RankOneAlongMean, make_rng, run_ce
from rare_sim.limit_states import LinearSum

n = 100
P = special.ndtr(-3.0)
print(f"n = {n}, exact P = {P:.4e}\n")

# Plain CE: the full n x n covariance is estimated from about rho N = 100
# elite points.  Its eigenvalues spread out, the likelihood ratio becomes
# degenerate, and the level stalls.
full = run_ce(LinearSum(n), EstimatorConfig(family=FullCovariance(), sample_size=1000), make_rng(1))
print("CE, full covariance (N = 1000)")
for step in full.trace:
    print(f"  t={step.t}  gamma={step.level:8.3f}  ESS={step.effective_sample_size:8.1f}")
print(f"  converged: {full.converged}  ({full.reason or 'stopped'})\n")

# CE-m*: only the mean and a single variance are learned.  Orthogonal to
# the mean the density stays standard, which is what the optimal density
# looks like for this problem.
proj = run_ce(LinearSum(n), EstimatorConfig(family=RankOneAlongMean(), sample_size=2700), make_rng(1))
print("CE-m*, rank-one covariance (N = 2700)")
for step in proj.trace:
    cov = step.params.covariance
    v = getattr(cov, "variance", 1.0)
    print(
        f"  t={step.t}  gamma={step.level:8.3f}  ESS={step.effective_sample_size:8.1f}"
        f"  |m|={np.linalg.norm(step.params.mean):.3f}  v={v:.4f}"
    )
print(f"  estimate {proj.p_hat:.4e} (relative error {proj.p_hat / P - 1:+.2%}), budget {proj.budget}")

# The optimal density has |m*| = lambda(3) ~ 3.283 and v* ~ 0.0706; CE-m*
# lands close to both after a handful of batches.
