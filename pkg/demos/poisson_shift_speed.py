"""
Speed of the continuous-time walk in a shifting three-periodic pattern
=======================================================================

Edges carry the pattern 1-eps, 1, 1+eps repeating with period 3; at the
arrivals of a Poisson process the pattern shifts by one site.  Seen from the
walker, the local pattern is a three-state chain and the speed is c times
the stationary average of the drift per state change.

The sweep below computes the speed from the embedded chain and from the
continuous-time generator of the relative position, and checks a few values
by Monte Carlo.  The sign changes at eps = -3/(2c+1).  The speed is positive
for eps above that point, including small negative eps, and negative below it.
"""
import math

import numpy as np

from tdrw.analysis import csrw_speed_sign
from tdrw.environments import PoissonShiftParams, poisson_shift_1d, poisson_times
from tdrw.rng import child_seed
from tdrw.walkers import simulate_batch

c = 2.0
print(f"c = {c}, sign change expected at eps = {-3 / (2 * c + 1):.4f}\n")
print("   eps      speed (chain)")
for eps in np.round(np.linspace(-0.9, 0.9, 13), 2) + 0.0:
    print(f"{eps:6.2f}   {csrw_speed_sign(eps, c).beta + 0.0:+.6f}")

eps_star = -3 / (2 * c + 1)
print("\njust above / below the sign change:",
      csrw_speed_sign(eps_star + 0.01, c).sign, csrw_speed_sign(eps_star - 0.01, c).sign)


def monte_carlo(eps, n_env=20, walks=10, horizon=5000.0, seed=0):
    """Annealed speed: fresh breakpoints per environment, clustered s.e."""
    means = []
    for e in range(n_env):
        bp = poisson_times(c - 1, horizon, child_seed(seed, e))
        env = poisson_shift_1d(PoissonShiftParams(eps, c, tuple(bp)))
        v = simulate_batch("csrw", env, [0], walks, child_seed(seed + 1, e), horizon=horizon,
                           reduce=lambda tr: tr.vertices[-1, 0] / horizon)
        means.append(np.mean(v))
    means = np.array(means)
    return means.mean(), means.std(ddof=1) / math.sqrt(n_env)


print("\n   eps    chain       Monte Carlo")
for eps in (0.5, -0.7):
    m, se = monte_carlo(eps)
    print(f"{eps:6.2f}   {csrw_speed_sign(eps, c).beta:+.5f}   {m:+.5f} +- {se:.5f}")
