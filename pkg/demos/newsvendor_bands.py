# %% [markdown]
# # Robust newsvendor with shape-restricted and kernel bands
#
# Demand follows a normal law with mean 100 and sd 50 truncated to [0, 250].
# With shortage cost 19 and holding cost 1 the optimal order is the 0.95
# quantile. We compare the robust order from a shape-restricted band, the
# robust order from a KDE band, and the sample-average order against that
# optimum as the sample grows.

# %%
import numpy as np
from scipy import stats

from bandro.band_kde import build_kde_band
from bandro.band_sr import build_sr_band
from bandro.core import Rng
from bandro.dro import SgdConfig, sgd_solve
from bandro.problems import Newsvendor, out_of_sample_cost, saa_solution, true_density

law = true_density("truncated_normal")
prob = Newsvendor()
p = law.params
truth = stats.truncnorm((p["a"] - p["mean"]) / p["sd"], (p["b"] - p["mean"]) / p["sd"],
                        loc=p["mean"], scale=p["sd"])
x_star = truth.ppf(prob.critical_quantile())
test = law.sample(Rng(99), 100_000)
print(f"optimal order {x_star:.2f}, cost {out_of_sample_cost(prob, [x_star], test):.2f}")

# %% [markdown]
# The shape-restricted band knows the support, the mode and a density cap.
# It is tabulated before solving so that the solver only interpolates.

# %%
sgd = SgdConfig(batch=64, eta=5.0, eta_lam=50.0, iters=2000)
for N in (20, 80, 320):
    data = law.sample(Rng(1, N), N)
    sr = build_sr_band(data, 0, 250, law.mode, law.cap, alpha=0.2, rng=Rng(2, N)).tabulate(201)
    kde = build_kde_band(data, "epanechnikov", h=1.06 * data.univariate().std() * N ** -0.2,
                         delta=0.0005, box=law.box)
    x_sr = sgd_solve(prob, sr, sgd, Rng(3, N), data=data).x
    x_kde = sgd_solve(prob, kde, sgd, Rng(4, N), data=data).x
    x_saa = saa_solution(prob, data)
    costs = [out_of_sample_cost(prob, x, test) for x in (x_sr, x_kde, [x_saa])]
    print(f"N={N:4d}  SR {x_sr[0]:6.1f} ({costs[0]:.2f})  KDE {x_kde[0]:6.1f} ({costs[1]:.2f})"
          f"  SAA {x_saa:6.1f} ({costs[2]:.2f})")

# %% [markdown]
# Robust orders sit above the optimum because the worst case pushes mass
# towards high demand, where shortages are expensive. The shape-restricted
# band stays conservative at these sizes: the last group of order statistics
# leaves the upper tail loosely constrained, so its worst case keeps mass
# near 250. The KDE band with a small half-width tracks the sample-average
# order much more closely.
