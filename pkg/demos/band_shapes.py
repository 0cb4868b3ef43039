# %% [markdown]
# # What the bands look like
#
# Builds a shape-restricted band and a KDE band from the same Beta(5, 2)
# sample rescaled to [0, 250] and writes both curves to CSV for plotting.
# A coverage count over repeated samples closes the demo.

# %%
import numpy as np

from bandro.band_kde import build_kde_band
from bandro.band_sr import build_sr_band, dump_band_curve, write_band_curve
from bandro.core import Rng
from bandro.problems import true_density

law = true_density("scaled_beta")
grid = np.linspace(0, 250, 201)
data = law.sample(Rng(0), 200)

sr = build_sr_band(data, 0, 250, law.mode, law.cap, alpha=0.2, rng=Rng(1))
kde = build_kde_band(data, "boxcar", h=15.0, delta=0.002, box=law.box)
write_band_curve(dump_band_curve(sr, grid), "sr_band.csv")
write_band_curve(dump_band_curve(kde, grid), "kde_band.csv")

for name, band in (("SR", sr), ("KDE", kde)):
    l, u = band.eval(grid)
    print(f"{name:3s} mean width {np.mean(u - l):.5f}  "
          f"covers truth: {np.all((l <= law.pdf(grid)) & (law.pdf(grid) <= u))}")

# %% [markdown]
# Coverage over 40 fresh samples of size 100 at significance 0.2.

# %%
hits = 0
for r in range(40):
    d = law.sample(Rng(10, r), 100)
    l, u = build_sr_band(d, 0, 250, law.mode, law.cap, 0.2, S=20_000, rng=Rng(11, r)).eval(grid)
    hits += np.all((l <= law.pdf(grid)) & (law.pdf(grid) <= u))
print(f"SR band covered the density in {hits}/40 samples")
