# %% [markdown]
# # Empirical check of the shift bounds
#
# Train on a component mixture with frequencies P, evaluate on Q, and compare the
# observed test risk (and group disparity) against the estimated right-hand sides.

# %%
import numpy as np

from fairsample.bounds import BoundConfig, SweepSpec, bound_sweep, dist

print(dist([0.4, 0.4, 0.1, 0.1], [0.1, 0.1, 0.4, 0.4]))

# %%
results = bound_sweep(SweepSpec(), BoundConfig(), trials=20, seed=0, threads=4)
gen = np.array([(g.constants["dist_PQ"], g.lhs, g.rhs) for g, _ in results])
disp = np.array([(d.lhs, d.rhs) for _, d in results])
print("generalization slack >= 0:", int(np.sum(gen[:, 2] >= gen[:, 1])), "/ 20")
print("disparity slack >= 0:", int(np.sum(disp[:, 1] >= disp[:, 0])), "/ 20")

# %% The bound loosens as P and Q move apart
for d, lhs, rhs in gen[np.argsort(gen[:, 0])]:
    print(f"dist {d:.3f}  test risk {lhs:.3f}  bound {rhs:.3f}")

# %% Constants of one trial
g, d = results[0]
print({k: round(v, 4) for k, v in d.constants.items()})
