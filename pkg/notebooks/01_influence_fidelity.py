# %% [markdown]
# # First-order influence vs the exact one-step change
#
# Train a small MLP on the biased fixture, score pool candidates, and compare
# the first-order estimates with the exact change after one SGD step.

# %%
import numpy as np

from fairsample.data import make_biased_fixture
from fairsample.influence import (exact_one_step_oracle, influence_table, relative_error,
                                  validation_gradients)
from fairsample.model import TrainConfig, init_model, sgd_train

b = make_biased_fixture(seed=0)
m = init_model((10, 16, 2), seed=0)
m = sgd_train(m, b.train_P.X, b.train_P.labels, TrainConfig(learning_rate=0.05, epochs=5, batch_size=64))[0]
val = b.validation_Qv

# %% Guess labels with the min-|influence| rule, then run the oracle
X = b.pool_U.X[:100]
acc, fair = influence_table(m, X, validation_gradients(m, val, "DP"), 1.0)
labels = np.argmin(np.abs(acc), axis=1)

rows = []
for x, y in zip(X, labels):
    res = exact_one_step_oracle(m, x, int(y), val, 1e-3, "DP")
    rows.append((res.delta_loss_exact, res.first_order_loss, res.delta_fair_exact, res.first_order_fair))
rows = np.array(rows)

# %%
rel = [relative_error(e, f) for e, f, _, _ in rows]
print("median relative error (loss):", np.median(rel))
print("median relative error (fairness):", np.median([relative_error(e, f) for _, _, e, f in rows]))
print("sign agreement (loss):", np.mean(np.sign(rows[:, 0]) == np.sign(rows[:, 1])))

# %% Error of the linear estimate shrinks roughly quadratically in the step size
for eta in (1e-2, 1e-3, 1e-4):
    errs = [abs(r.delta_loss_exact - r.first_order_loss)
            for r in (exact_one_step_oracle(m, x, int(y), val, eta) for x, y in zip(X[:20], labels[:20]))]
    print(f"eta={eta:.0e}  mean abs error {np.mean(errs):.3e}")
