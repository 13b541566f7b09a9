# %% [markdown]
# # Fairness gaps and the differentiable surrogate

# %%
import numpy as np

from fairsample.data import make_biased_fixture
from fairsample.fairness import (dp_gap, eod_gap, eop_gap, fairness_report, risk_disparity,
                                 surrogate_value)
from fairsample.model import TrainConfig, forward, init_model, sgd_train

print(dp_gap([1, 1, 1, 0, 1, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1]))
print(eop_gap([1, 1, 0, 1, 0, 0], [1, 1, 0, 1, 1, 0], [0, 0, 0, 1, 1, 1]))
print(eod_gap([1, 0, 1, 0], [1, 0, 1, 0], [0, 0, 1, 1]))

# %% Hard gap and surrogate move together during training
b = make_biased_fixture(seed=0)
m = init_model((10, 32, 2), seed=0)
test = b.test_Q
for epoch in range(0, 30, 5):
    pred = np.argmax(forward(m, test.X), axis=1)
    print(epoch, round(dp_gap(pred, test.groups), 3), round(surrogate_value(m, test, "DP"), 3))
    m = sgd_train(m, b.train_P.X, b.train_P.labels,
                  TrainConfig(learning_rate=0.05, epochs=5, batch_size=64, seed=epoch))[0]

# %%
print(fairness_report(m, test))
print({k: risk_disparity(m, test, k) for k in (0, 1)})
