"""Influence-guided data sampling for fairer classifiers.

Sampling never reads the group membership of training or pool examples;
only the small validation set carries groups.
"""

from .data import (ComponentMixture, Dataset, Example, LabelPool, SplitBundle,
                   balance_oversample, load_csv, make_biased_fixture,
                   make_synthetic_mixture, query_true_label, split)
from .fairness import (FairnessMetricKind, FairnessReport, dp_gap, eod_gap, eop_gap,
                       fairness_report, risk_disparity, surrogate_grad, surrogate_value)
from .influence import (InfluenceScore, LabelStrategy, OracleResult, exact_one_step_oracle,
                        guess_label_max_prediction, guess_label_min_influence, infl_acc,
                        infl_fair)
from .model import (ModelState, TrainConfig, evaluate, example_loss, forward,
                    grad_example_loss, init_model, sgd_train)
from .sampling import (BaselineKind, FisConfig, RoundRecord, baseline_run, fis_run,
                       fis_select_round)

__version__ = "0.1.0"
