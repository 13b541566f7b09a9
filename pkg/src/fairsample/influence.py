"""First-order influence of a single candidate example on a validation set.

One counterfactual SGD step on a candidate ``(x', y)`` moves the parameters
by ``-eta * g(x', y)``. To first order this changes the summed validation
loss by ``-eta * <g(x', y), sum_n grad loss_n>`` and the fairness surrogate by
``-eta * <g(x', y), grad surrogate>``. Negative values predict improvement.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .fairness import FairnessMetricKind, surrogate_grad, surrogate_value
from .model import (GradScope, ModelState, forward, losses, per_example_grads,
                    weighted_loss_grad)


class LabelStrategy(str, enum.Enum):
    MinInfluence = "MinInfluence"
    MaxPrediction = "MaxPrediction"


@dataclass(frozen=True)
class InfluenceScore:
    candidate_id: int
    guessed_label: int
    infl_acc: float
    infl_fair: float
    strategy_used: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ValidationGradients:
    """Validation-side gradients for one frozen model snapshot.

    ``fair_grad`` is ``None`` when no fairness metric was requested.
    """

    loss_grad: np.ndarray
    fair_grad: Optional[np.ndarray]
    scope: GradScope = "full"


def validation_gradients(m: ModelState, val: Dataset, kind=None,
                         scope: GradScope = "full") -> ValidationGradients:
    if val.labels is None:
        raise ValueError("validation set needs labels")
    g_loss = weighted_loss_grad(m, val.X, val.labels, scope=scope)
    g_fair = None if kind is None else surrogate_grad(m, val, kind, scope)
    return ValidationGradients(g_loss, g_fair, scope)


def _check_x(m, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dim:
        raise ValueError(f"expected features of length {m.dim}, got {x.shape[-1]}")
    return x


def infl_acc(m: ModelState, x, y_hyp: int, val: Dataset, eta: float,
             scope: GradScope = "full", cache: Optional[ValidationGradients] = None) -> float:
    """Predicted change of the summed validation loss after one step on
    ``(x, y_hyp)``."""
    x = _check_x(m, x)
    vg = cache or validation_gradients(m, val, None, scope)
    g = per_example_grads(m, x, [y_hyp], scope)[0]
    return float(-eta * (g @ vg.loss_grad))


def infl_fair(m: ModelState, x, y_hyp: int, val: Dataset, eta: float, kind,
              scope: GradScope = "full", cache: Optional[ValidationGradients] = None) -> float:
    """Predicted change of the fairness surrogate after one step on
    ``(x, y_hyp)``."""
    x = _check_x(m, x)
    vg = cache if cache is not None and cache.fair_grad is not None else \
        validation_gradients(m, val, kind, scope)
    g = per_example_grads(m, x, [y_hyp], scope)[0]
    return float(-eta * (g @ vg.fair_grad))


def influence_table(m: ModelState, X, vg: ValidationGradients, eta: float,
                    chunk: int = 1024):
    """Influences of every candidate under every hypothetical label.

    Returns:
        ``(acc, fair)`` arrays of shape ``(n, K)``; ``fair`` is ``None`` when
        ``vg`` has no fairness gradient.
    """
    X = np.atleast_2d(_check_x(m, X))
    n, K = len(X), m.num_classes
    acc = np.empty((n, K))
    fair = None if vg.fair_grad is None else np.empty((n, K))
    for start in range(0, n, chunk):
        rows = slice(start, start + chunk)
        for k in range(K):
            G = per_example_grads(m, X[rows], np.full(len(X[rows]), k), vg.scope)
            acc[rows, k] = -eta * (G @ vg.loss_grad)
            if fair is not None:
                fair[rows, k] = -eta * (G @ vg.fair_grad)
    return acc, fair


def guess_label_min_influence(m: ModelState, x, val: Dataset, eta: float,
                              scope: GradScope = "full",
                              cache: Optional[ValidationGradients] = None):
    """Label whose prediction influence is smallest in magnitude.

    Returns ``(label, per-class influence vector)``; ties go to the lowest
    class index.
    """
    vg = cache or validation_gradients(m, val, None, scope)
    acc, _ = influence_table(m, np.atleast_2d(x), vg, eta)
    return int(np.argmin(np.abs(acc[0]))), acc[0]


def guess_label_max_prediction(m: ModelState, x) -> int:
    return int(np.argmax(forward(m, _check_x(m, x))))


def guess_labels(strategy, acc_table, probs):
    strategy = LabelStrategy(strategy)
    if strategy is LabelStrategy.MinInfluence:
        return np.argmin(np.abs(acc_table), axis=1)
    return np.argmax(probs, axis=1)


def score_candidates(m: ModelState, X, ids, vg: ValidationGradients, eta: float,
                     strategy=LabelStrategy.MinInfluence):
    """Guess a label for each candidate and report its two influences.

    Returns a list of :class:`InfluenceScore`, in the order of ``ids``.
    """
    strategy = LabelStrategy(strategy)
    acc, fair = influence_table(m, X, vg, eta)
    labels = guess_labels(strategy, acc, forward(m, np.atleast_2d(X)))
    rows = np.arange(len(labels))
    fair_vals = np.full(len(labels), np.nan) if fair is None else fair[rows, labels]
    return [
        InfluenceScore(int(i), int(k), float(a), float(f), strategy.value)
        for i, k, a, f in zip(ids, labels, acc[rows, labels], fair_vals)
    ]


@dataclass(frozen=True)
class OracleResult:
    delta_loss_exact: float
    delta_fair_exact: float
    first_order_loss: float
    first_order_fair: float

    def to_dict(self) -> dict:
        return asdict(self)


def exact_one_step_oracle(m: ModelState, x, y_hyp: int, val: Dataset, eta: float,
                          kind=FairnessMetricKind.DP, scope: GradScope = "full") -> OracleResult:
    """Take the counterfactual step for real and measure what changed.

    The exact loss change is summed per validation example so the
    subtraction happens before accumulation.
    """
    x = _check_x(m, x)
    g = per_example_grads(m, x, [y_hyp], scope)[0]
    stepped = m.with_params(m.params - eta * g, m.step + 1)
    before = losses(m, val.X, val.labels)
    after = losses(stepped, val.X, val.labels)
    vg = validation_gradients(m, val, kind, scope)
    return OracleResult(
        delta_loss_exact=float(np.sum(after - before)),
        delta_fair_exact=float(surrogate_value(stepped, val, kind) - surrogate_value(m, val, kind)),
        first_order_loss=float(-eta * (g @ vg.loss_grad)),
        first_order_fair=float(-eta * (g @ vg.fair_grad)),
    )


def relative_error(exact, approx, floor: float = 1e-8):
    exact = np.asarray(exact, dtype=np.float64)
    return np.abs(exact - np.asarray(approx)) / (np.abs(exact) + floor)
