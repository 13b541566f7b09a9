"""Group fairness gaps, risk disparity, and a differentiable fairness surrogate.

Hard gaps compare rates of thresholded predictions across groups. With more
than two groups each rate gap is the largest pairwise difference (max - min).
The surrogate replaces hard predictions with the model's class-1 probability
so that it can be differentiated with respect to the parameters.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import GradScope, ModelState, evaluate, forward, losses, predict, prob_grad


class FairnessMetricKind(str, enum.Enum):
    DP = "DP"
    EOp = "EOp"
    EOd = "EOd"


def _as_kind(kind) -> FairnessMetricKind:
    return kind if isinstance(kind, FairnessMetricKind) else FairnessMetricKind(kind)


def _n_groups(groups, num_groups):
    if num_groups is not None:
        return int(num_groups)
    return max(2, int(groups.max()) + 1) if groups.size else 2


def _rate_gap(values, groups, mask, num_groups, what):
    rates = []
    for a in range(num_groups):
        sel = mask & (groups == a)
        if not sel.any():
            raise ValueError(f"group {a} has no {what}")
        rates.append(values[sel].mean())
    return float(max(rates) - min(rates))


def _arrays(predictions, labels, groups):
    preds = np.asarray(predictions)
    grp = np.asarray(groups, dtype=int)
    if preds.shape != grp.shape:
        raise ValueError("predictions and groups differ in length")
    lab = None
    if labels is not None:
        lab = np.asarray(labels, dtype=int)
        if lab.shape != grp.shape:
            raise ValueError("labels and groups differ in length")
    return (preds == 1).astype(float), lab, grp


def dp_gap(predictions, groups, num_groups=None) -> float:
    """Demographic parity gap: spread of positive-prediction rates."""
    pos, _, grp = _arrays(predictions, None, groups)
    return _rate_gap(pos, grp, np.ones(grp.shape, bool), _n_groups(grp, num_groups), "examples")


def eop_gap(predictions, labels, groups, num_groups=None) -> float:
    """Equality-of-opportunity gap: spread of true-positive rates."""
    pos, lab, grp = _arrays(predictions, labels, groups)
    return _rate_gap(pos, grp, lab == 1, _n_groups(grp, num_groups), "positive labels")


def eod_gap(predictions, labels, groups, num_groups=None) -> float:
    """Equalized-odds gap as the mean of the TPR gap and the FPR gap."""
    pos, lab, grp = _arrays(predictions, labels, groups)
    A = _n_groups(grp, num_groups)
    tpr = _rate_gap(pos, grp, lab == 1, A, "positive labels")
    fpr = _rate_gap(pos, grp, lab == 0, A, "negative labels")
    return 0.5 * (tpr + fpr)


def risk_disparity_from_losses(example_losses, groups, k) -> float:
    loss = np.asarray(example_losses, dtype=np.float64)
    grp = np.asarray(groups, dtype=int)
    sel = grp == k
    if not sel.any():
        raise ValueError(f"group {k} is empty")
    return float(loss[sel].mean() - loss.mean())


def risk_disparity(m: ModelState, test: Dataset, k: int) -> float:
    """Mean loss on group ``k`` minus mean loss on the whole set (signed)."""
    if test.labels is None or test.groups is None:
        raise ValueError("risk disparity needs labels and groups")
    if not 0 <= k < test.num_groups:
        raise ValueError(f"group {k} out of range [0, {test.num_groups})")
    return risk_disparity_from_losses(losses(m, test.X, test.labels), test.groups, k)


# -- surrogate ---------------------------------------------------------------


def _subsets(val: Dataset, kind: FairnessMetricKind):
    """Label restrictions whose group gaps make up the surrogate."""
    if val.groups is None:
        raise ValueError("fairness surrogate needs group ids on the validation set")
    if kind is FairnessMetricKind.DP:
        return [np.ones(len(val), dtype=bool)]
    if val.labels is None:
        raise ValueError(f"{kind.value} surrogate needs labels")
    if kind is FairnessMetricKind.EOp:
        return [val.labels == 1]
    return [val.labels == 1, val.labels == 0]


def _gap_term(m, val, restrict, scope, with_grad):
    """Signed gap between the highest and lowest group mean of p(y=1|x) on
    the restricted subset, plus its gradient."""
    idx = np.flatnonzero(restrict)
    groups = val.groups[idx]
    counts = np.bincount(groups, minlength=val.num_groups)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"group {empty} has no examples in a required subgroup")
    p = forward(m, val.X[idx])[:, 1]
    means = np.bincount(groups, weights=p, minlength=val.num_groups) / counts
    if val.num_groups == 2:
        hi, lo = 0, 1
    else:
        hi, lo = int(np.argmax(means)), int(np.argmin(means))
    signed = float(means[hi] - means[lo])
    if not with_grad:
        return signed, None
    w = np.zeros(len(idx))
    w[groups == hi] += 1.0 / counts[hi]
    w[groups == lo] -= 1.0 / counts[lo]
    _, g = prob_grad(m, val.X[idx], 1, weights=w, scope=scope)
    return signed, g


def signed_gap(m: ModelState, val: Dataset, kind, scope: GradScope = "full"):
    """Signed surrogate terms and gradients, one pair per label restriction.

    For two groups each term is ``mean_{a=0} p1 - mean_{a=1} p1``.
    """
    kind = _as_kind(kind)
    return [_gap_term(m, val, r, scope, True) for r in _subsets(val, kind)]


def surrogate_value(m: ModelState, val: Dataset, kind) -> float:
    kind = _as_kind(kind)
    terms = [abs(_gap_term(m, val, r, "full", False)[0]) for r in _subsets(val, kind)]
    return float(np.mean(terms))


def surrogate_grad(m: ModelState, val: Dataset, kind, scope: GradScope = "full") -> np.ndarray:
    """Gradient of :func:`surrogate_value`.

    Each absolute gap contributes ``sign(gap) * grad(gap)``; a gap of exactly
    zero contributes nothing (zero subgradient).
    """
    terms = signed_gap(m, val, kind, scope)
    g = np.zeros_like(m.params)
    for value, grad in terms:
        g += np.sign(value) * grad
    return g / len(terms)


# -- reports -----------------------------------------------------------------


@dataclass
class FairnessReport:
    accuracy: float
    dp_gap: float
    eop_gap: float
    eod_gap: float
    risk_disparity_per_group: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["risk_disparity_per_group"] = {str(k): v for k, v in self.risk_disparity_per_group.items()}
        return d


def fairness_report(m: ModelState, ds: Dataset) -> FairnessReport:
    preds = predict(m, ds.X)
    acc, _ = evaluate(m, ds)
    loss = losses(m, ds.X, ds.labels)
    A = ds.num_groups
    return FairnessReport(
        accuracy=acc,
        dp_gap=dp_gap(preds, ds.groups, A),
        eop_gap=eop_gap(preds, ds.labels, ds.groups, A),
        eod_gap=eod_gap(preds, ds.labels, ds.groups, A),
        risk_disparity_per_group={
            k: risk_disparity_from_losses(loss, ds.groups, k) for k in range(A)
        },
    )
