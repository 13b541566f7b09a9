"""Fair influential sampling and baseline acquisition loops.

Every strategy shares one loop: warm-start on the labeled set, then for each
round pick candidates from the pool, buy their true labels, retrain on the
labeled set plus everything bought so far (bought examples weighted by
``new_data_weight``), and log a :class:`RoundRecord`.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import SplitBundle
from .fairness import FairnessMetricKind, fairness_report
from .influence import (LabelStrategy, score_candidates,
                        validation_gradients)
from .model import ModelState, TrainConfig, evaluate, forward, init_model, sgd_train
from .seeds import derive_seed


class BaselineKind(str, enum.Enum):
    ERM = "ERM"
    Random = "Random"
    Uncertainty = "Uncertainty"
    InfluenceOnly = "InfluenceOnly"
    JTT = "JTT"


@dataclass(frozen=True)
class FisConfig:
    rounds: int = 5
    budget_per_round: int = 64
    tolerance: float = 0.05
    metric: str = "DP"
    label_strategy: str = "MinInfluence"
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_epochs: Optional[int] = None
    hidden_sizes: tuple = (64,)
    seed: int = 0
    influence_eta: Optional[float] = None
    from_scratch: bool = False
    jtt_weight: float = 20.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.budget_per_round < 1:
            raise ValueError("budget_per_round must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.jtt_weight < 1:
            raise ValueError("jtt_weight must be >= 1")
        FairnessMetricKind(self.metric)
        LabelStrategy(self.label_strategy)
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    @property
    def eta(self) -> float:
        return self.train.learning_rate if self.influence_eta is None else self.influence_eta

    @property
    def warmup(self) -> int:
        return self.train.epochs if self.warm_epochs is None else self.warm_epochs


@dataclass
class RoundRecord:
    round: int
    strategy: str
    selected_ids: list
    checkpoint_id: str
    val_accuracy: float
    val_fairness: dict
    test_fairness: dict
    budget_consumed: int
    accepted: bool
    tolerance_threshold: Optional[float]
    output_threshold: float
    in_output_set: bool
    eligible_count: Optional[int] = None
    selected_scores: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    records: list
    checkpoints: dict
    influence_dumps: dict = field(default_factory=dict)

    @property
    def output_models(self) -> dict:
        return {r.round: self.checkpoints[r.round] for r in self.records if r.in_output_set}

    @property
    def warm_start(self) -> RoundRecord:
        return self.records[0]

    @property
    def final(self) -> RoundRecord:
        """Record of the model the loop ends with (the last accepted round)."""
        return [r for r in self.records if r.accepted][-1]


# -- selection ---------------------------------------------------------------


def select_fair_candidates(scores, r: int):
    """Candidates with both influences <= 0, most negative fairness influence
    first, ties by id; at most ``r`` of them."""
    eligible = [s for s in scores if s.infl_acc <= 0 and s.infl_fair <= 0]
    eligible.sort(key=lambda s: (s.infl_fair, s.candidate_id))
    return [s.candidate_id for s in eligible[:r]], len(eligible)


def _remaining(pool, exclude):
    taken = set(int(i) for i in exclude)
    return np.array([i for i in range(len(pool)) if i not in taken], dtype=int)


def fis_select_round(m: ModelState, pool, val, cfg: FisConfig, exclude=()):
    """One round of fair influential selection against a frozen snapshot.

    Returns:
        (selected candidate ids, list of InfluenceScore for every unselected
        pool candidate that was scored)
    """
    ids = _remaining(pool, exclude if exclude else getattr(pool, "queried_ids", ()))
    if ids.size == 0:
        raise ValueError("pool has no candidates left")
    scope = cfg.train.grad_scope
    vg = validation_gradients(m, val, cfg.metric, scope)
    scores = score_candidates(m, pool.X[ids], ids, vg, cfg.eta, cfg.label_strategy)
    selected, _ = select_fair_candidates(scores, cfg.budget_per_round)
    return selected, scores


def _top_by(keys, ids, r):
    order = np.lexsort((ids, keys))
    return [int(ids[i]) for i in order[:r]]


def _baseline_selector(kind: BaselineKind, cfg: FisConfig):
    r = cfg.budget_per_round

    def random_pick(m, pool, val, ids, t):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"random/{t}"))
        return sorted(int(i) for i in rng.choice(ids, size=min(r, ids.size), replace=False)), None

    def uncertainty_pick(m, pool, val, ids, t):
        p = forward(m, pool.X[ids])
        entropy = -np.sum(p * np.log(np.clip(p, 1e-300, None)), axis=1)
        return _top_by(-entropy, ids, r), None

    def influence_pick(m, pool, val, ids, t):
        vg = validation_gradients(m, val, None, cfg.train.grad_scope)
        scores = score_candidates(m, pool.X[ids], ids, vg, cfg.eta, LabelStrategy.MaxPrediction)
        keys = np.array([s.infl_acc for s in scores])
        return _top_by(keys, ids, r), scores

    return {BaselineKind.Random: random_pick,
            BaselineKind.Uncertainty: uncertainty_pick,
            BaselineKind.InfluenceOnly: influence_pick}[kind]


def _fis_selector(cfg: FisConfig):
    def pick(m, pool, val, ids, t):
        vg = validation_gradients(m, val, cfg.metric, cfg.train.grad_scope)
        scores = score_candidates(m, pool.X[ids], ids, vg, cfg.eta, cfg.label_strategy)
        selected, _ = select_fair_candidates(scores, cfg.budget_per_round)
        return selected, scores
    return pick


# -- loop --------------------------------------------------------------------


def _layer_sizes(bundle, cfg):
    return (bundle.train_P.dim, *cfg.hidden_sizes, bundle.train_P.num_classes)


def _train(m, X, y, w, cfg: FisConfig, epochs, stage):
    tc = replace(cfg.train, epochs=epochs, seed=derive_seed(cfg.seed, stage))
    return sgd_train(m, X, y, tc, w)[0]


def _reports(m, bundle):
    return (fairness_report(m, bundle.validation_Qv).to_dict(),
            fairness_report(m, bundle.test_Q).to_dict())


def _check_bundle(bundle: SplitBundle, cfg: FisConfig, needs_pool: bool):
    if len(bundle.train_P) == 0:
        raise ValueError("train_P is empty")
    if needs_pool and cfg.rounds * cfg.budget_per_round > len(bundle.pool_U):
        raise ValueError(
            f"budget {cfg.rounds} x {cfg.budget_per_round} exceeds pool size {len(bundle.pool_U)}")


def warm_start(bundle: SplitBundle, cfg: FisConfig) -> ModelState:
    m0 = init_model(_layer_sizes(bundle, cfg), derive_seed(cfg.seed, "init"))
    P = bundle.train_P
    return _train(m0, P.X, P.labels, None, cfg, cfg.warmup, "train/0")


def _run_loop(bundle: SplitBundle, cfg: FisConfig, name: str,
              selector: Optional[Callable]) -> RunResult:
    P, val = bundle.train_P, bundle.validation_Qv
    pool = bundle.pool_U
    m = warm_start(bundle, cfg)
    val0 = evaluate(m, val)[0]
    vf, tf = _reports(m, bundle)
    records = [RoundRecord(0, name, [], "round-0", val0, vf, tf, pool.budget_used,
                           True, None, val0, False)]
    checkpoints = {0: m}
    dumps = {}
    if selector is None:
        return RunResult(records, checkpoints, dumps)

    bought: list = []
    current, current_val = m, val0
    for t in range(1, cfg.rounds + 1):
        ids = _remaining(pool, bought)
        selected, scores = selector(current, pool, val, ids, t) if ids.size else ([], None)
        for i in selected:
            pool.query_true_label(i)
        bought.extend(selected)
        if scores is not None:
            dumps[t] = scores
        by_id = {s.candidate_id: s for s in scores} if scores else {}

        new = pool.labeled_subset(bought) if bought else None
        X = P.X if new is None else np.vstack([P.X, new.X])
        y = P.labels if new is None else np.concatenate([P.labels, new.labels])
        w = np.concatenate([np.ones(len(P)), np.full(len(X) - len(P), cfg.train.new_data_weight)])
        if not selected:
            # training set unchanged, so the model carries over
            m_t = current
        elif cfg.from_scratch:
            start = init_model(_layer_sizes(bundle, cfg), derive_seed(cfg.seed, "init"))
            m_t = _train(start, X, y, w, cfg, cfg.warmup, f"train/{t}")
        else:
            m_t = _train(current, X, y, w, cfg, cfg.train.epochs, f"train/{t}")

        val_t = evaluate(m_t, val)[0]
        threshold = current_val - cfg.tolerance
        accepted = val_t >= threshold
        vf, tf = _reports(m_t, bundle)
        records.append(RoundRecord(
            t, name, [int(i) for i in selected], f"round-{t}", val_t, vf, tf,
            pool.budget_used, bool(accepted), threshold, val0,
            bool(accepted and val_t > val0),
            eligible_count=(sum(1 for s in scores if s.infl_acc <= 0 and s.infl_fair <= 0)
                            if name == "FIS" and scores else None),
            selected_scores=[by_id[i].to_dict() for i in selected if i in by_id],
        ))
        checkpoints[t] = m_t
        if accepted:
            current, current_val = m_t, val_t
    return RunResult(records, checkpoints, dumps)


def fis_run(bundle: SplitBundle, cfg: FisConfig) -> RunResult:
    """Fair influential sampling, end to end.

    Rounds whose validation accuracy falls more than ``tolerance`` below the
    last accepted round are logged but not continued from. The output set is
    the accepted rounds whose validation accuracy beats the warm start.
    """
    _check_bundle(bundle, cfg, needs_pool=True)
    return _run_loop(bundle, cfg, "FIS", _fis_selector(cfg))


def baseline_run(bundle: SplitBundle, kind, cfg: FisConfig) -> RunResult:
    kind = BaselineKind(kind)
    if kind is BaselineKind.ERM:
        _check_bundle(bundle, cfg, needs_pool=False)
        return _run_loop(bundle, cfg, kind.value, None)
    if kind is BaselineKind.JTT:
        _check_bundle(bundle, cfg, needs_pool=False)
        return _jtt_run(bundle, cfg)
    _check_bundle(bundle, cfg, needs_pool=True)
    return _run_loop(bundle, cfg, kind.value, _baseline_selector(kind, cfg))


def jtt_weights(m: ModelState, X, y, weight: float) -> np.ndarray:
    wrong = np.argmax(forward(m, X), axis=1) != np.asarray(y)
    return np.where(wrong, float(weight), 1.0)


def _jtt_run(bundle: SplitBundle, cfg: FisConfig) -> RunResult:
    """Just-train-twice: retrain from the same initialization with examples
    the warm-start model got wrong upweighted by ``jtt_weight``."""
    result = _run_loop(bundle, cfg, BaselineKind.JTT.value, None)
    P = bundle.train_P
    w = jtt_weights(result.checkpoints[0], P.X, P.labels, cfg.jtt_weight)
    start = init_model(_layer_sizes(bundle, cfg), derive_seed(cfg.seed, "init"))
    m = _train(start, P.X, P.labels, w, cfg, cfg.warmup, "train/0")
    val0 = result.records[0].val_accuracy
    val1 = evaluate(m, bundle.validation_Qv)[0]
    vf, tf = _reports(m, bundle)
    threshold = val0 - cfg.tolerance
    accepted = val1 >= threshold
    result.records.append(RoundRecord(1, BaselineKind.JTT.value, [], "round-1", val1, vf, tf,
                                      bundle.pool_U.budget_used, bool(accepted), threshold,
                                      val0, bool(accepted and val1 > val0)))
    result.checkpoints[1] = m
    return result
