"""Empirical check of the distribution-shift generalization and risk-disparity
bounds on synthetic component mixtures.

Population constants (loss bounds, gradient bound, smoothness) are not
observable, so they are replaced by empirical maxima over fresh samples from
each mixture component. The resulting reports are estimates: a negative slack
is kept in the output rather than clipped.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .data import ComponentMixture, Dataset, component_frequencies, make_synthetic_mixture
from .model import (ModelState, TrainConfig, init_model, losses, per_example_grads,
                    sgd_train, weighted_loss_grad)
from .seeds import derive_seed

CONSTANT_KEYS = ("G_P", "G_k", "G", "L", "Phi", "Upsilon", "varpi", "varpi_k",
                 "dist_PQ", "dist_PkQk", "dist_PkP", "N_P", "N_Pk", "delta")


def dist(pA, pB) -> float:
    """L1 distance between two component-frequency vectors."""
    a = np.asarray(pA, dtype=np.float64)
    b = np.asarray(pB, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("frequency vectors must be 1-d and of equal length")
    for v in (a, b):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("frequency vectors must be nonnegative and sum to 1")
    return float(np.abs(a - b).sum())


def mixture_risk(example_losses, components, num_components) -> float:
    """Mean loss rewritten as a frequency-weighted sum of per-component means."""
    loss = np.asarray(example_losses, dtype=np.float64)
    comp = np.asarray(components, dtype=int)
    freqs = np.bincount(comp, minlength=num_components) / len(comp)
    total = 0.0
    for i in range(num_components):
        sel = comp == i
        if sel.any():
            total += freqs[i] * loss[sel].mean()
    return float(total)


def concentration_term(n: int, delta: float) -> float:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 1:
        raise ValueError("sample count must be positive")
    return math.sqrt(math.log(4.0 / delta) / (2.0 * n))


def generalization_rhs(G_P, dist_PQ, N_P, delta, train_risk) -> float:
    return G_P * dist_PQ + concentration_term(N_P, delta) + train_risk


def phi_constant(L, G, eta, T) -> float:
    """``4 L^2 G^2 sum_{t=0}^{T-1} (eta^2 (1 + 2 eta^2 L^2))^t``."""
    base = eta ** 2 * (1.0 + 2.0 * eta ** 2 * L ** 2)
    return 4.0 * L ** 2 * G ** 2 * sum(base ** t for t in range(int(T)))


@dataclass
class BoundReport:
    kind: str
    lhs: float
    rhs: float
    slack: float
    constants: dict
    sample_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class BoundConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.05, epochs=30, batch_size=64))
    hidden_sizes: tuple = (16,)
    samples_per_component: int = 2000
    reference_size: int = 2000
    curvature_pairs: int = 8
    curvature_radius: float = 0.05
    delta: float = 0.05
    seed: int = 0


def estimate_constants(m: ModelState, mixture: ComponentMixture,
                       samples_per_component: int, seed: int = 0,
                       curvature_pairs: int = 8, curvature_radius: float = 0.05) -> dict:
    """Empirical stand-ins for the per-component loss bound, the gradient
    bound and the smoothness constant of ``m``.

    Component ``i`` is sampled with its own seeded stream, so a larger
    ``samples_per_component`` extends (never replaces) the smaller sample.

    Returns:
        dict with ``loss_bound`` (max over components of mean loss),
        ``component_losses``, ``G`` (max per-sample gradient norm), ``L``
        (max gradient-difference quotient over random nearby parameter pairs)
        and ``samples``.
    """
    if samples_per_component < 1:
        raise ValueError("need at least one sample per component")
    parts = [mixture.sample_component(i, samples_per_component,
                                      np.random.default_rng(derive_seed(seed, f"component/{i}")))
             for i in range(mixture.num_components)]
    comp_losses = [float(losses(m, p.X, p.labels).mean()) for p in parts]
    G = 0.0
    for p in parts:
        for start in range(0, len(p), 1024):
            rows = slice(start, start + 1024)
            grads = per_example_grads(m, p.X[rows], p.labels[rows])
            G = max(G, float(np.sqrt((grads ** 2).sum(axis=1)).max()))

    X = np.vstack([p.X for p in parts])
    y = np.concatenate([p.labels for p in parts])
    rng = np.random.default_rng(derive_seed(seed, "curvature"))
    L = 0.0
    for _ in range(curvature_pairs):
        u = rng.standard_normal((2, m.params.size))
        u *= curvature_radius / np.linalg.norm(u, axis=1, keepdims=True)
        v, w = m.params + u[0], m.params + u[1]
        gv = weighted_loss_grad(m.with_params(v), X, y) / len(y)
        gw = weighted_loss_grad(m.with_params(w), X, y) / len(y)
        L = max(L, float(np.linalg.norm(gv - gw) / np.linalg.norm(v - w)))
    return {"loss_bound": max(comp_losses), "component_losses": comp_losses,
            "G": G, "L": L, "samples": samples_per_component * mixture.num_components}


def _fit(ds: Dataset, cfg: BoundConfig, stage: str) -> ModelState:
    if len(ds) == 0:
        raise ValueError(f"cannot fit a reference model on an empty set ({stage})")
    sizes = (ds.dim, *cfg.hidden_sizes, ds.num_classes)
    m = init_model(sizes, derive_seed(cfg.seed, "init"))
    tc = replace(cfg.train, seed=derive_seed(cfg.seed, stage))
    return sgd_train(m, ds.X, ds.labels, tc)[0]


def _risk(m, ds):
    return float(losses(m, ds.X, ds.labels).mean())


def _group(ds: Dataset, k: int, what: str) -> Dataset:
    if ds.groups is None:
        raise ValueError(f"{what} has no group ids")
    sub = ds.subset(np.flatnonzero(ds.groups == k))
    if len(sub) == 0:
        raise ValueError(f"group {k} has no examples in {what}")
    return sub


def _default_group(train: Dataset) -> int:
    counts = np.bincount(train.groups, minlength=train.num_groups)
    present = np.flatnonzero(counts > 0)
    return int(present[np.argmin(counts[present])])


def _measure(train, test, mixture, k, delta, cfg: BoundConfig, reference=None):
    """Everything both bounds need, computed once."""
    for ds, what in ((train, "train"), (test, "test")):
        if ds.components is None:
            raise ValueError(f"{what} set has no component tags")
    concentration_term(max(len(train), 1), delta)
    I = mixture.num_components
    k = _default_group(train) if k is None else int(k)
    P_k = _group(train, k, "train")
    Q_k = _group(test, k, "test")

    if reference is None:
        rng = np.random.default_rng(derive_seed(cfg.seed, "reference"))
        reference = mixture.sample(cfg.reference_size, component_frequencies(test, I), rng,
                                   name="reference")
    ref_k = _group(reference, k, "reference")

    w_P = _fit(train, cfg, "fit/P")
    w_k = _fit(P_k, cfg, "fit/Pk")
    w_Q = _fit(reference, cfg, "fit/Q")
    w_Qk = _fit(ref_k, cfg, "fit/Qk")

    kw = dict(samples_per_component=cfg.samples_per_component,
              curvature_pairs=cfg.curvature_pairs, curvature_radius=cfg.curvature_radius)
    est_P = estimate_constants(w_P, mixture, seed=derive_seed(cfg.seed, "estimate"), **kw)
    est_k = estimate_constants(w_k, mixture, seed=derive_seed(cfg.seed, "estimate"), **kw)

    pP, pQ = component_frequencies(train, I), component_frequencies(test, I)
    pPk, pQk = component_frequencies(P_k, I), component_frequencies(Q_k, I)
    R_P = _risk(w_P, train)
    varpi = R_P - _risk(w_Q, reference)
    varpi_k = _risk(w_k, P_k) - _risk(w_Qk, ref_k)
    phi = phi_constant(est_P["L"], est_P["G"], cfg.train.learning_rate, cfg.train.epochs)
    upsilon = (concentration_term(len(train), delta) + concentration_term(len(P_k), delta)
               + varpi + varpi_k)
    constants = {
        "G_P": est_P["loss_bound"], "G_k": est_k["loss_bound"], "G": est_P["G"],
        "L": est_P["L"], "Phi": phi, "Upsilon": upsilon, "varpi": varpi,
        "varpi_k": varpi_k, "dist_PQ": dist(pP, pQ), "dist_PkQk": dist(pPk, pQk),
        "dist_PkP": dist(pPk, pP), "N_P": float(len(train)), "N_Pk": float(len(P_k)),
        "delta": float(delta),
    }
    extras = {
        "group": k, "T": cfg.train.epochs, "eta": cfg.train.learning_rate,
        "R_P": R_P, "R_Q": _risk(w_P, test), "R_Qk": _risk(w_P, Q_k),
        "component_losses_P": est_P["component_losses"],
        "component_losses_k": est_k["component_losses"],
    }
    counts = {"N_P": len(train), "N_Pk": len(P_k), "N_Q": len(test), "N_Qk": len(Q_k),
              "N_reference": len(reference), "constant_samples": est_P["samples"]}
    return constants, extras, counts


def _generalization(constants, extras, counts):
    lhs = extras["R_Q"]
    rhs = generalization_rhs(constants["G_P"], constants["dist_PQ"], counts["N_P"],
                             constants["delta"], extras["R_P"])
    return BoundReport("generalization", lhs, rhs, rhs - lhs,
                       {**constants, **_scalars(extras)}, counts)


def _disparity(constants, extras, counts):
    c = constants
    lhs = extras["R_Qk"] - extras["R_Q"]
    rhs = (c["G_k"] * c["dist_PkQk"] + c["G_P"] * c["dist_PQ"]
           + c["Phi"] * c["dist_PkP"] ** 2 + c["Upsilon"])
    return BoundReport("disparity", lhs, rhs, rhs - lhs, {**constants, **_scalars(extras)}, counts)


def _scalars(extras):
    return {k: float(v) for k, v in extras.items() if np.isscalar(v)}


def check_generalization_bound(train: Dataset, test: Dataset, mixture: ComponentMixture,
                               delta: float = 0.05, cfg: Optional[BoundConfig] = None,
                               k: Optional[int] = None, reference=None) -> BoundReport:
    """Measured test risk of a model fit on ``train`` against
    ``G_P * dist(P, Q) + sqrt(log(4/delta) / 2 N_P) + R_P``."""
    cfg = cfg or BoundConfig()
    return _generalization(*_measure(train, test, mixture, k, delta, cfg, reference))


def check_disparity_bound(train: Dataset, test: Dataset, mixture: ComponentMixture,
                          k: Optional[int] = None, delta: float = 0.05,
                          cfg: Optional[BoundConfig] = None, reference=None) -> BoundReport:
    """Measured risk disparity of group ``k`` against its upper bound."""
    cfg = cfg or BoundConfig()
    return _disparity(*_measure(train, test, mixture, k, delta, cfg, reference))


def check_both(train, test, mixture, k=None, delta=0.05, cfg=None, reference=None):
    cfg = cfg or BoundConfig()
    measured = _measure(train, test, mixture, k, delta, cfg, reference)
    return _generalization(*measured), _disparity(*measured)


@dataclass(frozen=True)
class SweepSpec:
    """Synthetic setting for a bound sweep; ``frequencies_Q`` of ``None``
    draws a fresh Dirichlet test mixture per trial."""

    num_components: int = 4
    dim: int = 5
    num_classes: int = 2
    num_groups: int = 2
    frequencies_P: tuple = (0.4, 0.4, 0.1, 0.1)
    frequencies_Q: Optional[tuple] = None
    dirichlet_alpha: float = 2.0
    n_train: int = 1000
    n_test: int = 1000
    separation: float = 1.0
    group: Optional[int] = None


def run_trial(spec: SweepSpec, cfg: BoundConfig, trial: int, seed: int = 0):
    trial_seed = derive_seed(seed, f"trial/{trial}")
    if spec.frequencies_Q is None:
        rng = np.random.default_rng(derive_seed(trial_seed, "frequencies"))
        fQ = rng.dirichlet(np.full(spec.num_components, spec.dirichlet_alpha))
        fQ = fQ / fQ.sum()
    else:
        fQ = np.asarray(spec.frequencies_Q, dtype=np.float64)
    train, test, mixture = make_synthetic_mixture(
        spec.num_components, spec.dim, spec.num_classes, spec.num_groups,
        spec.frequencies_P, fQ, seed=derive_seed(trial_seed, "mixture"),
        n_train=spec.n_train, n_test=spec.n_test, separation=spec.separation)
    gen, disp = check_both(train, test, mixture, spec.group, cfg.delta,
                           replace(cfg, seed=derive_seed(trial_seed, "harness")))
    for rep in (gen, disp):
        rep.constants["trial"] = float(trial)
    return gen, disp


def bound_sweep(spec: Optional[SweepSpec] = None, cfg: Optional[BoundConfig] = None,
                trials: int = 20, seed: int = 0, threads: int = 1):
    """Run independent seeded trials; returns a list of (generalization,
    disparity) report pairs in trial order."""
    spec = spec or SweepSpec()
    cfg = cfg or BoundConfig()
    if threads <= 1:
        return [run_trial(spec, cfg, t, seed) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda t: run_trial(spec, cfg, t, seed), range(trials)))
