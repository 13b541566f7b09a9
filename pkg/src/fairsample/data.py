"""Datasets, CSV ingestion, splitting, rebalancing and synthetic generators."""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: Optional[int] = None
    group: Optional[int] = None


def _frozen(a, dtype):
    if a is None:
        return None
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable array-backed collection of examples.

    ``ids`` carry record identity across splits. ``components`` holds the
    hidden mixture-component tag of synthetic examples (``None`` otherwise).
    """

    X: np.ndarray
    labels: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None
    num_classes: int = 2
    num_groups: int = 2
    name: str = ""
    ids: Optional[np.ndarray] = None
    components: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n = len(X)
        object.__setattr__(self, "X", _frozen(X, np.float64))
        ids = np.arange(n) if self.ids is None else self.ids
        for name, arr in (("labels", self.labels), ("groups", self.groups),
                          ("ids", ids), ("components", self.components)):
            arr = _frozen(arr, np.int64)
            if arr is not None and arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per example")
            object.__setattr__(self, name, arr)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.groups is not None and self.num_groups < 2:
            raise ValueError("num_groups must be >= 2 when groups are present")
        if self.labels is not None and n and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValueError("label out of range")
        if self.groups is not None and n and (
            self.groups.min() < 0 or self.groups.max() >= self.num_groups
        ):
            raise ValueError("group out of range")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i) -> Example:
        return Example(
            self.X[i],
            None if self.labels is None else int(self.labels[i]),
            None if self.groups is None else int(self.groups[i]),
        )

    @property
    def examples(self):
        return [self[i] for i in range(len(self))]

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        pick = lambda a: None if a is None else a[idx]
        return replace(self, X=self.X[idx], labels=pick(self.labels),
                       groups=pick(self.groups), ids=self.ids[idx],
                       components=pick(self.components),
                       name=self.name if name is None else name)

    def without_groups(self) -> "Dataset":
        return replace(self, groups=None)

    def with_features(self, X) -> "Dataset":
        return replace(self, X=X)


def concat(parts: Sequence[Dataset], name="") -> Dataset:
    first = parts[0]
    cat = lambda attr: (None if any(getattr(p, attr) is None for p in parts)
                        else np.concatenate([getattr(p, attr) for p in parts]))
    return Dataset(np.vstack([p.X for p in parts]), cat("labels"), cat("groups"),
                   first.num_classes, first.num_groups, name,
                   cat("ids"), cat("components"))


# -- CSV -------------------------------------------------------------------


def load_csv(path, schema: dict) -> Dataset:
    """Read a CSV with a header row.

    ``schema`` keys: ``features`` (list of column names), optional ``label``
    and ``group`` column names, optional ``num_classes`` / ``num_groups``.
    When a count is absent it is inferred as ``max(value) + 1`` (at least 2).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    feat_cols = list(schema.get("features") or [])
    if not feat_cols:
        raise ValueError("schema must name at least one feature column")
    label_col = schema.get("label")
    group_col = schema.get("group")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        wanted = feat_cols + [c for c in (label_col, group_col) if c is not None]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValueError(f"schema columns not in header: {missing}")
        pos = {c: header.index(c) for c in wanted}
        rows, labels, groups = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[pos[c]]) for c in feat_cols])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric feature cell") from None
            for col, out in ((label_col, labels), (group_col, groups)):
                if col is None:
                    continue
                cell = row[pos[col]].strip()
                try:
                    value = int(cell)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: column {col!r} must be an integer") from None
                if value < 0:
                    raise ValueError(f"{path}:{lineno}: column {col!r} must be nonnegative")
                out.append(value)

    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    K = schema.get("num_classes") or max(2, max(labels, default=-1) + 1)
    A = schema.get("num_groups") or max(2, max(groups, default=-1) + 1)
    if labels and max(labels) >= K:
        raise ValueError(f"label out of range: {max(labels)} >= {K}")
    if groups and max(groups) >= A:
        raise ValueError(f"group out of range: {max(groups)} >= {A}")
    return Dataset(X, labels if label_col else None, groups if group_col else None,
                   int(K), int(A), name=path.stem)


# -- splitting -------------------------------------------------------------


class LabelPool:
    """Unlabeled candidate pool.

    Features are public. Labels and groups are held privately; the only way
    to read a label is :meth:`query_true_label`, which charges the budget
    once per distinct candidate.
    """

    def __init__(self, ds: Dataset):
        if ds.labels is None:
            raise ValueError("pool needs ground-truth labels behind the oracle")
        self._data = ds
        self._queried: dict = {}
        self._lock = threading.Lock()

    @property
    def X(self) -> np.ndarray:
        return self._data.X

    @property
    def ids(self) -> np.ndarray:
        return self._data.ids

    @property
    def dim(self) -> int:
        return self._data.dim

    @property
    def num_classes(self) -> int:
        return self._data.num_classes

    def __len__(self):
        return len(self._data)

    def query_true_label(self, candidate_id: int) -> int:
        i = int(candidate_id)
        if not 0 <= i < len(self._data):
            raise IndexError(f"candidate id {i} out of range [0, {len(self._data)})")
        with self._lock:
            label = int(self._data.labels[i])
            self._queried.setdefault(i, label)
        return label

    @property
    def budget_used(self) -> int:
        return len(self._queried)

    @property
    def queried_ids(self):
        return sorted(self._queried)

    def labeled_subset(self, candidate_ids) -> Dataset:
        """Queried candidates as a labeled dataset (groups stay hidden)."""
        idx = [int(i) for i in candidate_ids]
        labels = [self.query_true_label(i) for i in idx]
        sub = self._data.subset(idx)
        return replace(sub, labels=labels, groups=None, components=None)


@dataclass
class SplitBundle:
    train_P: Dataset
    pool_U: LabelPool
    validation_Qv: Dataset
    test_Q: Dataset


def query_true_label(bundle: SplitBundle, candidate_id: int) -> int:
    return bundle.pool_U.query_true_label(candidate_id)


def _split_sizes(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw + 1e-9).astype(int)
    # largest remainder
    short = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes


def standardize(bundle: SplitBundle) -> SplitBundle:
    """Zero-mean, unit-variance features using statistics of ``train_P``."""
    mu = bundle.train_P.X.mean(axis=0) if len(bundle.train_P) else 0.0
    sd = bundle.train_P.X.std(axis=0) if len(bundle.train_P) else 1.0
    sd = np.where(sd > 0, sd, 1.0)
    f = lambda ds: ds.with_features((ds.X - mu) / sd)
    return SplitBundle(f(bundle.train_P), LabelPool(f(bundle.pool_U._data)),
                       f(bundle.validation_Qv), f(bundle.test_Q))


def make_bundle(train, pool, val, test, standardized=True) -> SplitBundle:
    bundle = SplitBundle(train.without_groups(), LabelPool(pool), val, test)
    return standardize(bundle) if standardized else bundle


def split(ds: Dataset, fractions, seed: int = 0, standardized: bool = True) -> SplitBundle:
    """Partition ``ds`` into (train, pool, validation, test).

    Sizes follow the fractions with largest-remainder rounding; membership
    comes from one seeded permutation. Features are standardized on the
    train part unless ``standardized`` is false.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (4,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be four nonnegative numbers summing to 1")
    perm = np.random.default_rng(seed).permutation(len(ds))
    bounds = np.concatenate([[0], np.cumsum(_split_sizes(len(ds), fr))])
    parts = [ds.subset(perm[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    names = ("train", "pool", "validation", "test")
    parts = [replace(p, name=f"{ds.name}:{nm}") for p, nm in zip(parts, names)]
    return make_bundle(*parts, standardized=standardized)


def balance_oversample(ds: Dataset, seed: int = 0) -> Dataset:
    """Random oversampling so every (class, group) cell matches the largest.

    Originals are kept; each smaller cell is topped up by drawing from its own
    members with replacement.
    """
    if ds.labels is None or ds.groups is None:
        raise ValueError("balancing needs labels and groups")
    rng = np.random.default_rng(seed)
    cells = {}
    for k in range(ds.num_classes):
        for a in range(ds.num_groups):
            members = np.flatnonzero((ds.labels == k) & (ds.groups == a))
            if members.size == 0:
                raise ValueError(f"empty (class, group) cell ({k}, {a})")
            cells[(k, a)] = members
    target = max(len(v) for v in cells.values())
    extra = [rng.choice(v, size=target - len(v), replace=True)
             for _, v in sorted(cells.items())]
    idx = np.concatenate([np.arange(len(ds))] + extra)
    return ds.subset(idx)


def cell_counts(ds: Dataset) -> dict:
    return {(k, a): int(np.sum((ds.labels == k) & (ds.groups == a)))
            for k in range(ds.num_classes) for a in range(ds.num_groups)}


# -- synthetic data ----------------------------------------------------------


def _check_frequencies(freqs, n_components, what):
    p = np.asarray(freqs, dtype=np.float64)
    if p.shape != (n_components,):
        raise ValueError(f"{what} must have length {n_components}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{what} must be nonnegative and sum to 1")
    return p


@dataclass(frozen=True)
class ComponentMixture:
    """Mixture of Gaussian components, each with a fixed class and group.

    Component ``i`` draws ``x ~ N(means[i], noise**2 I)`` and always carries
    label ``classes[i]`` and group ``groups[i]``.
    """

    means: np.ndarray
    classes: np.ndarray
    groups: np.ndarray
    frequencies: np.ndarray
    noise: float = 1.0
    num_classes: int = 2
    num_groups: int = 2

    def __post_init__(self):
        _check_frequencies(self.frequencies, len(self.means), "frequencies")

    @property
    def num_components(self) -> int:
        return len(self.means)

    def sample_component(self, i: int, n: int, rng) -> Dataset:
        return self._build(np.full(n, i, dtype=int), rng)

    def sample(self, n: int, frequencies=None, rng=None, name="") -> Dataset:
        rng = np.random.default_rng(rng)
        p = self.frequencies if frequencies is None else _check_frequencies(
            frequencies, self.num_components, "frequencies")
        tags = rng.choice(self.num_components, size=n, p=p)
        return self._build(tags, rng, name)

    def _build(self, tags, rng, name=""):
        X = self.means[tags] + self.noise * rng.standard_normal((len(tags), self.means.shape[1]))
        return Dataset(X, self.classes[tags], self.groups[tags], self.num_classes,
                       self.num_groups, name, components=tags)


def component_frequencies(ds: Dataset, num_components: int) -> np.ndarray:
    if ds.components is None:
        raise ValueError(f"dataset {ds.name!r} has no component tags")
    if len(ds) == 0:
        raise ValueError("no samples to estimate frequencies from")
    return np.bincount(ds.components, minlength=num_components) / len(ds)


def make_mixture(num_components, dim, num_classes=2, num_groups=2,
                 frequencies=None, seed=0, separation=1.0, noise=1.0) -> ComponentMixture:
    if num_components < 1 or dim < 1:
        raise ValueError("need at least one component and one dimension")
    rng = np.random.default_rng(seed)
    idx = np.arange(num_components)
    freqs = (np.full(num_components, 1.0 / num_components)
             if frequencies is None else frequencies)
    return ComponentMixture(
        means=separation * rng.standard_normal((num_components, dim)),
        classes=idx % num_classes,
        groups=(idx // num_classes) % num_groups,
        frequencies=np.asarray(freqs, dtype=np.float64),
        noise=noise, num_classes=num_classes, num_groups=num_groups,
    )


def make_synthetic_mixture(num_components, dim, num_classes, num_groups,
                           frequencies_P, frequencies_Q, seed=0,
                           n_train=10000, n_test=10000, separation=1.0, noise=1.0):
    """Train and test samples drawn from one component family under two
    different mixing weights.

    Returns:
        (train Dataset, test Dataset, ComponentMixture) -- the mixture's
        ``frequencies`` are the train weights.
    """
    pP = _check_frequencies(frequencies_P, num_components, "frequencies_P")
    pQ = _check_frequencies(frequencies_Q, num_components, "frequencies_Q")
    ss = np.random.SeedSequence(seed)
    s_mix, s_train, s_test = ss.spawn(3)
    mixture = make_mixture(num_components, dim, num_classes, num_groups, pP,
                           seed=s_mix, separation=separation, noise=noise)
    train = mixture.sample(n_train, pP, np.random.default_rng(s_train), "train")
    test = mixture.sample(n_test, pQ, np.random.default_rng(s_test), "test")
    return train, test, mixture


def make_biased_population(n, rng, minority_fraction=0.5, dim=10,
                           shift=1.6, marker=1.0, name="", id_offset=0):
    """Two-group binary task where the groups need different decision rules.

    Labels are balanced and independent of group. In group 0 the label is
    read off feature 0 around a threshold of 0; group 1 is shifted by
    ``shift`` along feature 0 and by ``marker`` along feature 1. A model fit
    mostly to group 0 therefore over-predicts the positive class for group 1.
    """
    groups = (rng.random(n) < minority_fraction).astype(int)
    labels = (rng.random(n) < 0.5).astype(int)
    X = rng.standard_normal((n, dim))
    X[:, 0] += np.where(labels == 1, 1.0, -1.0) + shift * groups
    X[:, 1] += marker * (2 * groups - 1)
    return Dataset(X, labels, groups, 2, 2, name, ids=id_offset + np.arange(n))


def make_biased_fixture(seed=0, n_train=500, n_pool=4000, n_val=300, n_test=1000,
                        train_minority_fraction=0.05, dim=10, shift=1.6,
                        marker=1.0) -> SplitBundle:
    """Group-skewed labeled set; pool, validation and test share one balanced
    distribution."""
    rng = np.random.default_rng(seed)
    kw = dict(dim=dim, shift=shift, marker=marker)
    offsets = np.cumsum([0, n_train, n_pool, n_val])
    train = make_biased_population(n_train, rng, train_minority_fraction, name="train",
                                   id_offset=offsets[0], **kw)
    pool = make_biased_population(n_pool, rng, 0.5, name="pool", id_offset=offsets[1], **kw)
    val = make_biased_population(n_val, rng, 0.5, name="validation", id_offset=offsets[2], **kw)
    test = make_biased_population(n_test, rng, 0.5, name="test", id_offset=offsets[3], **kw)
    return make_bundle(train, pool, val, test, standardized=False)
