"""Feed-forward ReLU classifier with explicit per-example gradients.

Parameters live in a single flat vector. Each layer contributes its weight
matrix (``in x out``, row-major) followed by its bias (``out``), in layer
order. Hidden layers use ReLU; the output layer is a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import Dataset, Example

GradScope = Union[str, int]


@dataclass(frozen=True)
class ModelState:
    params: np.ndarray
    layer_sizes: tuple
    step: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output layer")
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (num_params(sizes),):
            raise ValueError(
                f"params length {params.size} does not match layer_sizes {sizes}"
            )
        object.__setattr__(self, "params", params)

    @property
    def dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params, step=None) -> "ModelState":
        return replace(self, params=np.array(params, dtype=np.float64),
                       step=self.step if step is None else step)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    new_data_weight: float = 2.0
    grad_scope: GradScope = "full"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.new_data_weight < 1:
            raise ValueError("new_data_weight must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.grad_scope != "full" and not (
            isinstance(self.grad_scope, int) and self.grad_scope >= 1
        ):
            raise ValueError("grad_scope must be 'full' or a positive layer count")


def num_params(layer_sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def unpack(params, layer_sizes):
    """Split a flat parameter vector into a list of ``(W, b)`` views."""
    layers = []
    offset = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = params[offset:offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((W, b))
    return layers


def scope_mask(layer_sizes, scope: GradScope = "full") -> np.ndarray:
    """Boolean mask over the flat params selecting the scoped layers.

    ``"full"`` selects everything; an integer ``n`` selects the last ``n``
    layers (weights and biases).
    """
    n_layers = len(layer_sizes) - 1
    mask = np.zeros(num_params(layer_sizes), dtype=bool)
    if scope == "full":
        mask[:] = True
        return mask
    n = int(scope)
    if n < 1:
        raise ValueError("grad scope must cover at least one layer")
    offset = 0
    for i, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        size = (n_in + 1) * n_out
        if i >= n_layers - n:
            mask[offset:offset + size] = True
        offset += size
    return mask


def init_model(layer_sizes: Sequence[int], seed: int = 0) -> ModelState:
    """Uniform fan-in initialization: ``U(-1/sqrt(in), 1/sqrt(in))`` for
    weights and biases alike. Deterministic in ``seed``."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_out))
    return ModelState(np.concatenate(chunks), sizes)


def _as_batch(m: ModelState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.dim:
        raise ValueError(f"expected features of length {m.dim}, got shape {X.shape}")
    return X


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(m: ModelState, X: np.ndarray):
    """Returns (layer inputs, log-probabilities, probabilities)."""
    layers = unpack(m.params, m.layer_sizes)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    shifted = h - h.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return acts, log_probs, np.exp(log_probs)


def _backprop(m: ModelState, acts, delta: np.ndarray, per_example: bool) -> np.ndarray:
    """Push output-logit deltas back through the network.

    With ``per_example`` the result has shape ``(n, P)``; otherwise the
    deltas are summed over the batch and the result has shape ``(P,)``.
    """
    layers = unpack(m.params, m.layer_sizes)
    n = delta.shape[0]
    pieces = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a = acts[i]
        if per_example:
            gW = (a[:, :, None] * delta[:, None, :]).reshape(n, -1)
            gb = delta
        else:
            gW = (a.T @ delta).ravel()
            gb = delta.sum(axis=0)
        pieces.append((gW, gb))
        if i > 0:
            delta = (delta @ W.T) * (a > 0)
    pieces.reverse()
    flat = []
    for gW, gb in pieces:
        flat.extend([gW, gb])
    return np.concatenate(flat, axis=1 if per_example else 0)


def forward(m: ModelState, x) -> np.ndarray:
    """Class probabilities for one feature vector (``(K,)``) or a batch
    (``(n, K)``)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    _, _, probs = _forward(m, _as_batch(m, X))
    return probs[0] if single else probs


def predict(m: ModelState, X) -> np.ndarray:
    # np.argmax resolves ties toward the lowest class index
    return np.argmax(forward(m, _as_batch(m, X)), axis=1)


def _onehot(y, K):
    y = np.asarray(y, dtype=int)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    out = np.zeros((y.size, K))
    out[np.arange(y.size), y] = 1.0
    return out


def losses(m: ModelState, X, y) -> np.ndarray:
    """Per-example cross-entropy."""
    X = _as_batch(m, X)
    y = np.asarray(y, dtype=int)
    _onehot(y, m.num_classes)
    _, log_probs, _ = _forward(m, X)
    return -log_probs[np.arange(len(y)), y]


def per_example_grads(m: ModelState, X, y, scope: GradScope = "full") -> np.ndarray:
    """Cross-entropy gradients, one row per example, shape ``(n, P)``."""
    X = _as_batch(m, X)
    acts, _, probs = _forward(m, X)
    G = _backprop(m, acts, probs - _onehot(y, m.num_classes), per_example=True)
    if scope != "full":
        G[:, ~scope_mask(m.layer_sizes, scope)] = 0.0
    return G


def weighted_loss_grad(m: ModelState, X, y, weights=None, scope: GradScope = "full"):
    """Gradient of ``sum_i w_i * loss_i`` without materializing per-example
    rows."""
    X = _as_batch(m, X)
    acts, _, probs = _forward(m, X)
    delta = probs - _onehot(y, m.num_classes)
    if weights is not None:
        delta = delta * np.asarray(weights, dtype=np.float64)[:, None]
    g = _backprop(m, acts, delta, per_example=False)
    if scope != "full":
        g[~scope_mask(m.layer_sizes, scope)] = 0.0
    return g


def prob_grad(m: ModelState, X, cls: int, weights=None, scope: GradScope = "full"):
    """Returns ``(p, g)`` where ``p[i]`` is the probability of class ``cls``
    on row ``i`` and ``g`` is the gradient of ``sum_i w_i * p[i]``."""
    X = _as_batch(m, X)
    acts, _, probs = _forward(m, X)
    p = probs[:, cls]
    e = np.zeros(m.num_classes)
    e[cls] = 1.0
    delta = p[:, None] * (e[None, :] - probs)
    if weights is not None:
        delta = delta * np.asarray(weights, dtype=np.float64)[:, None]
    g = _backprop(m, acts, delta, per_example=False)
    if scope != "full":
        g[~scope_mask(m.layer_sizes, scope)] = 0.0
    return p, g


def _require_label(z: Example) -> int:
    if z.label is None:
        raise ValueError("example has no label")
    return int(z.label)


def example_loss(m: ModelState, z: Example) -> float:
    y = _require_label(z)
    return float(losses(m, z.features, [y])[0])


def grad_example_loss(m: ModelState, z: Example, scope: GradScope = "full") -> np.ndarray:
    y = _require_label(z)
    return per_example_grads(m, z.features, [y], scope)[0]


def sgd_train(m: ModelState, X, y, cfg: TrainConfig, weights=None):
    """Mini-batch SGD on a weighted cross-entropy objective.

    Each step moves along the gradient of ``sum(w_i * loss_i) / sum(w_i)``
    over the batch. Batches come from a per-epoch permutation drawn from
    ``cfg.seed``, so identical inputs give identical trajectories.

    Returns:
        (trained ModelState, list of per-epoch mean batch losses)
    """
    X = _as_batch(m, X)
    y = np.asarray(y, dtype=int)
    n = len(y)
    if n == 0:
        raise ValueError("cannot train on empty data")
    if len(X) != n:
        raise ValueError("features and labels differ in length")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector, one per example")

    rng = np.random.default_rng(cfg.seed)
    params = m.params.copy()
    step = m.step
    history = []
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            wb = w[idx]
            total = wb.sum()
            if total == 0:
                continue
            cur = ModelState(params, m.layer_sizes, step)
            acts, log_probs, probs = _forward(cur, X[idx])
            epoch_losses.append(float(-(wb * log_probs[np.arange(len(idx)), y[idx]]).sum() / total))
            delta = (probs - _onehot(y[idx], m.num_classes)) * (wb / total)[:, None]
            params = params - lr * _backprop(cur, acts, delta, per_example=False)
            step += 1
        history.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
    return ModelState(params, m.layer_sizes, step), history


def evaluate(m: ModelState, ds: Dataset):
    """Returns ``(accuracy, mean cross-entropy)`` on a labeled dataset."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    acc = float(np.mean(predict(m, ds.X) == ds.labels))
    return acc, float(np.mean(losses(m, ds.X, ds.labels)))


def save_checkpoint(m: ModelState, path) -> None:
    """Text checkpoint: a ``layer_sizes`` header, a ``step`` line, then one
    parameter per line at 17 significant digits (bit-exact round trip)."""
    lines = ["layer_sizes " + " ".join(str(s) for s in m.layer_sizes), f"step {m.step}"]
    lines.extend(format(float(v), ".17g") for v in m.params)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelState:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if not head or head[0] != "layer_sizes":
        raise ValueError(f"{path}: missing layer_sizes header")
    sizes = tuple(int(s) for s in head[1:])
    step_line = lines[1].split()
    if len(step_line) != 2 or step_line[0] != "step":
        raise ValueError(f"{path}: missing step line")
    params = np.array([float(v) for v in lines[2:] if v.strip()])
    return ModelState(params, sizes, int(step_line[1]))
