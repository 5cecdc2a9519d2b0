"""Classifiers used to expose leakage: majority baseline, logistic regression, random forest.

All three record the sample ids they were fitted on so that pipeline audits
can check where their training data came from.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit

from .dataset import Dataset


class ModelError(ValueError):
    pass


class LogisticTrainingError(ModelError):
    pass


def _fit_ids(view: Dataset) -> frozenset[int]:
    return view.id_set


def _check_dim(model, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ModelError(f"model expects {model.n_features} features, got {X.shape[-1]}")


# majority ---------------------------------------------------------------


@dataclass(frozen=True)
class MajorityModel:
    label: int
    n_features: int
    n_classes: int
    fit_sample_ids: frozenset[int] = field(default=frozenset(), repr=False)
    kind = "majority"

    def predict(self, X: np.ndarray) -> np.ndarray:
        _check_dim(self, X)
        return np.full(len(X), self.label, dtype=np.int64)


def train_majority(view: Dataset) -> MajorityModel:
    if len(view) == 0:
        raise ModelError("cannot train on an empty view")
    counts = np.bincount(view.labels, minlength=view.n_classes)
    return MajorityModel(int(np.argmax(counts)), view.n_features, view.n_classes, _fit_ids(view))


# logistic -----------------------------------------------------------------


def logistic_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean binary cross-entropy plus ``l2/2 * |w|^2``, and its gradient in (w, b)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = expit(z) - y
    grad_w = X.T @ r / len(y) + l2 * w
    grad_b = float(np.mean(r))
    return loss, grad_w, grad_b


@dataclass(frozen=True)
class LogisticModel:
    """Binary model when ``weights`` has one row, otherwise one-vs-rest."""

    weights: np.ndarray  # (n_outputs, n_features)
    bias: np.ndarray  # (n_outputs,)
    n_classes: int
    fit_sample_ids: frozenset[int] = field(default=frozenset(), repr=False)
    grad_norm: float = 0.0
    kind = "logistic"

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def converged(self) -> bool:
        return self.grad_norm < 1e-3

    def logits(self, X: np.ndarray) -> np.ndarray:
        _check_dim(self, X)
        return X @ self.weights.T + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p = expit(self.logits(X))
        if self.weights.shape[0] == 1:
            return np.column_stack([1.0 - p[:, 0], p[:, 0]])
        total = p.sum(axis=1, keepdims=True)
        return np.divide(p, total, out=np.full_like(p, 1.0 / p.shape[1]), where=total > 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.weights.shape[0] == 1:
            return (self.logits(X)[:, 0] > 0).astype(np.int64)
        return np.argmax(self.logits(X), axis=1).astype(np.int64)


def _gradient_descent(X, y, epochs, learning_rate, l2):
    w = np.zeros(X.shape[1])
    b = 0.0
    gw, gb = np.zeros_like(w), 0.0
    for epoch in range(epochs):
        loss, gw, gb = logistic_loss_grad(w, b, X, y, l2)
        if not math.isfinite(loss):
            raise LogisticTrainingError(f"non-finite loss at epoch {epoch}")
        w = w - learning_rate * gw
        b = b - learning_rate * gb
    if epochs:
        loss, gw, gb = logistic_loss_grad(w, b, X, y, l2)
        if not math.isfinite(loss):
            raise LogisticTrainingError(f"non-finite loss at epoch {epochs}")
    return w, b, float(np.sqrt(gw @ gw + gb * gb)) if epochs else float("inf")


def train_logistic(view: Dataset, epochs: int = 500, learning_rate: float = 0.1, l2: float = 0.0) -> LogisticModel:
    """Full-batch gradient descent from zero weights; deterministic."""
    if len(np.unique(view.labels)) < 2:
        raise ModelError("logistic regression needs at least two classes in the view")
    if not np.all(np.isfinite(view.X)):
        raise ModelError("features must be finite")
    X = view.X
    targets = [1] if view.n_classes == 2 else range(view.n_classes)
    ws, bs, norms = [], [], []
    for c in targets:
        w, b, g = _gradient_descent(X, (view.labels == c).astype(np.float64), epochs, learning_rate, l2)
        ws.append(w)
        bs.append(b)
        norms.append(g)
    return LogisticModel(
        weights=np.array(ws).reshape(len(ws), X.shape[1]),
        bias=np.array(bs),
        n_classes=view.n_classes,
        fit_sample_ids=_fit_ids(view),
        grad_norm=max(norms),
    )


# random forest ----------------------------------------------------------------


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 6
    min_samples_leaf: int = 3
    features_per_split: str = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if min(self.n_trees, self.max_depth, self.min_samples_leaf) < 1:
            raise ModelError("forest parameters must be positive")
        if self.features_per_split not in ("sqrt", "all"):
            raise ModelError(f"features_per_split must be 'sqrt' or 'all', got {self.features_per_split!r}")


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf class
    bootstrap_ids: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.value[node]
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)

    @property
    def depth(self) -> int:
        depths = {0: 0}
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depths[int(self.left[i])] = depths[i] + 1
                depths[int(self.right[i])] = depths[i] + 1
        return max(depths.values())


def _best_split(Xn: np.ndarray, yn: np.ndarray, n_classes: int, min_leaf: int):
    """Best Gini split over the columns of ``Xn``; ties go to the earlier column/threshold."""
    m, f = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    onehot = np.eye(n_classes)[yn[order]]  # (m, f, C)
    left = np.cumsum(onehot, axis=0)[:-1]  # split after position i
    total = left[-1] + onehot[-1]
    right = total - left
    n_left = np.arange(1, m)[:, None]
    n_right = m - n_left
    # weighted child impurity is m - score, so maximising score minimises it
    score = (left ** 2).sum(axis=2) / n_left + (right ** 2).sum(axis=2) / n_right
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf).T  # (f, m-1) so argmax scans column-major
    col, pos = np.unravel_index(int(np.argmax(score)), score.shape)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not thr < hi:
        thr = lo
    return int(col), float(thr)


def _grow_tree(X, y, n_classes, params: ForestParams, rng, n_candidates) -> tuple:
    feature, threshold, left, right, value = [], [], [], [], []

    def add_leaf(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(int(np.argmax(np.bincount(y[idx], minlength=n_classes))))
        return len(feature) - 1

    stack = [(np.arange(len(y)), 0, None, None)]  # (rows, depth, parent, is_left)
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = add_leaf(idx)
        if parent is not None:
            (left if is_left else right)[parent] = node
        yn = y[idx]
        if depth >= params.max_depth or len(idx) < 2 * params.min_samples_leaf or np.all(yn == yn[0]):
            continue
        cols = rng.choice(X.shape[1], size=n_candidates, replace=False)
        found = _best_split(X[np.ix_(idx, cols)], yn, n_classes, params.min_samples_leaf)
        if found is None:
            continue
        col, thr = found
        feature[node] = int(cols[col])
        threshold[node] = thr
        mask = X[idx, cols[col]] <= thr
        # right pushed first so the left subtree is numbered first
        stack.append((idx[~mask], depth + 1, node, False))
        stack.append((idx[mask], depth + 1, node, True))
    return (np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(value, dtype=np.int64))


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    params: ForestParams
    n_features: int
    n_classes: int
    fit_sample_ids: frozenset[int] = field(default=frozenset(), repr=False)
    kind = "forest"

    def votes(self, X: np.ndarray) -> np.ndarray:
        _check_dim(self, X)
        counts = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            counts[rows, tree.predict(X)] += 1
        return counts

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1).astype(np.int64)


def train_forest(view: Dataset, params: ForestParams = ForestParams()) -> ForestModel:
    if len(view) == 0:
        raise ModelError("cannot train on an empty view")
    p = view.n_features
    if p == 0:
        raise ModelError("cannot train a forest on zero-width feature vectors")
    n_candidates = p if params.features_per_split == "all" else max(1, int(math.isqrt(p)))
    X, y, n = view.X, view.labels, len(view)
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(params.seed + t)
        boot = rng.integers(0, n, size=n)
        arrays = _grow_tree(X[boot], y[boot], view.n_classes, params, rng, n_candidates)
        trees.append(Tree(*arrays, bootstrap_ids=view.sample_ids[boot]))
    return ForestModel(tuple(trees), params, p, view.n_classes, _fit_ids(view))


Model = Union[MajorityModel, LogisticModel, ForestModel]


def predict(model: Model, view: Dataset) -> np.ndarray:
    if len(view) == 0:
        return np.zeros(0, dtype=np.int64)
    return model.predict(view.X)


def predict_proba(model: LogisticModel, view: Dataset) -> np.ndarray:
    if not isinstance(model, LogisticModel):
        raise ModelError("probabilities are only available for logistic models")
    if len(view) == 0:
        return np.zeros((0, model.n_classes))
    return model.predict_proba(view.X)


# serialisation --------------------------------------------------------------
#
# First line "LEAKSAFE-MODEL 1 <kind>", then one JSON document.  Floats are
# written with repr precision so a round trip reproduces predictions exactly.

MODEL_FORMAT_VERSION = 1


def dump_model(model: Model) -> str:
    body: dict = {"n_classes": model.n_classes, "fit_sample_ids": sorted(model.fit_sample_ids)}
    if isinstance(model, MajorityModel):
        body.update(label=model.label, n_features=model.n_features)
    elif isinstance(model, LogisticModel):
        body.update(weights=model.weights.tolist(), bias=model.bias.tolist(), grad_norm=model.grad_norm)
    else:
        body.update(
            params=asdict(model.params),
            n_features=model.n_features,
            trees=[{
                "feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                "left": t.left.tolist(), "right": t.right.tolist(), "value": t.value.tolist(),
                "bootstrap_ids": t.bootstrap_ids.tolist(),
            } for t in model.trees],
        )
    return f"LEAKSAFE-MODEL {MODEL_FORMAT_VERSION} {model.kind}\n{json.dumps(body)}\n"


def load_model(text: str) -> Model:
    head, _, rest = text.partition("\n")
    parts = head.split()
    if len(parts) != 3 or parts[0] != "LEAKSAFE-MODEL":
        raise ModelError("not a serialised model")
    if int(parts[1]) != MODEL_FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {parts[1]}")
    body = json.loads(rest)
    fit = frozenset(body["fit_sample_ids"])
    kind = parts[2]
    if kind == "majority":
        return MajorityModel(body["label"], body["n_features"], body["n_classes"], fit)
    if kind == "logistic":
        return LogisticModel(np.array(body["weights"]), np.array(body["bias"]), body["n_classes"],
                             fit, body["grad_norm"])
    if kind == "forest":
        trees = tuple(Tree(
            np.array(t["feature"], dtype=np.int64), np.array(t["threshold"], dtype=np.float64),
            np.array(t["left"], dtype=np.int64), np.array(t["right"], dtype=np.int64),
            np.array(t["value"], dtype=np.int64), np.array(t["bootstrap_ids"], dtype=np.int64),
        ) for t in body["trees"])
        return ForestModel(trees, ForestParams(**body["params"]), body["n_features"], body["n_classes"], fit)
    raise ModelError(f"unknown model kind {kind!r}")
