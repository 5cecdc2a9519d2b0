"""Data transforms that record exactly which samples they were fitted on."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, concat, derive_samples
from .models import LogisticTrainingError, train_logistic

SELECTOR_METHODS = ("variance", "univariate_f", "recursive")


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class Selector:
    kept_indices: tuple[int, ...]
    method: str
    fit_sample_ids: frozenset[int]
    scores: tuple[float, ...] = ()
    k: int | None = None
    n_features_in: int = 0
    flagged: bool = False  # recursive elimination hit a non-convergent fit

    def __post_init__(self):
        kept = self.kept_indices
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise TransformError("kept_indices must be strictly increasing")
        if kept and (kept[0] < 0 or (self.n_features_in and kept[-1] >= self.n_features_in)):
            raise TransformError("kept_indices out of range")

    def format(self) -> str:
        k = "" if self.k is None else self.k
        return (
            f"method: {self.method}\n"
            f"k: {k}\n"
            f"kept:{''.join(' ' + str(i) for i in self.kept_indices)}\n"
            f"fit_ids:{''.join(' ' + str(i) for i in sorted(self.fit_sample_ids))}\n"
        )


def parse_selector(text: str) -> Selector:
    fields: dict[str, str] = {}
    for line in text.splitlines():
        key, sep, value = line.partition(":")
        if not sep:
            raise TransformError(f"bad selector line {line!r}")
        fields[key.strip()] = value.strip()
    try:
        return Selector(
            kept_indices=tuple(int(t) for t in fields["kept"].split()),
            method=fields["method"],
            fit_sample_ids=frozenset(int(t) for t in fields["fit_ids"].split()),
            k=int(fields["k"]) if fields["k"] else None,
        )
    except KeyError as exc:
        raise TransformError(f"selector text missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ResamplePlan:
    emitted: tuple[tuple[int, int], ...]  # (parent sample_id, copies made)
    seed: int

    @property
    def n_copies(self) -> int:
        return sum(c for _, c in self.emitted)


def _next_id(view: Dataset, next_id: int | None) -> int:
    if next_id is not None:
        return int(next_id)
    return int(view.sample_ids.max()) + 1 if len(view) else 0


def oversample(view: Dataset, seed: int, next_id: int | None = None) -> tuple[Dataset, ResamplePlan]:
    """Bring every class up to the majority count by resampling with replacement.

    Copies are appended after the originals with consecutive ids starting at
    ``next_id`` (default: one past the largest id in the view).
    """
    if len(view) == 0:
        raise TransformError("cannot oversample an empty view")
    rng = np.random.default_rng(seed)
    counts = np.bincount(view.labels, minlength=view.n_classes)
    target = counts.max()
    parents: list[int] = []
    emitted: list[tuple[int, int]] = []
    for c in range(view.n_classes):
        if counts[c] == 0 or counts[c] == target:
            continue
        members = view.sample_ids[view.labels == c]
        draws = members[rng.integers(0, len(members), size=target - counts[c])]
        parents += draws.tolist()
        copies = dict.fromkeys(members.tolist(), 0)
        for p in draws.tolist():
            copies[p] += 1
        emitted += sorted(copies.items())
    plan = ResamplePlan(tuple(emitted), seed)
    if not parents:
        return view, plan
    start = _next_id(view, next_id)
    rows = [view.row_of[p] for p in parents]
    new = derive_samples(view, parents, view.X[rows], range(start, start + len(parents)))
    return concat(view, new), plan


def augment(view: Dataset, copies_per_sample: int, sigma_scale: float, seed: int,
            next_id: int | None = None) -> Dataset:
    """Append ``copies_per_sample`` jittered copies of every sample.

    Jitter is Gaussian with per-feature standard deviation ``sigma_scale``
    times that feature's (population) standard deviation on the view.
    """
    if copies_per_sample < 0 or sigma_scale < 0:
        raise TransformError("copies_per_sample and sigma_scale must be non-negative")
    if copies_per_sample == 0 or len(view) == 0:
        return view
    rng = np.random.default_rng(seed)
    scale = sigma_scale * view.X.std(axis=0)
    parents = np.repeat(view.sample_ids, copies_per_sample)
    base = np.repeat(view.X, copies_per_sample, axis=0)
    noisy = base + rng.normal(size=base.shape) * scale
    start = _next_id(view, next_id)
    new = derive_samples(view, parents.tolist(), noisy, range(start, start + len(parents)))
    return concat(view, new)


def fit_variance_filter(view: Dataset) -> Selector:
    if len(view) == 0:
        raise TransformError("cannot fit a variance filter on an empty view")
    X = view.X
    varying = np.any(X != X[0], axis=0)
    return Selector(
        kept_indices=tuple(np.flatnonzero(varying).tolist()),
        method="variance",
        fit_sample_ids=view.id_set,
        scores=tuple(X.var(axis=0).tolist()),
        n_features_in=view.n_features,
    )


def anova_f(X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """One-way ANOVA F per column.

    Columns with zero within-class spread score +inf when the class means
    differ and 0 when they do not.
    """
    classes = np.unique(labels)
    n, g = len(labels), len(classes)
    grand = X.mean(axis=0)
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for c in classes:
        Xc = X[labels == c]
        mean_c = Xc.mean(axis=0)
        ss_between += len(Xc) * (mean_c - grand) ** 2
        ss_within += ((Xc - mean_c) ** 2).sum(axis=0)
    ms_between = ss_between / (g - 1)
    ms_within = ss_within / (n - g) if n > g else np.zeros_like(ss_within)
    # rounding noise must not turn an exactly-separating column into a finite score
    tiny = 1e-12 * (ss_between + ss_within + 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ms_between / ms_within
    f = np.where(ss_within <= tiny, np.where(ss_between > tiny, np.inf, 0.0), f)
    return f


def _top_k(scores: np.ndarray, k: int) -> tuple[int, ...]:
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return tuple(sorted(order[:k]))


def fit_univariate_select(view: Dataset, k: int) -> Selector:
    if k < 1:
        raise TransformError("k must be >= 1")
    if k > view.n_features:
        raise TransformError(f"cannot select {k} features from {view.n_features}")
    if len(np.unique(view.labels)) < 2:
        raise TransformError("univariate selection needs at least two classes in the view")
    f = anova_f(view.X, view.labels)
    return Selector(
        kept_indices=_top_k(f, k),
        method="univariate_f",
        fit_sample_ids=view.id_set,
        scores=tuple(f.tolist()),
        k=k,
        n_features_in=view.n_features,
    )


def elimination_schedule(p: int, k: int, fraction: float = 0.1) -> list[int]:
    """Feature counts removed per round, ceil(fraction * remaining) trimmed to land on k."""
    steps = []
    while p > k:
        drop = min(math.ceil(fraction * p), p - k)
        steps.append(drop)
        p -= drop
    return steps


def fit_recursive_eliminate(view: Dataset, k: int, seed: int = 0, *, epochs: int = 300,
                            learning_rate: float = 0.5, l2: float = 1e-3) -> Selector:
    """Recursive elimination by logistic coefficient magnitude.

    Features are z-scored on the view before every fit so coefficient sizes
    are comparable. The fit itself is deterministic; ``seed`` is accepted for
    interface symmetry with the other stochastic stages.
    """
    p = view.n_features
    if k < 1:
        raise TransformError("k must be >= 1")
    if k > p:
        raise TransformError(f"cannot keep {k} features out of {p}")
    mean = view.X.mean(axis=0)
    std = view.X.std(axis=0)
    Z = (view.X - mean) / np.where(std > 0, std, 1.0)
    active = list(range(p))
    flagged = False
    magnitude = np.zeros(p)
    for drop in elimination_schedule(p, k):
        sub = view.with_features(Z[:, active], [view.feature_names[j] for j in active])
        try:
            model = train_logistic(sub, epochs=epochs, learning_rate=learning_rate, l2=l2)
            coef = np.abs(model.weights).sum(axis=0)
            flagged |= not model.converged
        except LogisticTrainingError:
            flagged = True
            coef = np.zeros(len(active))
        magnitude[active] = coef
        # smallest magnitude first; among equals the higher index goes first
        order = sorted(range(len(active)), key=lambda i: (coef[i], -active[i]))
        removed = {active[i] for i in order[:drop]}
        active = [j for j in active if j not in removed]
    return Selector(
        kept_indices=tuple(active),
        method="recursive",
        fit_sample_ids=view.id_set,
        scores=tuple(magnitude.tolist()),
        k=k,
        n_features_in=p,
        flagged=flagged,
    )


def apply_selector(selector: Selector, view: Dataset) -> Dataset:
    kept = selector.kept_indices
    if kept and view.n_features < kept[-1] + 1:
        raise TransformError(
            f"selector needs >= {kept[-1] + 1} features, view has {view.n_features}"
        )
    if selector.n_features_in and view.n_features != selector.n_features_in:
        raise TransformError(
            f"selector was fitted on {selector.n_features_in} features, view has {view.n_features}"
        )
    return view.select_features(kept)
