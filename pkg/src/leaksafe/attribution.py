"""Integrated-gradients attribution for logistic models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .models import LogisticModel

SCORES = ("logit", "probability")


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class Attribution:
    values: np.ndarray  # one entry per feature
    baseline: np.ndarray
    steps: int
    score: str
    delta: float  # score(x) - score(baseline)

    @property
    def completeness_gap(self) -> float:
        return abs(float(self.values.sum()) - self.delta)

    def top_feature(self) -> int:
        """Index of the largest |attribution|; the lower index wins ties."""
        return int(np.argmax(np.abs(self.values)))


def _score_and_grad(model: LogisticModel, points: np.ndarray, output: int, score: str):
    w = model.weights[output]
    z = points @ w + model.bias[output]
    if score == "logit":
        return z, np.broadcast_to(w, points.shape)
    s = expit(z)
    return s, (s * (1.0 - s))[:, None] * w


def integrated_gradients(model: LogisticModel, x, baseline=None, steps: int = 64,
                         score: str = "logit", output: int = 0) -> Attribution:
    """Path attribution from ``baseline`` to ``x`` by the midpoint rule.

    ``output`` picks the logit row; binary models have only row 0, which
    scores class 1.
    """
    if score not in SCORES:
        raise AttributionError(f"score must be one of {SCORES}")
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    p = model.n_features
    if x.shape != (p,) or base.shape != (p,):
        raise AttributionError(f"expected vectors of length {p}, got {x.shape} and {base.shape}")
    if not 0 <= output < model.weights.shape[0]:
        raise AttributionError(f"model has no output {output}")
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    path = base + alphas[:, None] * (x - base)
    _, grads = _score_and_grad(model, path, output, score)
    values = (x - base) * grads.mean(axis=0)
    ends, _ = _score_and_grad(model, np.stack([x, base]), output, score)
    return Attribution(values, base, steps, score, float(ends[0] - ends[1]))
