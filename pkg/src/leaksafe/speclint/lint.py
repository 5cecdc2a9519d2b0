"""Static checks of pipeline specs against the methodological checklist."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import Dataset
from .syntax import PipelineSpec, Span

# code -> (severity, checklist item it mechanises)
RULES = {
    "P001": ("error", "oversampling happens after the split"),
    "P002": ("error", "augmentation happens after the split"),
    "P003": ("error", "feature selection happens after the split"),
    "P004": ("error", "a patient's data points stay in one part"),
    "P005": ("warning", "accuracy is not the only reported metric"),
    "P006": ("warning", "a performance baseline is reported"),
    "P007": ("info", "an external dataset is evaluated"),
    "P008": ("info", "class distributions are similar across sources"),
}
ORDERING_RULES = {"oversample": "P001", "augment": "P002", "select": "P003"}
DEFAULT_BATCH_THRESHOLD = 0.5


@dataclass(frozen=True, order=True)
class Diagnostic:
    span: Span
    code: str
    severity: str = field(compare=False)
    message: str = field(compare=False)

    def __post_init__(self):
        if self.code not in RULES:
            raise ValueError(f"unregistered diagnostic code {self.code}")

    def format(self, filename: str) -> str:
        return f"{filename}:{self.span.line}:{self.span.col}: {self.severity} {self.code} {self.message}"


@dataclass(frozen=True)
class DatasetSummary:
    """What the linter may know about the data without loading it."""

    class_counts: dict[int, int] = field(default_factory=dict)
    grouped: bool = False
    # source_id -> class -> count
    source_class_counts: dict[int, dict[int, int]] = field(default_factory=dict)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "DatasetSummary":
        originals = dataset.origin_ids == dataset.sample_ids
        per_group: dict[int, set[int]] = defaultdict(set)
        for g, o in zip(dataset.group_ids[originals].tolist(), dataset.origin_ids[originals].tolist()):
            per_group[g].add(o)
        sources: dict[int, dict[int, int]] = defaultdict(dict)
        for s, y in zip(dataset.source_ids.tolist(), dataset.labels.tolist()):
            sources[s][y] = sources[s].get(y, 0) + 1
        counts = np.bincount(dataset.labels, minlength=dataset.n_classes)
        return cls(
            class_counts={c: int(n) for c, n in enumerate(counts)},
            grouped=any(len(v) > 1 for v in per_group.values()),
            source_class_counts={s: dict(sorted(v.items())) for s, v in sorted(sources.items())},
        )

    def to_json(self) -> str:
        return json.dumps({
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
            "grouped": self.grouped,
            "source_class_counts": {
                str(s): {str(c): n for c, n in v.items()} for s, v in self.source_class_counts.items()
            },
        }, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetSummary":
        raw = json.loads(text)
        return cls(
            class_counts={int(k): int(v) for k, v in raw.get("class_counts", {}).items()},
            grouped=bool(raw.get("grouped", False)),
            source_class_counts={
                int(s): {int(c): int(n) for c, n in v.items()}
                for s, v in raw.get("source_class_counts", {}).items()
            },
        )

    @classmethod
    def load(cls, path) -> "DatasetSummary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def source_association(self) -> float:
        """Cramer's V between source and class; 0 with fewer than two sources or classes."""
        sources = sorted(self.source_class_counts)
        classes = sorted({c for v in self.source_class_counts.values() for c in v})
        if len(sources) < 2 or len(classes) < 2:
            return 0.0
        table = np.array([[self.source_class_counts[s].get(c, 0) for c in classes] for s in sources], float)
        n = table.sum()
        expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / n
        chi2 = float(np.sum(np.where(expected > 0, (table - expected) ** 2 / np.where(expected > 0, expected, 1), 0)))
        return math.sqrt(chi2 / (n * (min(table.shape) - 1)))


def _diag(code: str, span: Span, message: str) -> Diagnostic:
    return Diagnostic(span, code, RULES[code][0], message)


def lint(spec: PipelineSpec, summary: DatasetSummary | None = None,
         batch_threshold: float = DEFAULT_BATCH_THRESHOLD) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    split_at = spec.first_index("split")

    if split_at is not None:
        for stmt in spec.statements[:split_at]:
            code = ORDERING_RULES.get(stmt.kind)
            if code == "P001":
                out.append(_diag(code, stmt.span, "oversample runs before split; resampled copies can reach the test set"))
            elif code == "P002":
                out.append(_diag(code, stmt.span, "augment runs before split; augmented variants can reach the test set"))
            elif code == "P003":
                out.append(_diag(code, stmt.span, "select is fitted before split; test samples influence which features are kept"))

        split = spec.statements[split_at]
        grouped = bool(spec.find("group_by")) or (summary is not None and summary.grouped)
        if grouped and split.args[0] != "group":
            out.append(_diag("P004", split.span,
                             f"data has patient groups but split strategy is '{split.args[0]}'; use 'split group'"))

    for _, stmt in spec.find("evaluate"):
        if set(stmt.args) == {"accuracy"}:
            out.append(_diag("P005", stmt.span, "accuracy is the only metric; report precision and recall as well"))
    if not spec.find("baseline"):
        out.append(_diag("P006", spec.end_span, "no baseline statement; results have no reference level"))
    if not spec.find("external_eval"):
        out.append(_diag("P007", spec.end_span, "no external_eval statement; generalization to new data is untested"))

    if summary is not None and len(summary.source_class_counts) > 1:
        v = summary.source_association()
        if v > batch_threshold:
            loads = spec.find("load")
            span = loads[0][1].span if loads else spec.span
            out.append(_diag("P008", span,
                             f"class and source are strongly associated (Cramer's V {v:.2f} > {batch_threshold:.2f}); "
                             "a model may learn the source instead of the class"))
    return sorted(out)


def format_diagnostics(diagnostics: list[Diagnostic], filename: str) -> str:
    return "".join(d.format(filename) + "\n" for d in diagnostics)
