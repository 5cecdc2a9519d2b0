"""Interpreter for pipeline specs.

Statements run in the order written, including orders that leak; every
stage is logged to a :class:`~leaksafe.trace.Trace` for later auditing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..dataset import Dataset, DatasetError, concat, load_dataset
from ..metrics import Metrics, classification_metrics
from ..models import ForestParams, Model, ModelError, predict, train_forest, train_logistic, train_majority
from ..splitting import AuditReport, SplitError, audit_trace, split
from ..trace import PARTS, Trace, TraceEvent
from ..transforms import (
    Selector, TransformError, apply_selector, augment, fit_recursive_eliminate,
    fit_univariate_select, fit_variance_filter, oversample,
)
from .syntax import PipelineSpec, Span, Statement


class ExecutionError(RuntimeError):
    def __init__(self, message: str, span: Span):
        super().__init__(f"{span.line}:{span.col}: {message}")
        self.message = message
        self.span = span


@dataclass
class Execution:
    trace: Trace
    pool: Dataset
    parts: dict[int, str]
    metrics: Metrics | None = None
    requested: tuple[str, ...] = ()
    model: Model | None = None
    selectors: list[Selector] = field(default_factory=list)
    baseline_metrics: Metrics | None = None
    external_metrics: Metrics | None = None

    def audit(self) -> AuditReport:
        return audit_trace(self.trace)

    def part(self, name: str) -> Dataset:
        return self.pool.subset(sid for sid, p in self.parts.items() if p == name)


def stage_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & (2**64 - 1), index]).generate_state(1)[0])


def _score(model: Model, view: Dataset) -> Metrics:
    pos = 1 if view.n_classes == 2 else None
    return classification_metrics(view.labels, predict(model, view), positive_class=pos,
                                  n_classes=view.n_classes)[0]


class _Run:
    def __init__(self, spec: PipelineSpec, dataset: Dataset, seed: int,
                 external: Mapping[str, Dataset] | None, base_dir: Path | None):
        self.spec = spec
        self.seed = seed
        self.external = dict(external or {})
        self.base_dir = base_dir
        self.trace = Trace()
        self.trace.register(dataset)
        # grouping is in force when declared, or when the data has real patient groups
        originals = dataset.origin_ids == dataset.sample_ids
        _, per_group = np.unique(dataset.group_ids[originals], return_counts=True)
        self.trace.grouped = bool(spec.find("group_by")) or bool((per_group > 1).any())
        self.result = Execution(self.trace, dataset, {})

    @property
    def pool(self) -> Dataset:
        return self.result.pool

    def next_id(self) -> int:
        return int(self.pool.sample_ids.max()) + 1 if len(self.pool) else 0

    def view(self, part: str | None) -> Dataset:
        """The named part, or the whole pool before any split."""
        if not self.result.parts:
            return self.pool
        return self.result.part(part)

    def parts_snapshot(self):
        return self.result.parts or None

    def run(self) -> Execution:
        if not self.spec.find("load"):
            raise ExecutionError("pipeline has no load statement", self.spec.span)
        for index, stmt in enumerate(self.spec.statements):
            try:
                getattr(self, "do_" + stmt.kind)(stmt, stage_seed(self.seed, index))
            except (SplitError, TransformError, ModelError, DatasetError, OSError) as exc:
                raise ExecutionError(str(exc), stmt.span) from exc
        return self.result

    def do_load(self, stmt: Statement, seed: int) -> None:
        ids = self.pool.id_set
        self.trace.log(TraceEvent("load", output_ids=ids, detail=str(stmt.args[0])))

    def do_group_by(self, stmt: Statement, seed: int) -> None:
        if stmt.args[0] != "group_id":
            raise ExecutionError(f"can only group by group_id, not {stmt.args[0]!r}", stmt.span)
        self.trace.grouped = True
        self.trace.log(TraceEvent("group_by", detail="group_id"))

    def do_split(self, stmt: Statement, seed: int) -> None:
        strategy, *fractions = stmt.args
        plan = split(self.pool, strategy, fractions, seed)
        self.result.parts = plan.part_of()
        self.trace.log(TraceEvent("split", input_ids=self.pool.id_set, parts=self.result.parts,
                                  detail=strategy))

    def _grow(self, stage: str, source: Dataset, grown: Dataset) -> None:
        # transforms append their new samples after the source rows
        new = grown.take(np.arange(len(source), len(grown)))
        if len(new):
            self.result.pool = concat(self.pool, new)
            self.trace.register(new)
            if self.result.parts:
                parts = dict(self.result.parts)
                parts.update((int(s), "train") for s in new.sample_ids)
                self.result.parts = parts
        self.trace.log(TraceEvent(stage, input_ids=source.id_set, output_ids=new.id_set,
                                  parts=self.parts_snapshot()))

    def do_oversample(self, stmt: Statement, seed: int) -> None:
        source = self.view("train")
        grown, _ = oversample(source, seed, next_id=self.next_id())
        self._grow("oversample", source, grown)

    def do_augment(self, stmt: Statement, seed: int) -> None:
        source = self.view("train")
        copies, sigma = stmt.args
        grown = augment(source, int(copies), float(sigma), seed, next_id=self.next_id())
        self._grow("augment", source, grown)

    def do_select(self, stmt: Statement, seed: int) -> None:
        fit_view = self.view("train")
        method = stmt.args[0]
        if method == "variance":
            sel = fit_variance_filter(fit_view)
        elif method == "univariate":
            sel = fit_univariate_select(fit_view, int(stmt.args[1]))
        else:
            sel = fit_recursive_eliminate(fit_view, int(stmt.args[1]), seed)
        self.result.selectors.append(sel)
        self.result.pool = apply_selector(sel, self.pool)
        self.trace.log(TraceEvent(f"select {method}", input_ids=self.pool.id_set,
                                  fit_ids=sel.fit_sample_ids, parts=self.parts_snapshot(),
                                  detail=f"kept {len(sel.kept_indices)} feature(s)"))

    def do_train(self, stmt: Statement, seed: int) -> None:
        view = self.view("train")
        kind = stmt.args[0]
        params = dict(stmt.params)
        if kind == "majority":
            model = train_majority(view)
        elif kind == "logistic":
            model = train_logistic(view, epochs=int(params.get("epochs", 500)),
                                   learning_rate=float(params.get("learning_rate", 0.1)),
                                   l2=float(params.get("l2", 0.0)))
        else:
            fp = ForestParams(
                n_trees=int(params.get("n_trees", 200)),
                max_depth=int(params.get("max_depth", 6)),
                min_samples_leaf=int(params.get("min_samples_leaf", 3)),
                features_per_split=str(params.get("features_per_split", "sqrt")),
                seed=int(params.get("seed", seed)),
            )
            model = train_forest(view, fp)
        self.result.model = model
        self.trace.log(TraceEvent(f"train {kind}", input_ids=view.id_set, fit_ids=model.fit_sample_ids,
                                  parts=self.parts_snapshot()))

    def _test_view(self, stmt: Statement, what: str) -> Dataset:
        if not self.result.parts:
            raise ExecutionError(f"{what} needs a split before it", stmt.span)
        test = self.result.part("test")
        if len(test) == 0:
            raise ExecutionError("test partition is empty", stmt.span)
        return test

    def do_evaluate(self, stmt: Statement, seed: int) -> None:
        if self.result.model is None:
            raise ExecutionError("evaluate needs a trained model", stmt.span)
        test = self._test_view(stmt, "evaluate")
        self.result.metrics = _score(self.result.model, test)
        self.result.requested = tuple(stmt.args)
        self.trace.log(TraceEvent("evaluate", input_ids=test.id_set, parts=self.parts_snapshot()))

    def do_baseline(self, stmt: Statement, seed: int) -> None:
        test = self._test_view(stmt, "baseline")
        train = self.result.part("train")
        model = train_majority(train)
        self.result.baseline_metrics = _score(model, test)
        self.trace.log(TraceEvent("baseline majority", input_ids=train.id_set, fit_ids=model.fit_sample_ids,
                                  parts=self.parts_snapshot()))

    def do_external_eval(self, stmt: Statement, seed: int) -> None:
        if self.result.model is None:
            raise ExecutionError("external_eval needs a trained model", stmt.span)
        path = str(stmt.args[0])
        if path in self.external:
            data = self.external[path]
        else:
            full = Path(path) if self.base_dir is None else self.base_dir / path
            data = load_dataset(full)
        for sel in self.result.selectors:
            data = apply_selector(sel, data)
        self.result.external_metrics = _score(self.result.model, data)
        self.trace.log(TraceEvent("external_eval", detail=f"{path}: {len(data)} sample(s)"))


def execute(spec: PipelineSpec, dataset: Dataset, seed: int, *,
            external: Mapping[str, Dataset] | None = None, base_dir=None) -> Execution:
    """Run ``spec`` on ``dataset``.

    The dataset stands in for the pipeline's ``load`` path. ``external`` maps
    ``external_eval`` paths to datasets; other paths are read from disk,
    relative to ``base_dir`` when given.
    """
    base = Path(base_dir) if base_dir is not None else None
    return _Run(spec, dataset, seed, external, base).run()


__all__ = ["Execution", "ExecutionError", "PARTS", "execute", "stage_seed"]
