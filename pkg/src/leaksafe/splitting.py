"""Train/validation/test splitting, nested cross-validation and leakage auditing."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .dataset import Dataset
from .trace import PARTS, Trace

STRATEGIES = ("random", "stratified", "group")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    train: frozenset[int]
    validation: frozenset[int]
    test: frozenset[int]
    strategy: str = "stratified"
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def parts(self) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
        return self.train, self.validation, self.test

    def part_of(self) -> dict[int, str]:
        return {sid: name for name, ids in zip(PARTS, self.parts()) for sid in ids}

    def format(self) -> str:
        return "".join(
            f"{name}:{''.join(' ' + str(i) for i in sorted(ids))}\n"
            for name, ids in zip(PARTS, self.parts())
        )


def parse_split_plan(text: str, strategy: str = "stratified", seed: int = 0) -> SplitPlan:
    parts = {}
    for line in text.splitlines():
        name, sep, rest = line.partition(":")
        if not sep or name not in PARTS or name in parts:
            raise SplitError(f"bad split plan line {line!r}")
        parts[name] = frozenset(int(t) for t in rest.split())
    if set(parts) != set(PARTS):
        raise SplitError("split plan needs train, validation and test lines")
    total = sum(len(p) for p in parts.values()) or 1
    fractions = tuple(len(parts[p]) / total for p in PARTS)
    return SplitPlan(parts["train"], parts["validation"], parts["test"], strategy, fractions, seed)


def _check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    if len(fractions) != 3:
        raise SplitError("need exactly three fractions (train, validation, test)")
    if any(f < 0 for f in fractions):
        raise SplitError(f"negative fraction in {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions {tuple(fractions)} do not sum to 1")
    return tuple(float(f) for f in fractions)  # type: ignore[return-value]


def apportion(count: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment; ties go to the earlier part."""
    quotas = [count * f for f in fractions]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    remainders = [round(q - s, 9) for q, s in zip(quotas, sizes)]
    leftover = count - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def _plan(chunks: list[list[int]], strategy, fractions, seed) -> SplitPlan:
    return SplitPlan(*(frozenset(c) for c in chunks), strategy=strategy, fractions=fractions, seed=seed)


def random_split(dataset: Dataset, fractions, seed: int) -> SplitPlan:
    fractions = _check_fractions(fractions)
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    ids = dataset.sample_ids[rng.permutation(len(dataset))].tolist()
    n_train, n_val, _ = apportion(len(ids), fractions)
    return _plan([ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:]],
                 "random", fractions, seed)


def stratified_split(dataset: Dataset, fractions, seed: int) -> SplitPlan:
    fractions = _check_fractions(fractions)
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    chunks: list[list[int]] = [[], [], []]
    for c in range(dataset.n_classes):
        ids = dataset.sample_ids[dataset.labels == c]
        if len(ids) == 0:
            continue
        ids = ids[rng.permutation(len(ids))].tolist()
        n_train, n_val, _ = apportion(len(ids), fractions)
        chunks[0] += ids[:n_train]
        chunks[1] += ids[n_train:n_train + n_val]
        chunks[2] += ids[n_train + n_val:]
    return _plan(chunks, "stratified", fractions, seed)


def group_split(dataset: Dataset, fractions, seed: int) -> SplitPlan:
    """Whole groups are dealt, in seeded random order, to the neediest part."""
    fractions = _check_fractions(fractions)
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    members: dict[int, list[int]] = defaultdict(list)
    for sid, gid in zip(dataset.sample_ids.tolist(), dataset.group_ids.tolist()):
        members[gid].append(sid)
    groups = sorted(members)
    if all(f > 0 for f in fractions) and len(groups) < 3:
        raise SplitError(f"group split into three parts needs >= 3 groups, got {len(groups)}")
    rng = np.random.default_rng(seed)
    groups = [groups[i] for i in rng.permutation(len(groups))]
    targets = [f * len(dataset) for f in fractions]
    actual = [0, 0, 0]
    chunks: list[list[int]] = [[], [], []]
    for g in groups:
        deficits = [targets[i] - actual[i] for i in range(3)]
        part = max(range(3), key=lambda i: (round(deficits[i], 9), -i))
        chunks[part] += members[g]
        actual[part] += len(members[g])
    return _plan(chunks, "group", fractions, seed)


def split(dataset: Dataset, strategy: str, fractions, seed: int) -> SplitPlan:
    try:
        fn = {"random": random_split, "stratified": stratified_split, "group": group_split}[strategy]
    except KeyError:
        raise SplitError(f"unknown split strategy {strategy!r}") from None
    return fn(dataset, fractions, seed)


# nested cross-validation -------------------------------------------------


@dataclass(frozen=True)
class InnerFold:
    train: frozenset[int]
    validation: frozenset[int]


@dataclass(frozen=True)
class OuterFold:
    train: frozenset[int]
    test: frozenset[int]
    inner: tuple[InnerFold, ...]


@dataclass(frozen=True)
class FoldPlan:
    outer_k: int
    inner_k: int
    folds: tuple[OuterFold, ...]
    grouped: bool = False

    def pairs(self) -> Iterator[tuple[frozenset[int], frozenset[int]]]:
        """Every (inner train, validation) pair across all outer folds."""
        for outer in self.folds:
            for inner in outer.inner:
                yield inner.train, inner.validation


def _stratified_folds(view: Dataset, k: int, rng, grouped: bool) -> list[frozenset[int]]:
    """Deal samples (or whole groups) round-robin after ordering them by class."""
    if grouped:
        members: dict[int, list[int]] = defaultdict(list)
        labels: dict[int, list[int]] = defaultdict(list)
        for sid, gid, lab in zip(view.sample_ids.tolist(), view.group_ids.tolist(), view.labels.tolist()):
            members[gid].append(sid)
            labels[gid].append(lab)
        units = sorted(members)
        if len(units) < k:
            raise SplitError(f"{k} folds need >= {k} groups, got {len(units)}")
        units = [units[i] for i in rng.permutation(len(units))]
        # stable sort by the group's modal class keeps the shuffle within a class
        units.sort(key=lambda g: np.bincount(labels[g]).argmax())
        unit_ids = [members[g] for g in units]
    else:
        if len(view) < k:
            raise SplitError(f"{k} folds need >= {k} samples, got {len(view)}")
        unit_ids = []
        for c in range(view.n_classes):
            ids = view.sample_ids[view.labels == c]
            unit_ids += [[int(i)] for i in ids[rng.permutation(len(ids))]]
    folds: list[list[int]] = [[] for _ in range(k)]
    for pos, ids in enumerate(unit_ids):
        folds[pos % k] += ids
    return [frozenset(f) for f in folds]


def nested_cv(dataset: Dataset, outer_k: int, inner_k: int, seed: int, grouped: bool = False) -> FoldPlan:
    if outer_k < 2 or inner_k < 2:
        raise SplitError("outer_k and inner_k must both be >= 2")
    outer_tests = _stratified_folds(dataset, outer_k, np.random.default_rng(seed), grouped)
    all_ids = dataset.id_set
    folds = []
    for i, test in enumerate(outer_tests):
        rest = all_ids - test
        rng = np.random.default_rng([seed, i + 1])
        vals = _stratified_folds(dataset.subset(rest), inner_k, rng, grouped)
        inner = tuple(InnerFold(rest - v, v) for v in vals)
        folds.append(OuterFold(rest, test, inner))
    return FoldPlan(outer_k, inner_k, tuple(folds), grouped)


# auditing -----------------------------------------------------------------

VIOLATION_KINDS = ("origin_overlap", "group_overlap", "transform_fitted_on_nontrain")


@dataclass(frozen=True)
class Violation:
    kind: str
    offending_ids: tuple[int, ...]
    detail: str


@dataclass(frozen=True)
class AuditReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def clean(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def summary(self) -> str:
        if self.clean:
            return "audit: clean"
        lines = [f"audit: {len(self.violations)} violation(s)"]
        for v in self.violations:
            ids = " ".join(map(str, v.offending_ids[:10]))
            more = f" (+{len(v.offending_ids) - 10} more)" if len(v.offending_ids) > 10 else ""
            lines.append(f"  {v.kind}: {v.detail}; ids {ids}{more}")
        return "\n".join(lines)


def audit_trace(trace: Trace) -> AuditReport:
    """Check a pipeline trace against the independence rules.

    Only samples that were fitted on or evaluated count as used. Partition
    membership is the final assignment recorded in the trace.
    """
    parts = trace.final_parts
    if not trace.events or not parts:
        return AuditReport()
    used: set[int] = set()
    for e in trace.events:
        if e.fitted:
            used |= e.fit_ids
        if e.stage == "evaluate":
            used |= e.input_ids
    used &= parts.keys()

    violations = []
    by_origin: dict[int, set[str]] = defaultdict(set)
    by_group: dict[int, set[str]] = defaultdict(set)
    for sid in used:
        by_origin[trace.origins.get(sid, sid)].add(parts[sid])
        by_group[trace.groups.get(sid, sid)].add(parts[sid])
    shared = sorted(o for o, ps in by_origin.items() if len(ps) > 1)
    if shared:
        violations.append(Violation(
            "origin_overlap", tuple(shared),
            f"{len(shared)} origin id(s) have samples in more than one part",
        ))
    if trace.grouped:
        straddling = sorted(g for g, ps in by_group.items() if len(ps) > 1)
        if straddling:
            violations.append(Violation(
                "group_overlap", tuple(straddling),
                f"{len(straddling)} group id(s) span more than one part",
            ))
    for e in trace.events:
        if not e.fitted:
            continue
        outside = sorted(s for s in e.fit_ids if parts.get(s, "train") != "train")
        if outside:
            violations.append(Violation(
                "transform_fitted_on_nontrain", tuple(outside),
                f"stage {e.stage!r} was fitted on {len(outside)} non-train sample(s)",
            ))
    return AuditReport(tuple(violations))
