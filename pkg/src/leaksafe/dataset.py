"""Tabular datasets with per-sample provenance.

Every sample carries four integer tags besides its features and label:

* ``sample_id``  unique within a dataset,
* ``origin_id``  the original sample it was derived from (itself for originals),
* ``group_id``   the patient / subject it belongs to,
* ``source_id``  the acquisition batch it came from.

Datasets are immutable; all operations return new objects.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

RESERVED_COLUMNS = ("sample_id", "group_id", "source_id", "label")


class DatasetError(ValueError):
    pass


class DatasetFormatError(DatasetError):
    """Malformed dataset file; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Sample:
    sample_id: int
    origin_id: int
    group_id: int
    source_id: int
    features: tuple[float, ...]
    label: int


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    sample_ids: np.ndarray
    origin_ids: np.ndarray
    group_ids: np.ndarray
    source_ids: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...]
    n_classes: int
    label_names: tuple[str, ...] | None = None
    degenerate: bool = False

    def __post_init__(self):
        n = len(self.sample_ids)
        set_ = object.__setattr__
        for name in ("sample_ids", "origin_ids", "group_ids", "source_ids", "labels"):
            arr = _frozen(getattr(self, name), np.int64).reshape(-1)
            if len(arr) != n:
                raise DatasetError(f"{name} has length {len(arr)}, expected {n}")
            set_(self, name, arr)
        X = _frozen(self.X, np.float64)
        if X.ndim != 2:
            X = _frozen(X.reshape(n, len(self.feature_names)), np.float64)
        if X.shape != (n, len(self.feature_names)):
            raise DatasetError(
                f"feature matrix shape {X.shape} does not match "
                f"{n} samples x {len(self.feature_names)} features"
            )
        set_(self, "X", X)
        set_(self, "feature_names", tuple(self.feature_names))
        if self.n_classes < 1:
            raise DatasetError("n_classes must be positive")
        if self.label_names is not None:
            set_(self, "label_names", tuple(self.label_names))
            if len(self.label_names) != self.n_classes:
                raise DatasetError("label_names length must equal n_classes")
        if n and len(np.unique(self.sample_ids)) != n:
            dup = [k for k, c in Counter(self.sample_ids.tolist()).items() if c > 1]
            raise DatasetError(f"duplicate sample_id {dup[0]}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        if not self.degenerate and len(np.unique(self.labels)) < self.n_classes:
            raise DatasetError(
                "some declared class has no samples; pass degenerate=True to allow it"
            )

    # construction -----------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        X,
        labels,
        *,
        sample_ids=None,
        group_ids=None,
        source_ids=None,
        n_classes: int | None = None,
        feature_names: Sequence[str] | None = None,
        label_names: Sequence[str] | None = None,
    ) -> "Dataset":
        """Build a dataset of original samples; missing tags get defaults."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)
        ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
        groups = ids if group_ids is None else np.asarray(group_ids)
        sources = np.zeros(n, dtype=np.int64) if source_ids is None else np.asarray(source_ids)
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if n else 1
        if feature_names is None:
            feature_names = [f"f_{j}" for j in range(X.shape[1])]
        present = len(np.unique(labels))
        return cls(
            sample_ids=ids,
            origin_ids=ids,
            group_ids=groups,
            source_ids=sources,
            labels=labels,
            X=X,
            feature_names=tuple(feature_names),
            n_classes=n_classes,
            label_names=None if label_names is None else tuple(label_names),
            degenerate=present < n_classes,
        )

    def _replace(self, rows=None, **changes) -> "Dataset":
        fields = dict(
            sample_ids=self.sample_ids,
            origin_ids=self.origin_ids,
            group_ids=self.group_ids,
            source_ids=self.source_ids,
            labels=self.labels,
            X=self.X,
            feature_names=self.feature_names,
            n_classes=self.n_classes,
            label_names=self.label_names,
        )
        if rows is not None:
            for key in ("sample_ids", "origin_ids", "group_ids", "source_ids", "labels", "X"):
                fields[key] = fields[key][rows]
        fields.update(changes)
        if "degenerate" not in fields:
            fields["degenerate"] = len(np.unique(fields["labels"])) < fields["n_classes"]
        return Dataset(**fields)

    # access -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @cached_property
    def row_of(self) -> dict[int, int]:
        return {int(s): i for i, s in enumerate(self.sample_ids)}

    def sample(self, sample_id: int) -> Sample:
        return self._sample_at(self.row_of[int(sample_id)])

    def _sample_at(self, i: int) -> Sample:
        return Sample(
            sample_id=int(self.sample_ids[i]),
            origin_id=int(self.origin_ids[i]),
            group_id=int(self.group_ids[i]),
            source_id=int(self.source_ids[i]),
            features=tuple(float(v) for v in self.X[i]),
            label=int(self.labels[i]),
        )

    @property
    def samples(self) -> Iterator[Sample]:
        return (self._sample_at(i) for i in range(len(self)))

    @property
    def id_set(self) -> frozenset[int]:
        return frozenset(self.sample_ids.tolist())

    def subset(self, ids: Iterable[int]) -> "Dataset":
        """Samples whose id is in ``ids``, kept in this dataset's order."""
        wanted = np.fromiter((int(i) for i in ids), dtype=np.int64)
        missing = np.setdiff1d(wanted, self.sample_ids)
        if len(missing):
            raise DatasetError(f"unknown sample_id {int(missing[0])}")
        return self._replace(np.isin(self.sample_ids, wanted))

    def take(self, rows) -> "Dataset":
        return self._replace(np.asarray(rows))

    def with_features(self, X, feature_names: Sequence[str]) -> "Dataset":
        return self._replace(X=np.asarray(X, dtype=np.float64), feature_names=tuple(feature_names))

    def select_features(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return self.with_features(self.X[:, idx], [self.feature_names[i] for i in idx])

    def drop_features(self, indices: Iterable[int]) -> "Dataset":
        drop = set(int(i) for i in indices)
        return self.select_features([j for j in range(self.n_features) if j not in drop])

    def sorted_by_id(self) -> "Dataset":
        return self.take(np.argsort(self.sample_ids, kind="stable"))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        arrays = ("sample_ids", "origin_ids", "group_ids", "source_ids", "labels", "X")
        return (
            self.feature_names == other.feature_names
            and self.n_classes == other.n_classes
            and self.label_names == other.label_names
            and self.degenerate == other.degenerate
            and all(
                getattr(self, a).shape == getattr(other, a).shape
                and getattr(self, a).tobytes() == getattr(other, a).tobytes()
                for a in arrays
            )
        )

    __hash__ = None  # type: ignore[assignment]

    def check_lineage(self) -> None:
        """Raise unless every origin_id names an original sample of this dataset."""
        originals = set(self.sample_ids[self.origin_ids == self.sample_ids].tolist())
        orphans = sorted(set(self.origin_ids.tolist()) - originals)
        if orphans:
            raise DatasetError(f"origin_id {orphans[0]} is not an original sample")


def concat(first: Dataset, second: Dataset) -> Dataset:
    if first.feature_names != second.feature_names:
        raise DatasetError("cannot concatenate datasets with different features")
    if first.n_classes != second.n_classes:
        raise DatasetError("cannot concatenate datasets with different n_classes")
    labels = np.concatenate([first.labels, second.labels])
    return Dataset(
        sample_ids=np.concatenate([first.sample_ids, second.sample_ids]),
        origin_ids=np.concatenate([first.origin_ids, second.origin_ids]),
        group_ids=np.concatenate([first.group_ids, second.group_ids]),
        source_ids=np.concatenate([first.source_ids, second.source_ids]),
        labels=labels,
        X=np.vstack([first.X, second.X]),
        feature_names=first.feature_names,
        n_classes=first.n_classes,
        label_names=first.label_names,
        degenerate=len(np.unique(labels)) < first.n_classes,
    )


def derive_sample(parent: Sample, new_features: Sequence[float], new_id: int) -> Sample:
    """A new sample that inherits lineage, group, source and label from ``parent``."""
    if len(new_features) != len(parent.features):
        raise DatasetError(
            f"derived features have length {len(new_features)}, "
            f"parent has {len(parent.features)}"
        )
    return Sample(
        sample_id=int(new_id),
        origin_id=parent.origin_id,
        group_id=parent.group_id,
        source_id=parent.source_id,
        features=tuple(float(v) for v in new_features),
        label=parent.label,
    )


def derive_samples(view: Dataset, parent_ids: Sequence[int], new_features, new_ids: Sequence[int]) -> Dataset:
    """Vectorised ``derive_sample``: one derived row per entry of ``parent_ids``.

    Returns only the new samples, as a dataset with the view's schema.
    """
    new_features = np.asarray(new_features, dtype=np.float64).reshape(len(parent_ids), -1)
    if new_features.shape[1] != view.n_features:
        raise DatasetError(
            f"derived features have length {new_features.shape[1]}, parent has {view.n_features}"
        )
    rows = np.fromiter((view.row_of[int(p)] for p in parent_ids), dtype=np.int64, count=len(parent_ids))
    clash = view.id_set.intersection(int(i) for i in new_ids)
    if clash:
        raise DatasetError(f"sample_id {min(clash)} already in use")
    return Dataset(
        sample_ids=np.asarray(new_ids, dtype=np.int64),
        origin_ids=view.origin_ids[rows],
        group_ids=view.group_ids[rows],
        source_ids=view.source_ids[rows],
        labels=view.labels[rows],
        X=new_features,
        feature_names=view.feature_names,
        n_classes=view.n_classes,
        label_names=view.label_names,
        degenerate=True,
    )


def from_samples(
    samples: Sequence[Sample],
    feature_names: Sequence[str],
    n_classes: int,
    label_names: Sequence[str] | None = None,
) -> Dataset:
    p = len(feature_names)
    for s in samples:
        if len(s.features) != p:
            raise DatasetError(f"sample {s.sample_id} has {len(s.features)} features, expected {p}")
    labels = [s.label for s in samples]
    return Dataset(
        sample_ids=[s.sample_id for s in samples],
        origin_ids=[s.origin_id for s in samples],
        group_ids=[s.group_id for s in samples],
        source_ids=[s.source_id for s in samples],
        labels=labels,
        X=np.array([s.features for s in samples], dtype=np.float64).reshape(len(samples), p),
        feature_names=tuple(feature_names),
        n_classes=n_classes,
        label_names=label_names,
        degenerate=len(set(labels)) < n_classes,
    )


def class_counts(dataset: Dataset) -> dict[int, int]:
    values, counts = np.unique(dataset.labels, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


# file format ------------------------------------------------------------
#
#   # n_classes=3            optional metadata lines, before the header
#   # labels=neg,pos
#   sample_id,group_id,source_id,label,f_0,...,f_{p-1}
#
# group_id and source_id columns are optional on input. Label cells are
# integers, or arbitrary strings mapped to 0.. in first-appearance order.


def _parse_int(cell: str, line: int, what: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise DatasetFormatError(line, f"non-integer {what} {cell!r}") from None


def parse_dataset(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    meta: dict[str, str] = {}
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        body = lines[lineno][1:].strip()
        key, sep, value = body.partition("=")
        if not sep:
            raise DatasetFormatError(lineno + 1, f"malformed metadata line {lines[lineno]!r}")
        meta[key.strip()] = value.strip()
        lineno += 1
    if lineno >= len(lines):
        raise DatasetFormatError(lineno + 1, "malformed header: missing")
    header_line = lineno + 1
    header = lines[lineno].rstrip("\r").split(",")
    lineno += 1

    if header[0] != "sample_id" or "label" not in header:
        raise DatasetFormatError(header_line, "malformed header: need sample_id first and a label column")
    label_col = header.index("label")
    reserved = header[: label_col + 1]
    allowed_order = [c for c in RESERVED_COLUMNS if c in reserved]
    if reserved != allowed_order:
        raise DatasetFormatError(header_line, f"malformed header: unexpected column order {reserved}")
    feature_names = header[label_col + 1:]
    if len(set(feature_names)) != len(feature_names) or any(
        not f or f in RESERVED_COLUMNS for f in feature_names
    ):
        raise DatasetFormatError(header_line, "malformed header: bad feature names")
    col = {name: i for i, name in enumerate(reserved)}
    width = len(header)

    ids, groups, sources, raw_labels, rows = [], [], [], [], []
    seen: dict[int, int] = {}
    label_lines = []
    for offset, raw in enumerate(lines[lineno:]):
        line = lineno + offset + 1
        cells = raw.rstrip("\r").split(",")
        if len(cells) != width:
            raise DatasetFormatError(line, "arity mismatch")
        sid = _parse_int(cells[0], line, "sample_id")
        if sid in seen:
            raise DatasetFormatError(line, f"duplicate sample_id {sid} (first on line {seen[sid]})")
        seen[sid] = line
        gid = _parse_int(cells[col["group_id"]], line, "group_id") if "group_id" in col else sid
        src = _parse_int(cells[col["source_id"]], line, "source_id") if "source_id" in col else 0
        if gid < 0 or src < 0:
            raise DatasetFormatError(line, "group_id and source_id must be non-negative")
        feats = []
        for name, cell in zip(feature_names, cells[label_col + 1:]):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetFormatError(line, f"non-numeric feature {name}={cell!r}") from None
            if not math.isfinite(v):
                raise DatasetFormatError(line, f"non-numeric feature {name}={cell!r}")
            feats.append(v)
        ids.append(sid)
        groups.append(gid)
        sources.append(src)
        raw_labels.append(cells[label_col])
        label_lines.append(line)
        rows.append(feats)

    label_names = None
    if "labels" in meta:
        label_names = tuple(meta["labels"].split(",")) if meta["labels"] else ()
    if label_names is None and not all(_is_int(c) for c in raw_labels):
        mapping: dict[str, int] = {}
        for c in raw_labels:
            mapping.setdefault(c, len(mapping))
        label_names = tuple(mapping)
        labels = [mapping[c] for c in raw_labels]
    else:
        labels = [_parse_int(c, ln, "label") for c, ln in zip(raw_labels, label_lines)]

    if "n_classes" in meta:
        n_classes = _parse_int(meta["n_classes"], 1, "n_classes")
    elif label_names is not None:
        n_classes = len(label_names)
    else:
        n_classes = max(labels) + 1 if labels else 1
    if label_names is not None and len(label_names) != n_classes:
        raise DatasetFormatError(1, "labels metadata disagrees with n_classes")
    for lab, ln in zip(labels, label_lines):
        if lab < 0 or lab >= n_classes:
            raise DatasetFormatError(ln, f"label {lab} >= n_classes {n_classes}" if lab >= 0 else f"negative label {lab}")

    return Dataset(
        sample_ids=ids,
        origin_ids=ids,
        group_ids=groups,
        source_ids=sources,
        labels=labels,
        X=np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names)),
        feature_names=tuple(feature_names),
        n_classes=max(n_classes, 1),
        label_names=label_names,
        degenerate=len(set(labels)) < n_classes,
    )


def _is_int(cell: str) -> bool:
    try:
        int(cell)
    except ValueError:
        return False
    return True


def load_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))


def format_dataset(dataset: Dataset) -> str:
    """Canonical text form; rows in ascending sample_id order."""
    out = []
    derivable = len(dataset) and dataset.n_classes == int(dataset.labels.max()) + 1
    if dataset.label_names is None and not derivable:
        out.append(f"# n_classes={dataset.n_classes}")
    if dataset.label_names is not None:
        out.append(f"# labels={','.join(dataset.label_names)}")
    out.append(",".join(RESERVED_COLUMNS + dataset.feature_names))
    d = dataset.sorted_by_id()
    for i in range(len(d)):
        head = (d.sample_ids[i], d.group_ids[i], d.source_ids[i], d.labels[i])
        cells = [str(int(v)) for v in head] + [repr(float(v)) for v in d.X[i]]
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def write_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(format_dataset(dataset), encoding="utf-8", newline="\n")
