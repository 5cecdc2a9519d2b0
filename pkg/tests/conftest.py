from pathlib import Path

import numpy as np
import pytest

from leaksafe.dataset import Dataset
from leaksafe.lab import generate
from leaksafe.speclint import DatasetSummary, parse_spec

ROOT = Path(__file__).resolve().parents[1]
CORPUS = sorted((ROOT / "pipelines").glob("*.dsl"))
GOLDEN = ROOT / "tests" / "golden"


def corpus_summary(path: Path) -> DatasetSummary | None:
    side = path.with_suffix(".summary.json")
    return DatasetSummary.load(side) if side.exists() else None


def imbalanced(seed: int, grouped: bool, n_groups: int = 40, per_group: int = 4, p: int = 12) -> Dataset:
    """120/40 class split; with ``grouped`` every patient contributes ``per_group`` rows."""
    rng = np.random.default_rng(seed)
    group_labels = rng.permutation(np.r_[np.zeros(30), np.ones(10)].astype(int))
    groups = np.repeat(np.arange(n_groups), per_group)
    labels = group_labels[groups]
    X = rng.normal(size=(len(labels), p)) + rng.normal(size=(n_groups, p))[groups]
    return Dataset.from_arrays(X, labels, group_ids=groups if grouped else None, n_classes=2)


def corpus_data(path: Path, seed: int = 0):
    """A synthetic dataset whose structure matches what the corpus file assumes."""
    spec = parse_spec(path.read_text())
    summary = corpus_summary(path)
    if summary is not None and len(summary.source_class_counts) > 1:
        g = generate("batch", {}, seed)
        return g.dataset, {"external.csv": g.external}
    grouped = bool(spec.find("group_by")) or (summary is not None and summary.grouped)
    data = imbalanced(seed, grouped)
    external = imbalanced(seed + 1000, False).sorted_by_id()
    # external ids must not collide with the pool
    external = Dataset.from_arrays(external.X, external.labels, sample_ids=external.sample_ids + 10_000,
                                   n_classes=2)
    return data, {"external.csv": external}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines are collected here and printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
