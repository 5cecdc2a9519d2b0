"""Synthetic pitfall scenarios and the paired leaky-vs-correct experiment runner.

Each scenario file holds a ``scenario`` block naming a generator plus the
pipelines it compares::

    scenario "oversampling" {
      generate oversample n=150 p=10 imbalance=9
      repetitions 100
      seed 7
      leaky "Incorrect oversampling"
      correct "Correct oversampling"
    }

Both arms of repetition ``i`` see the same dataset, generated from
``base_seed + i``, and are executed with that same seed.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Union

import numpy as np

from .attribution import integrated_gradients
from .dataset import Dataset
from .metrics import METRIC_NAMES, Metrics, RankSumResult, wilcoxon_ranksum
from .models import LogisticModel
from .speclint.engine import ExecutionError, execute
from .speclint.syntax import PipelineSpec, ScenarioBlock, parse_document
from .splitting import AuditReport

KINDS = ("oversample", "augment", "patient", "featsel", "batch")
ARM_LETTERS = {
    "oversample": ("A", "B"),
    "augment": ("C", "D"),
    "patient": ("E", "F"),
    "featsel": ("G", "H"),
    "batch": ("I", "I"),
}
MODEL_NAMES = {"forest": "Random forest", "logistic": "Logistic regression", "majority": "Majority class"}
REPORT_FORMATS = ("table-text", "delimited")


class ScenarioError(ValueError):
    pass


# generators -------------------------------------------------------------------


@dataclass(frozen=True)
class OversampleParams:
    """Severely imbalanced data whose features carry no label information."""

    n: int = 150
    p: int = 10
    imbalance: float = 9.0  # majority : minority

    def check(self):
        if not self.imbalance >= 1:
            raise ScenarioError("oversample imbalance must be >= 1")
        minority = self.minority
        if self.p < 1 or minority < 1 or minority >= self.n:
            raise ScenarioError("oversample needs p >= 1 and 1 <= minority < n")

    @property
    def minority(self) -> int:
        return int(round(self.n / (1.0 + self.imbalance)))


@dataclass(frozen=True)
class AugmentParams:
    n: int = 200
    p: int = 10
    signal: float = 0.5  # weight of feature 0 in the latent score

    def check(self):
        if self.n < 10 or self.p < 1 or self.signal < 0:
            raise ScenarioError("augment needs n >= 10, p >= 1 and signal >= 0")


@dataclass(frozen=True)
class PatientParams:
    """Patches of a patient share a nuisance offset and the patient's label."""

    groups: int = 30
    patches_per_group: int = 20
    p: int = 8
    offset_sd: float = 1.0
    noise_sd: float = 0.3
    signal: float = 0.3

    def check(self):
        if self.groups < 4 or self.groups % 2 or self.patches_per_group < 1 or self.p < 1:
            raise ScenarioError("patient needs an even number of groups >= 4, patches >= 1, p >= 1")
        if self.offset_sd < 0 or self.noise_sd < 0:
            raise ScenarioError("standard deviations must be non-negative")


@dataclass(frozen=True)
class FeatselParams:
    n: int = 40
    p: int = 2000

    def check(self):
        if self.n < 4 or self.n % 2 or self.p < 1:
            raise ScenarioError("featsel needs an even n >= 4 and p >= 1")


@dataclass(frozen=True)
class BatchParams:
    """Source equals class, and the first ``n_markers`` features encode the source.

    The external probe holds class-0 samples acquired at source 1, so the
    marker features point the wrong way for every one of them.
    """

    n: int = 400
    p: int = 8
    n_markers: int = 2
    shift: float = 1.5
    n_external: int = 100

    def check(self):
        if self.n < 4 or self.n % 2:
            raise ScenarioError("batch needs an even n >= 4")
        if not 1 <= self.n_markers <= self.p:
            raise ScenarioError("batch needs 1 <= n_markers <= p")
        if self.n_external < 1:
            raise ScenarioError("batch needs n_external >= 1")

    @property
    def markers(self) -> tuple[int, ...]:
        return tuple(range(self.n_markers))


PARAM_TYPES = {
    "oversample": OversampleParams,
    "augment": AugmentParams,
    "patient": PatientParams,
    "featsel": FeatselParams,
    "batch": BatchParams,
}
GeneratorParams = Union[OversampleParams, AugmentParams, PatientParams, FeatselParams, BatchParams]


@dataclass(frozen=True)
class Generated:
    dataset: Dataset
    meta: dict[str, Any] = field(default_factory=dict)
    external: Dataset | None = None


def make_params(kind: str, values: dict[str, Any] | None = None) -> GeneratorParams:
    """Generator parameters for ``kind`` with ``values`` overriding the defaults."""
    if kind not in PARAM_TYPES:
        raise ScenarioError(f"unknown generator {kind!r}; expected one of {', '.join(KINDS)}")
    cls = PARAM_TYPES[kind]
    defaults = cls()
    known = {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}
    coerced = {}
    for key, value in (values or {}).items():
        if key not in known:
            raise ScenarioError(f"unknown {kind} parameter {key!r}")
        if known[key] is int and not float(value).is_integer():
            raise ScenarioError(f"{kind} parameter {key} must be an integer")
        coerced[key] = known[key](value)
    params = replace(defaults, **coerced)
    params.check()
    return params


def _balanced_labels(n: int, rng) -> np.ndarray:
    return rng.permutation(np.arange(n) % 2)


def _gen_oversample(params: OversampleParams, rng) -> Generated:
    labels = np.zeros(params.n, dtype=np.int64)
    labels[: params.minority] = 1
    labels = rng.permutation(labels)
    X = rng.normal(size=(params.n, params.p))
    return Generated(Dataset.from_arrays(X, labels, n_classes=2), {"minority": params.minority})


def _gen_augment(params: AugmentParams, rng) -> Generated:
    X = rng.normal(size=(params.n, params.p))
    labels = (params.signal * X[:, 0] + rng.normal(size=params.n) > 0).astype(np.int64)
    if len(np.unique(labels)) < 2:
        raise ScenarioError("augment draw produced a single class; use a larger n")
    return Generated(Dataset.from_arrays(X, labels, n_classes=2), {"signal_features": (0,)})


def _gen_patient(params: PatientParams, rng) -> Generated:
    g, m = params.groups, params.patches_per_group
    group_labels = _balanced_labels(g, rng)
    offsets = rng.normal(scale=params.offset_sd, size=(g, params.p))
    group_ids = np.repeat(np.arange(g), m)
    labels = group_labels[group_ids]
    X = offsets[group_ids] + rng.normal(scale=params.noise_sd, size=(g * m, params.p))
    X[:, 0] += params.signal * (labels - 0.5)
    data = Dataset.from_arrays(X, labels, group_ids=group_ids, n_classes=2)
    return Generated(data, {"groups": g, "patches_per_group": m})


def _gen_featsel(params: FeatselParams, rng) -> Generated:
    labels = _balanced_labels(params.n, rng)
    X = rng.normal(size=(params.n, params.p))
    return Generated(Dataset.from_arrays(X, labels, n_classes=2), {})


def _gen_batch(params: BatchParams, rng) -> Generated:
    markers = list(params.markers)

    def draw(sources):
        X = rng.normal(size=(len(sources), params.p))
        X[:, markers] += ((2 * sources - 1) * params.shift)[:, None]
        return X

    labels = _balanced_labels(params.n, rng)
    data = Dataset.from_arrays(draw(labels), labels, source_ids=labels, n_classes=2)
    ext_sources = np.ones(params.n_external, dtype=np.int64)
    external = Dataset.from_arrays(
        draw(ext_sources), np.zeros(params.n_external, dtype=np.int64),
        sample_ids=np.arange(params.n, params.n + params.n_external),
        source_ids=ext_sources, n_classes=2,
    )
    return Generated(data, {"markers": tuple(markers)}, external)


_GENERATORS = {
    "oversample": _gen_oversample,
    "augment": _gen_augment,
    "patient": _gen_patient,
    "featsel": _gen_featsel,
    "batch": _gen_batch,
}


def generate(kind: str, params: GeneratorParams | dict | None, seed: int) -> Generated:
    if not isinstance(params, tuple(PARAM_TYPES.values())):
        params = make_params(kind, params)
    elif not isinstance(params, PARAM_TYPES.get(kind, ())):
        raise ScenarioError(f"{type(params).__name__} does not belong to generator {kind!r}")
    params.check()
    return _GENERATORS[kind](params, np.random.default_rng(seed))


# scenarios --------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    params: GeneratorParams
    leaky: PipelineSpec | None
    correct: PipelineSpec | None
    repetitions: int = 100
    base_seed: int = 0


def check_pair_structure(kind: str, leaky: PipelineSpec, correct: PipelineSpec) -> None:
    """The arms may differ only in statement order, or, for ``patient``, in split strategy."""
    a, b = list(leaky.statements), list(correct.statements)
    if kind == "patient":
        if a != b:
            diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
            if len(a) != len(b) or len(diff) != 1 or a[diff[0]].kind != "split" \
                    or a[diff[0]].args[1:] != b[diff[0]].args[1:]:
                raise ScenarioError("patient arms may differ only in the split strategy")
        return
    if Counter(a) != Counter(b):
        raise ScenarioError(f"arms {leaky.name!r} and {correct.name!r} differ in more than stage order")


def parse_scenario(text: str) -> Scenario:
    blocks = parse_document(text)
    heads = [b for b in blocks if isinstance(b, ScenarioBlock)]
    if len(heads) != 1:
        raise ScenarioError("a scenario file needs exactly one scenario block")
    head = heads[0]
    pipelines = {b.name: b for b in blocks if isinstance(b, PipelineSpec)}

    def pick(name):
        if name is None:
            return None
        if name not in pipelines:
            raise ScenarioError(f"scenario refers to unknown pipeline {name!r}")
        return pipelines[name]

    leaky, correct = pick(head.leaky), pick(head.correct)
    params = make_params(head.generator, dict(head.generator_params))
    if head.generator == "batch":
        if (leaky is None) == (correct is None):
            raise ScenarioError("a batch scenario names exactly one pipeline")
    else:
        if leaky is None or correct is None:
            raise ScenarioError("a paired scenario needs both leaky and correct pipelines")
        check_pair_structure(head.generator, leaky, correct)
    return Scenario(
        name=head.name, kind=head.generator, params=params, leaky=leaky, correct=correct,
        repetitions=100 if head.repetitions is None else head.repetitions,
        base_seed=0 if head.seed is None else head.seed,
    )


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


# paired runs ------------------------------------------------------------------


def _model_name(spec: PipelineSpec) -> str:
    trains = spec.find("train")
    return MODEL_NAMES[trains[-1][1].args[0]] if trains else ""


@dataclass(frozen=True)
class ArmResult:
    letter: str
    approach: str
    model: str
    metrics: tuple[Metrics, ...]
    audits: tuple[AuditReport, ...]
    failures: int = 0

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.metrics], dtype=np.float64)

    def mean(self, name: str) -> float:
        v = self.values(name)
        return float(v.mean()) if len(v) else math.nan

    def sd(self, name: str) -> float:
        v = self.values(name)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0


@dataclass(frozen=True)
class PairedReport:
    scenario: str
    kind: str
    repetitions: int
    base_seed: int
    leaky: ArmResult
    correct: ArmResult
    ranksum: RankSumResult | None  # correct F1 against leaky F1

    @property
    def arms(self) -> tuple[ArmResult, ArmResult]:
        return self.leaky, self.correct

    @property
    def f1_gap(self) -> float:
        return self.leaky.mean("f1") - self.correct.mean("f1")


def _run_arm(spec: PipelineSpec, data: Generated, seed: int):
    external = {}
    for _, stmt in spec.find("external_eval"):
        if data.external is not None:
            external[str(stmt.args[0])] = data.external
    try:
        result = execute(spec, data.dataset, seed, external=external)
    except ExecutionError:
        return None
    if result.metrics is None:
        return None
    return result.metrics, result.audit()


def _repetition(args) -> tuple:
    scenario, index = args
    seed = scenario.base_seed + index
    data = generate(scenario.kind, scenario.params, seed)
    return _run_arm(scenario.leaky, data, seed), _run_arm(scenario.correct, data, seed)


def _arm(letter: str, spec: PipelineSpec, outcomes: list) -> ArmResult:
    done = [o for o in outcomes if o is not None]
    return ArmResult(
        letter=letter, approach=spec.name, model=_model_name(spec),
        metrics=tuple(m for m, _ in done), audits=tuple(a for _, a in done),
        failures=len(outcomes) - len(done),
    )


def run_pair(scenario: Scenario, reps: int | None = None, base_seed: int | None = None,
             workers: int = 1) -> PairedReport:
    """Run both arms ``reps`` times.

    Failed repetitions are counted per arm rather than raised. Results are
    assembled in repetition order, so ``workers`` never changes the report.
    """
    if scenario.kind == "batch":
        raise ScenarioError("batch scenarios are run with run_batch_probe")
    reps = scenario.repetitions if reps is None else reps
    if reps < 0:
        raise ScenarioError("reps must be non-negative")
    if base_seed is not None:
        scenario = replace(scenario, base_seed=base_seed)
    jobs = [(scenario, i) for i in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_repetition, jobs))
    else:
        outcomes = [_repetition(j) for j in jobs]
    first, second = ARM_LETTERS[scenario.kind]
    leaky = _arm(first, scenario.leaky, [o[0] for o in outcomes])
    correct = _arm(second, scenario.correct, [o[1] for o in outcomes])
    ranksum = None
    if leaky.metrics and correct.metrics:
        ranksum = wilcoxon_ranksum(correct.values("f1"), leaky.values("f1"))
    return PairedReport(scenario.name, scenario.kind, reps, scenario.base_seed, leaky, correct, ranksum)


# batch probe ------------------------------------------------------------------


@dataclass(frozen=True)
class BatchProbeResult:
    approach: str
    internal: Metrics
    external: Metrics
    markers: tuple[int, ...]
    top_features: tuple[int, ...]  # per external sample, index into the generated features
    attributions: np.ndarray  # (n_external, n_model_features)
    audit: AuditReport
    seed: int

    @property
    def marker_top_fraction(self) -> float:
        if not self.top_features:
            return 0.0
        return sum(t in self.markers for t in self.top_features) / len(self.top_features)


def run_batch_probe(scenario: Scenario, seed: int | None = None, drop_markers: bool = False,
                    steps: int = 64) -> BatchProbeResult:
    """Train on confounded data, test internally and on the external probe.

    Attributions use integrated gradients on the logit with the training-set
    mean as baseline. With ``drop_markers`` the marker columns are removed
    from both datasets before anything is fitted.
    """
    if scenario.kind != "batch":
        raise ScenarioError("run_batch_probe needs a batch scenario")
    spec = scenario.leaky or scenario.correct
    seed = scenario.base_seed if seed is None else seed
    data = generate("batch", scenario.params, seed)
    markers = tuple(data.meta["markers"])
    original = np.arange(data.dataset.n_features)
    dataset, external = data.dataset, data.external
    if drop_markers:
        dataset, external = dataset.drop_features(markers), external.drop_features(markers)
        original = np.delete(original, markers)
        markers = ()
    paths = [str(s.args[0]) for _, s in spec.find("external_eval")]
    if not paths:
        raise ScenarioError("the batch pipeline needs an external_eval statement")
    result = execute(spec, dataset, seed, external={p: external for p in paths})
    model = result.model
    if not isinstance(model, LogisticModel) or result.metrics is None:
        raise ScenarioError("the batch pipeline must train and evaluate a logistic model")
    for sel in result.selectors:
        external = external.select_features(sel.kept_indices)
        original = original[list(sel.kept_indices)]
    baseline = result.part("train").X.mean(axis=0)
    attributions = np.array([
        integrated_gradients(model, x, baseline, steps=steps).values for x in external.X
    ])
    tops = tuple(int(original[i]) for i in np.argmax(np.abs(attributions), axis=1))
    return BatchProbeResult(spec.name, result.metrics, result.external_metrics, markers, tops,
                            attributions, result.audit(), seed)


# reports ----------------------------------------------------------------------


@dataclass(frozen=True)
class _Row:
    arm: str
    approach: str
    model: str
    means: tuple[float, ...]
    sds: tuple[float, ...]
    runs: int
    failures: int


def _rows(report) -> list[_Row]:
    if isinstance(report, BatchProbeResult):
        zero = (0.0,) * len(METRIC_NAMES)
        return [
            _Row("I", f"{report.approach} (internal test)", MODEL_NAMES["logistic"],
                 report.internal.as_tuple(), zero, 1, 0),
            _Row("I", f"{report.approach} (external)", MODEL_NAMES["logistic"],
                 report.external.as_tuple(), zero, 1, 0),
        ]
    if report.repetitions == 0:
        return []
    return [
        _Row(arm.letter, arm.approach, arm.model,
             tuple(arm.mean(n) for n in METRIC_NAMES), tuple(arm.sd(n) for n in METRIC_NAMES),
             len(arm.metrics), arm.failures)
        for arm in report.arms
    ]


def _notes(report) -> list[str]:
    if isinstance(report, BatchProbeResult):
        return [f"marker_top_fraction={report.marker_top_fraction:.6f}"]
    if report.ranksum is None:
        return []
    r = report.ranksum
    return [f"ranksum statistic={r.statistic:.6f} p_value={r.p_value:.6g} method={r.method}"]


def format_report(report, fmt: str = "table-text") -> str:
    if fmt not in REPORT_FORMATS:
        raise ScenarioError(f"unknown report format {fmt!r}; expected one of {', '.join(REPORT_FORMATS)}")
    rows = _rows(report)
    if fmt == "delimited":
        header = ["arm", "approach", "model"]
        for name in METRIC_NAMES:
            header += [f"{name}_mean", f"{name}_sd"]
        lines = [",".join(header + ["runs", "failures"])]
        for r in rows:
            cells = [r.arm, r.approach, r.model]
            for m, s in zip(r.means, r.sds):
                cells += [f"{m:.6f}", f"{s:.6f}"]
            lines.append(",".join(cells + [str(r.runs), str(r.failures)]))
        return "\n".join(lines) + "\n"

    table = [["Model", "Classifier", "Approach", *(n.capitalize() for n in METRIC_NAMES), "Runs"]]
    for r in rows:
        table.append([r.arm, r.model, r.approach,
                      *(f"{m:.6f}±{s:.6f}" for m, s in zip(r.means, r.sds)), str(r.runs)])
    widths = [max(len(row[j]) for row in table) for j in range(len(table[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    if rows:
        lines += [""] + _notes(report)
    return "\n".join(lines) + "\n"


def emit_report(report, path, fmt: str = "table-text") -> None:
    text = format_report(report, fmt)
    Path(path).write_text(text, encoding="utf-8")
