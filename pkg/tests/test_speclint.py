import pytest
from hypothesis import given, settings, strategies as st

from conftest import CORPUS, GOLDEN, ROOT, corpus_data, corpus_summary, imbalanced
from leaksafe.speclint import (
    RULES, DatasetSummary, ExecutionError, PipelineSpec, SpecSyntaxError, Statement, execute,
    format_diagnostics, lint, parse_document, parse_spec, pretty_print,
)
from leaksafe.speclint.engine import stage_seed
from leaksafe.speclint.syntax import ScenarioBlock

MODEL_B = '''pipeline "model B" {
  load "hnscc.csv"
  split stratified 0.6 0.2 0.2
  oversample
  train forest n_trees=200 max_depth=6
  evaluate precision recall f1
}
'''

STATIC_TO_AUDIT = {"P001": "origin_overlap", "P002": "origin_overlap",
                   "P003": "transform_fitted_on_nontrain", "P004": "group_overlap"}


def test_parse_model_b():
    spec = parse_spec(MODEL_B)
    assert spec.name == "model B"
    assert [s.kind for s in spec.statements] == ["load", "split", "oversample", "train", "evaluate"]
    assert spec.statements[1].args == ("stratified", 0.6, 0.2, 0.2)
    assert spec.statements[3].params == (("n_trees", 200), ("max_depth", 6))
    assert (spec.statements[2].span.line, spec.statements[2].span.col) == (4, 3)
    assert pretty_print(spec) == MODEL_B


def test_layout_is_free():
    one_line = 'pipeline x { load "a.csv" split random 0.5 0.25 0.25 train majority evaluate f1 }'
    spec = parse_spec(one_line)
    assert parse_spec(pretty_print(spec)) == spec and spec.name == "x"


def test_empty_body_prints_inline():
    spec = parse_spec('pipeline "e" {\n}\n')
    assert spec.statements == () and pretty_print(spec) == 'pipeline "e" { }\n'


@pytest.mark.parametrize("text,where,msg", [
    ('pipeline "a" {\n  load "x.csv"\n  load "y.csv"\n}', "3:3", "duplicate load statement (first at line 2)"),
    ('pipeline "a" {\n  split random 0.5 0.5\n}', "2:3", "split expects three fractions"),
    ('pipeline "a" {\n  split random 0.5 0.4 0.4\n}', "2:3", "sum to 1"),
    ('pipeline "a" {\n  split sideways 0.6 0.2 0.2\n}', "2:9", "unknown split strategy 'sideways'"),
    ('pipeline "a" {\n  evaluate auc\n}', "2:12", "unknown metric 'auc'"),
    ('pipeline "a" {\n  shuffle\n}', "2:3", "unknown keyword 'shuffle'"),
    ('pipeline "a" {\n  train forest n_trees=5 n_trees=6\n}', "2:26", "duplicate parameter n_trees"),
    ('pipeline "a" {\n  train forest depth=5\n}', "2:3", "unknown forest parameter 'depth'"),
    ('pipeline "a" {\n  load "x.csv', "2:8", "unterminated string"),
    ('pipeline "a" {\n  oversample\n', "3:1", "unterminated pipeline block"),
    ('pipeline "a" {\n  select univariate 0\n}', "2:3", "positive integer"),
    ('pipeline "a" {\n  augment 2.5 0.1\n}', "2:3", "non-negative integer"),
    ('pipeline "a" {\n  split random 1e 0 0\n}', "2:16", "malformed number"),
    ('pipeline "a" { } pipeline "b" { }', "1:18", "expected exactly one pipeline block"),
    ('pipeline "a" { $ }', "1:16", "unexpected character '$'"),
])
def test_syntax_errors(text, where, msg):
    with pytest.raises(SpecSyntaxError) as info:
        parse_spec(text)
    assert str(info.value).startswith(where + ":")
    assert msg in info.value.message


def test_escaped_quotes_round_trip():
    spec = PipelineSpec('a "quoted" \\ name', (Statement("load", ('dir\\x "y".csv',)),))
    assert parse_spec(pretty_print(spec)) == spec


names = st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=12)
statements = st.one_of(
    names.map(lambda s: Statement("load", (s,))),
    st.sampled_from(["group_id", "site"]).map(lambda c: Statement("group_by", (c,))),
    st.sampled_from([("random", 0.6, 0.2, 0.2), ("group", 0.5, 0.25, 0.25), ("stratified", 1, 0, 0)])
      .map(lambda a: Statement("split", a)),
    st.just(Statement("oversample")),
    st.tuples(st.integers(0, 9), st.floats(0, 2)).map(lambda a: Statement("augment", a)),
    st.just(Statement("select", ("variance",))),
    st.tuples(st.sampled_from(["univariate", "recursive"]), st.integers(1, 500)).map(lambda a: Statement("select", a)),
    st.just(Statement("train", ("forest",), (("n_trees", 10), ("features_per_split", "sqrt")))),
    st.just(Statement("train", ("logistic",), (("learning_rate", 0.05),))),
    st.lists(st.sampled_from(["accuracy", "precision", "recall", "f1"]), min_size=1, max_size=4)
      .map(lambda m: Statement("evaluate", tuple(m))),
    st.just(Statement("baseline", ("majority",))),
    names.map(lambda s: Statement("external_eval", (s,))),
)


@settings(max_examples=150, deadline=None)
@given(names, st.lists(statements, max_size=10))
def test_pretty_print_round_trip(name, stmts):
    seen, unique = set(), []
    for s in stmts:
        if s.kind in ("load", "split"):
            if s.kind in seen:
                continue
            seen.add(s.kind)
        unique.append(s)
    spec = PipelineSpec(name, tuple(unique))
    text = pretty_print(spec)
    again = parse_spec(text)
    assert again == spec and pretty_print(again) == text


def test_scenario_document():
    blocks = parse_document('scenario s { generate oversample n=10 repetitions 3 seed 4 leaky "a" correct "b" }'
                            ' pipeline "a" { } pipeline "b" { }')
    s = blocks[0]
    assert isinstance(s, ScenarioBlock)
    assert (s.generator, s.generator_params, s.repetitions, s.seed, s.leaky, s.correct) == \
        ("oversample", (("n", 10),), 3, 4, "a", "b")


# lint --------------------------------------------------------------------------------


def test_model_b_is_clean_of_errors():
    codes = [d.code for d in lint(parse_spec(MODEL_B))]
    assert codes == ["P006", "P007"]


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_golden_output(path):
    rel = f"pipelines/{path.name}"
    text = format_diagnostics(lint(parse_spec(path.read_text()), corpus_summary(path)), rel)
    assert text == (GOLDEN / f"{path.stem}.lint").read_text()


def test_every_rule_is_exercised_by_the_corpus():
    codes = set()
    for path in CORPUS:
        codes |= {d.code for d in lint(parse_spec(path.read_text()), corpus_summary(path))}
    assert codes == set(RULES)


def test_diagnostics_are_sorted_by_position():
    diags = lint(parse_spec((ROOT / "pipelines" / "multi_leak.dsl").read_text()))
    assert diags == sorted(diags)
    assert [d.code for d in diags] == ["P001", "P002", "P003", "P004", "P005", "P006", "P007"]


def test_batch_threshold_and_association():
    confounded = DatasetSummary(source_class_counts={0: {0: 50}, 1: {1: 50}})
    balanced = DatasetSummary(source_class_counts={0: {0: 25, 1: 25}, 1: {0: 25, 1: 25}})
    assert confounded.source_association() == pytest.approx(1.0)
    assert balanced.source_association() == pytest.approx(0.0)
    # 2x2 table [[40,10],[10,40]]: phi = (1600-100)/50^2 = 0.6
    mixed = DatasetSummary(source_class_counts={0: {0: 40, 1: 10}, 1: {0: 10, 1: 40}})
    assert mixed.source_association() == pytest.approx(0.6)
    spec = parse_spec(MODEL_B)
    assert "P008" in {d.code for d in lint(spec, mixed)}
    assert "P008" not in {d.code for d in lint(spec, mixed, batch_threshold=0.7)}


def test_summary_json_round_trip():
    s = DatasetSummary.from_dataset(imbalanced(0, grouped=True))
    assert s.grouped and s.class_counts == {0: 120, 1: 40}
    assert DatasetSummary.from_json(s.to_json()) == s
    assert not DatasetSummary.from_dataset(imbalanced(0, grouped=False)).grouped


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_static_and_dynamic_agree(path, seed):
    spec = parse_spec(path.read_text())
    data, external = corpus_data(path, seed)
    static = {STATIC_TO_AUDIT[d.code] for d in lint(spec, corpus_summary(path)) if d.code in STATIC_TO_AUDIT}
    dynamic = execute(spec, data, seed, external=external).audit().kinds()
    assert static == dynamic


# execution ---------------------------------------------------------------------------


def test_execute_is_deterministic():
    path = ROOT / "pipelines" / "model_a.dsl"
    spec = parse_spec(path.read_text())
    data, ext = corpus_data(path, 0)
    a, b = execute(spec, data, 3, external=ext), execute(spec, data, 3, external=ext)
    assert a.metrics == b.metrics and a.parts == b.parts


def test_stage_seeds_differ_by_stage():
    assert len({stage_seed(5, i) for i in range(50)}) == 50
    assert stage_seed(5, 0) == stage_seed(5, 0) != stage_seed(6, 0)


def test_clean_pipeline_runs_every_stage():
    path = ROOT / "pipelines" / "clean.dsl"
    data, ext = corpus_data(path, 0)
    result = execute(parse_spec(path.read_text()), data, 0, external=ext)
    assert result.audit().clean
    assert result.metrics is not None and result.baseline_metrics is not None
    assert result.external_metrics is not None
    assert result.baseline_metrics.recall == 0.0
    assert len(result.selectors) == 1 and len(result.selectors[0].kept_indices) == 6


def test_training_before_split_is_caught_by_the_audit():
    spec = parse_spec('pipeline "x" { load "d.csv" train majority split random 0.6 0.2 0.2 evaluate f1 }')
    assert execute(spec, imbalanced(0, False), 0).audit().kinds() == {"transform_fitted_on_nontrain"}


def test_evaluate_without_model_is_an_execution_error():
    spec = parse_spec('pipeline "x" { load "d.csv" evaluate f1 }')
    with pytest.raises(ExecutionError, match="1:29: evaluate needs a trained model"):
        execute(spec, imbalanced(0, False), 0)


def test_missing_load_is_an_execution_error():
    spec = parse_spec('pipeline "x" { split random 0.6 0.2 0.2 train majority evaluate f1 }')
    with pytest.raises(ExecutionError, match="load"):
        execute(spec, imbalanced(0, False), 0)


def test_leaky_oversampling_places_copies_in_test():
    path = ROOT / "pipelines" / "model_a.dsl"
    data, ext = corpus_data(path, 0)
    result = execute(parse_spec(path.read_text()), data, 0, external=ext)
    report = result.audit()
    assert report.kinds() == {"origin_overlap"}
    offenders = set(report.violations[0].offending_ids)
    test_origins = set(result.part("test").origin_ids.tolist())
    train_origins = set(result.part("train").origin_ids.tolist())
    assert offenders and offenders <= test_origins & train_origins
