"""Lexer, parser and pretty-printer for the pipeline description language.

A file holds one or more blocks::

    pipeline "model B" {
      load "hnscc.csv"
      split stratified 0.6 0.2 0.2
      oversample
      train forest n_trees=200 max_depth=6
      evaluate precision recall f1
    }

Whitespace (including newlines) only separates tokens; ``#`` comments run to
the end of the line. Scenario files add one ``scenario`` block that names a
generator and the two pipelines to compare.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from ..metrics import METRIC_NAMES
from ..splitting import STRATEGIES


class SpecSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True, order=True)
class Span:
    line: int
    col: int


@dataclass(frozen=True)
class Token:
    kind: str  # STRING NUMBER IDENT LBRACE RBRACE EQUALS EOF
    value: object
    span: Span


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<NUMBER>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<LBRACE>\{)
  | (?P<RBRACE>\})
  | (?P<EQUALS>=)
  | (?P<quote>")
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        span = Span(line, pos - line_start + 1)
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", span.line, span.col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "quote":
            value, end = _read_string(text, m.end(), span)
            tokens.append(Token("STRING", value, span))
            pos = end
            continue
        elif kind == "NUMBER":
            lexeme = m.group()
            if m.end() < len(text) and (text[m.end()].isalpha() or text[m.end()] == "_"):
                raise SpecSyntaxError(f"malformed number {lexeme + text[m.end()]!r}", span.line, span.col)
            number = float(lexeme) if any(c in lexeme for c in ".eE") else int(lexeme)
            tokens.append(Token("NUMBER", number, span))
        elif kind in ("IDENT", "LBRACE", "RBRACE", "EQUALS"):
            tokens.append(Token(kind, m.group(), span))
        pos = m.end()
    tokens.append(Token("EOF", None, Span(line, pos - line_start + 1)))
    return tokens


def _read_string(text: str, pos: int, span: Span) -> tuple[str, int]:
    out = []
    while pos < len(text):
        c = text[pos]
        if c == '"':
            return "".join(out), pos + 1
        if c == "\n":
            break
        if c == "\\" and pos + 1 < len(text) and text[pos + 1] in '"\\':
            out.append(text[pos + 1])
            pos += 2
            continue
        out.append(c)
        pos += 1
    raise SpecSyntaxError("unterminated string", span.line, span.col)


# AST ------------------------------------------------------------------------

Value = Union[int, float, str]

STATEMENT_KEYWORDS = (
    "load", "group_by", "split", "oversample", "augment", "select",
    "train", "evaluate", "baseline", "external_eval",
)
SELECT_METHODS = {"variance": "variance", "univariate": "univariate_f", "recursive": "recursive"}
MODEL_PARAMS = {
    "majority": (),
    "logistic": ("epochs", "learning_rate", "l2"),
    "forest": ("n_trees", "max_depth", "min_samples_leaf", "features_per_split", "seed"),
}
BASELINE_KINDS = ("majority",)


@dataclass(frozen=True)
class Statement:
    kind: str
    args: tuple[Value, ...] = ()
    params: tuple[tuple[str, Value], ...] = ()
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    statements: tuple[Statement, ...] = ()
    span: Span = field(default=Span(0, 0), compare=False)
    end_span: Span = field(default=Span(0, 0), compare=False)

    def find(self, kind: str) -> list[tuple[int, Statement]]:
        return [(i, s) for i, s in enumerate(self.statements) if s.kind == kind]

    def first_index(self, kind: str) -> int | None:
        found = self.find(kind)
        return found[0][0] if found else None


@dataclass(frozen=True)
class ScenarioBlock:
    name: str
    generator: str
    generator_params: tuple[tuple[str, Value], ...] = ()
    repetitions: int | None = None
    seed: int | None = None
    leaky: str | None = None
    correct: str | None = None
    span: Span = field(default=Span(0, 0), compare=False)


# parser ---------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, span: Span | None = None):
        span = span or self.tok.span
        raise SpecSyntaxError(message, span.line, span.col)

    def expect(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            self.error(f"expected {what}, found {_describe(self.tok)}")
        return self.advance()

    def name(self, what: str) -> str:
        if self.tok.kind not in ("STRING", "IDENT"):
            self.error(f"expected {what}, found {_describe(self.tok)}")
        return str(self.advance().value)

    def at_param(self) -> bool:
        return self.tok.kind == "IDENT" and self.tokens[self.i + 1].kind == "EQUALS"

    def params(self) -> tuple[tuple[str, Value], ...]:
        out = []
        while self.at_param():
            key = self.advance()
            self.advance()
            if self.tok.kind not in ("NUMBER", "IDENT", "STRING"):
                self.error(f"parameter {key.value} needs a value")
            if key.value in dict(out):
                self.error(f"duplicate parameter {key.value}", key.span)
            out.append((str(key.value), self.advance().value))
        return tuple(out)

    # documents

    def document(self) -> list[Union[PipelineSpec, ScenarioBlock]]:
        blocks = []
        while self.tok.kind != "EOF":
            head = self.tok
            if head.kind == "IDENT" and head.value == "pipeline":
                blocks.append(self.pipeline())
            elif head.kind == "IDENT" and head.value == "scenario":
                blocks.append(self.scenario())
            else:
                self.error(f"expected 'pipeline' or 'scenario', found {_describe(head)}")
        return blocks

    def pipeline(self) -> PipelineSpec:
        start = self.advance().span
        name = self.name("pipeline name")
        self.expect("LBRACE", "'{'")
        statements: list[Statement] = []
        seen: dict[str, Span] = {}
        while self.tok.kind != "RBRACE":
            if self.tok.kind == "EOF":
                self.error("unterminated pipeline block, expected '}'")
            stmt = self.statement()
            if stmt.kind in ("load", "split"):
                if stmt.kind in seen:
                    first = seen[stmt.kind]
                    self.error(f"duplicate {stmt.kind} statement (first at line {first.line})", stmt.span)
                seen[stmt.kind] = stmt.span
            statements.append(stmt)
        end = self.advance().span
        return PipelineSpec(name, tuple(statements), start, end)

    def statement(self) -> Statement:
        head = self.tok
        if head.kind != "IDENT":
            self.error(f"expected a statement, found {_describe(head)}")
        if head.value not in STATEMENT_KEYWORDS:
            self.error(f"unknown keyword {head.value!r}")
        self.advance()
        kind = str(head.value)
        span = head.span
        parse = getattr(self, "stmt_" + kind)
        args, params = parse(span)
        return Statement(kind, tuple(args), tuple(params), span)

    def numbers(self, count: int, message: str, span: Span) -> list:
        out = []
        for _ in range(count):
            if self.tok.kind != "NUMBER":
                self.error(message, span)
            out.append(self.advance().value)
        if self.tok.kind == "NUMBER":
            self.error(message, span)
        return out

    def stmt_load(self, span):
        if self.tok.kind != "STRING":
            self.error("load expects a quoted path", span)
        return [self.advance().value], ()

    def stmt_group_by(self, span):
        if self.tok.kind != "IDENT" or self.tok.value in STATEMENT_KEYWORDS:
            self.error("group_by expects a column name", span)
        return [self.advance().value], ()

    def stmt_split(self, span):
        if self.tok.kind != "IDENT" or self.tok.value in STATEMENT_KEYWORDS:
            self.error("split expects a strategy and three fractions", span)
        strategy = self.advance()
        if strategy.value not in STRATEGIES:
            self.error(f"unknown split strategy {strategy.value!r}", strategy.span)
        fractions = self.numbers(3, "split expects three fractions", span)
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            self.error("split fractions must be non-negative and sum to 1", span)
        return [strategy.value, *fractions], ()

    def stmt_oversample(self, span):
        return [], ()

    def stmt_augment(self, span):
        copies, sigma = self.numbers(2, "augment expects copies and sigma_scale", span)
        if not isinstance(copies, int) or copies < 0 or sigma < 0:
            self.error("augment copies must be a non-negative integer and sigma_scale >= 0", span)
        return [copies, sigma], ()

    def stmt_select(self, span):
        if self.tok.kind != "IDENT" or self.tok.value not in SELECT_METHODS:
            self.error(f"select expects one of {', '.join(SELECT_METHODS)}", span)
        method = str(self.advance().value)
        if method == "variance":
            self.numbers(0, "select variance takes no k", span)
            return [method], ()
        (k,) = self.numbers(1, f"select {method} expects k", span)
        if not isinstance(k, int) or k < 1:
            self.error("select k must be a positive integer", span)
        return [method, k], ()

    def stmt_train(self, span):
        if self.tok.kind != "IDENT" or self.tok.value not in MODEL_PARAMS:
            self.error(f"train expects one of {', '.join(MODEL_PARAMS)}", span)
        model = str(self.advance().value)
        params = self.params()
        for key, _ in params:
            if key not in MODEL_PARAMS[model]:
                self.error(f"unknown {model} parameter {key!r}", span)
        return [model], params

    def stmt_evaluate(self, span):
        metrics = []
        while self.tok.kind == "IDENT" and self.tok.value not in STATEMENT_KEYWORDS:
            t = self.advance()
            if t.value not in METRIC_NAMES:
                self.error(f"unknown metric {t.value!r}", t.span)
            metrics.append(t.value)
        if not metrics:
            self.error("evaluate expects at least one metric", span)
        return metrics, ()

    def stmt_baseline(self, span):
        if self.tok.kind != "IDENT" or self.tok.value not in BASELINE_KINDS:
            self.error(f"baseline expects one of {', '.join(BASELINE_KINDS)}", span)
        return [self.advance().value], ()

    def stmt_external_eval(self, span):
        if self.tok.kind != "STRING":
            self.error("external_eval expects a quoted path", span)
        return [self.advance().value], ()

    # scenarios

    def scenario(self) -> ScenarioBlock:
        start = self.advance().span
        name = self.name("scenario name")
        self.expect("LBRACE", "'{'")
        fields: dict = {}
        while self.tok.kind != "RBRACE":
            head = self.tok
            if head.kind != "IDENT":
                self.error(f"expected a scenario statement, found {_describe(head)}")
            key = head.value
            if key in fields or (key == "generate" and "generator" in fields):
                self.error(f"duplicate {key} statement")
            self.advance()
            if key == "generate":
                fields["generator"] = self.name("generator kind")
                fields["generator_params"] = self.params()
            elif key in ("repetitions", "seed"):
                (value,) = self.numbers(1, f"{key} expects an integer", head.span)
                if not isinstance(value, int) or value < 0:
                    self.error(f"{key} expects a non-negative integer", head.span)
                fields[key] = value
            elif key in ("leaky", "correct"):
                fields[key] = self.name("pipeline name")
            else:
                self.error(f"unknown keyword {key!r}", head.span)
        self.advance()
        if "generator" not in fields:
            self.error("scenario needs a generate statement", start)
        return ScenarioBlock(name=name, span=start, **fields)


def _describe(tok: Token) -> str:
    if tok.kind == "EOF":
        return "end of input"
    if tok.kind == "STRING":
        return f'string "{tok.value}"'
    return repr(tok.value) if tok.kind != "NUMBER" else f"number {tok.value}"


def parse_document(text: str) -> list[Union[PipelineSpec, ScenarioBlock]]:
    return _Parser(text).document()


def parse_spec(text: str) -> PipelineSpec:
    blocks = parse_document(text)
    pipelines = [b for b in blocks if isinstance(b, PipelineSpec)]
    if len(blocks) != 1 or len(pipelines) != 1:
        span = blocks[1].span if len(blocks) > 1 else Span(1, 1)
        raise SpecSyntaxError("expected exactly one pipeline block", span.line, span.col)
    return pipelines[0]


# printer ---------------------------------------------------------------------


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_value(v: Value) -> str:
    if isinstance(v, str):
        return v
    return repr(v)


def format_statement(s: Statement) -> str:
    parts = [s.kind]
    for a in s.args:
        parts.append(_quote(a) if s.kind in ("load", "external_eval") else format_value(a))
    parts += [f"{k}={_quote(v) if isinstance(v, str) and not v.isidentifier() else format_value(v)}"
              for k, v in s.params]
    return " ".join(parts)


def pretty_print(spec: PipelineSpec) -> str:
    """Canonical text for a pipeline. Comments are not preserved."""
    if not spec.statements:
        return f"pipeline {_quote(spec.name)} {{ }}\n"
    body = "".join(f"  {format_statement(s)}\n" for s in spec.statements)
    return f"pipeline {_quote(spec.name)} {{\n{body}}}\n"
