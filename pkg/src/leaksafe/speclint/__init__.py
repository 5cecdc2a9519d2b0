"""Pipeline description language: parsing, linting and execution."""
from .engine import Execution, ExecutionError, execute
from .lint import DatasetSummary, Diagnostic, RULES, format_diagnostics, lint
from .syntax import (
    PipelineSpec, ScenarioBlock, SpecSyntaxError, Statement, parse_document, parse_spec, pretty_print,
)

__all__ = [
    "DatasetSummary", "Diagnostic", "Execution", "ExecutionError", "PipelineSpec", "RULES", "ScenarioBlock",
    "SpecSyntaxError", "Statement", "execute", "format_diagnostics", "lint", "parse_document", "parse_spec",
    "pretty_print",
]
