"""Lint every pipeline in pipelines/ and print the diagnostics."""
from pathlib import Path

from leaksafe.speclint import DatasetSummary, format_diagnostics, lint, parse_spec

ROOT = Path(__file__).resolve().parents[1]

for path in sorted((ROOT / "pipelines").glob("*.dsl")):
    side = path.with_suffix(".summary.json")
    summary = DatasetSummary.load(side) if side.exists() else None
    text = format_diagnostics(lint(parse_spec(path.read_text()), summary), f"pipelines/{path.name}")
    print(text or f"pipelines/{path.name}: clean\n", end="")
