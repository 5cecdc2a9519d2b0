"""Execution traces: what each pipeline stage saw, produced and was fitted on."""
from __future__ import annotations

from dataclasses import dataclass, field

PARTS = ("train", "validation", "test")


@dataclass(frozen=True)
class TraceEvent:
    stage: str
    input_ids: frozenset[int] = frozenset()
    output_ids: frozenset[int] = frozenset()
    fit_ids: frozenset[int] | None = None
    parts: dict[int, str] | None = None
    detail: str = ""

    @property
    def fitted(self) -> bool:
        return self.fit_ids is not None


@dataclass
class Trace:
    """Ordered stage events plus the lineage of every sample that appeared.

    ``origins`` and ``groups`` map sample_id to origin_id / group_id.
    ``grouped`` records whether the run declared patient grouping.
    """

    events: list[TraceEvent] = field(default_factory=list)
    origins: dict[int, int] = field(default_factory=dict)
    groups: dict[int, int] = field(default_factory=dict)
    grouped: bool = False

    def register(self, dataset) -> None:
        for sid, oid, gid in zip(
            dataset.sample_ids.tolist(), dataset.origin_ids.tolist(), dataset.group_ids.tolist()
        ):
            self.origins[sid] = oid
            self.groups[sid] = gid

    def log(self, event: TraceEvent) -> None:
        self.events.append(event)

    @property
    def final_parts(self) -> dict[int, str]:
        for event in reversed(self.events):
            if event.parts is not None:
                return event.parts
        return {}
