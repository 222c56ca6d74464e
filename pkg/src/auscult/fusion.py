"""Decision fusion: average row scores over a grouping key.

A scope names the identity fields that define a group. Fusing for
``code`` averages every prediction of a subject; ``code_side``,
``code_level`` and ``code_channel`` keep the location apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import EmptyGroup, FieldUndefinedForVariant, InconsistentGroupLabel

SCOPES: dict[str, tuple[str, ...]] = {
    "code": ("subject",),
    "code_side": ("subject", "side"),
    "code_level": ("subject", "level"),
    "code_channel": ("subject", "channel"),
}
SCOPE_TITLES = {
    "code": "Code",
    "code_side": "Code x Side",
    "code_level": "Code x Level",
    "code_channel": "Code x Channel",
}
KEY_FIELDS = ("subject", "side", "level", "channel", "window")


@dataclass(frozen=True)
class Prediction:
    row_id: int
    subject: str
    score: float
    label: int
    side: str | None = None
    level: str | None = None
    channel: int | None = None
    window: int | None = None
    fused_scope: str | None = None

    def key(self, fields) -> tuple:
        return tuple(getattr(self, f) for f in fields)


def scope_fields(scope) -> tuple[str, ...]:
    """Identity fields of a named scope, or a tuple of fields passed through."""
    if isinstance(scope, str):
        if scope not in SCOPES:
            raise ValueError(f"unknown fusion scope {scope!r}; expected one of {sorted(SCOPES)}")
        return SCOPES[scope]
    fields = tuple(scope)
    bad = [f for f in fields if f not in KEY_FIELDS]
    if bad or not fields:
        raise ValueError(f"invalid scope fields {fields}")
    return fields


def fuse(predictions, scope) -> list[Prediction]:
    """Arithmetic mean of scores per group.

    Groups come out in order of first appearance. A fused prediction keeps
    the first member's ``row_id`` and the identity fields the scope retains;
    the others are cleared unless every member agrees on them.
    """
    fields = scope_fields(scope)
    name = scope if isinstance(scope, str) else "+".join(fields)
    predictions = list(predictions)
    if not predictions:
        raise EmptyGroup("nothing to fuse")

    groups: dict[tuple, list[Prediction]] = {}
    for p in predictions:
        key = p.key(fields)
        if any(v is None for v in key):
            raise FieldUndefinedForVariant(f"row {p.row_id} lacks a field required by scope {name}: {fields}")
        groups.setdefault(key, []).append(p)

    fused = []
    for key, members in groups.items():
        labels = {m.label for m in members}
        if len(labels) != 1:
            raise InconsistentGroupLabel(f"group {key} mixes labels {sorted(labels)}")
        first = members[0]
        shared = {f: getattr(first, f) for f in KEY_FIELDS if all(getattr(m, f) == getattr(first, f) for m in members)}
        cleared = {f: shared.get(f) for f in KEY_FIELDS}
        scores = [m.score for m in members]
        # fsum plus a clip keeps the mean inside the member range despite rounding
        score = min(max(math.fsum(scores) / len(scores), min(scores)), max(scores))
        fused.append(replace(first, score=score, fused_scope=name, **cleared))
    return fused


def group_sizes(predictions, scope) -> dict[tuple, int]:
    fields = scope_fields(scope)
    sizes: dict[tuple, int] = {}
    for p in predictions:
        k = p.key(fields)
        sizes[k] = sizes.get(k, 0) + 1
    return sizes
