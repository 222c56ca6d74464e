"""Trained forest container and its JSON tree dump."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ColumnMismatch

FORMAT_VERSION = 1


@dataclass(eq=False)
class TrainedModel:
    kind: str  # "RF" or "FCF"
    trees: dict[str, np.ndarray]
    config: object
    column_names: list[str]
    info: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees["node_count"])


def check_columns(model: TrainedModel, rows, column_names=None) -> np.ndarray:
    X = np.ascontiguousarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.column_names):
        raise ColumnMismatch(f"expected {len(model.column_names)} columns, got shape {X.shape}")
    if column_names is not None and list(column_names) != model.column_names:
        raise ColumnMismatch("column names differ from the training columns")
    return X


def predict(model: TrainedModel, rows, column_names=None) -> np.ndarray:
    """Pathology score in [0, 1] for either model kind."""
    if model.kind == "RF":
        from .rf import rf_predict

        return rf_predict(model, rows, column_names)
    from .fcf import fcf_score

    return fcf_score(model, rows, column_names)


def _array_to_json(a: np.ndarray) -> dict:
    return {"dtype": str(a.dtype), "shape": list(a.shape), "data": a.ravel().tolist()}


def _array_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=d["dtype"]).reshape(d["shape"])


def to_json(model: TrainedModel) -> str:
    """Serialise; floats are written with round-trip precision."""
    cfg = dataclasses.asdict(model.config)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": cfg,
        "column_names": model.column_names,
        "info": model.info,
        "trees": {k: _array_to_json(v) for k, v in sorted(model.trees.items())},
    }
    return json.dumps(payload)


def from_json(text: str) -> TrainedModel:
    from .fcf import FcfConfig
    from .rf import RfConfig

    payload = json.loads(text)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {payload.get('format_version')}")
    cfg_cls = RfConfig if payload["kind"] == "RF" else FcfConfig
    cfg = payload["config"]
    if "always_split" in cfg:
        cfg["always_split"] = tuple(cfg["always_split"])
    trees = {k: _array_from_json(v) for k, v in payload["trees"].items()}
    return TrainedModel(payload["kind"], trees, cfg_cls(**cfg), payload["column_names"], payload["info"])


def save(model: TrainedModel, path: str | Path) -> None:
    Path(path).write_text(to_json(model))


def load(path: str | Path) -> TrainedModel:
    return from_json(Path(path).read_text())
