"""Machine-learning datasets assembled from feature tables.

Variants:

``raw``  one row per unit (channel, or channel x window)
``cms``  one row per subject: mean then std of every feature over all units
``wms``  one row per (subject, channel): mean then std over the windows
``c2``   the two channels of one level side by side (rows = 3 per subject)
``c3``   the three channels of one side stacked (rows = 2 per subject)
``c6``   all six channels in one row

Concatenation works on channel-level rows: raw rows for ``w0`` and wms rows
for windowed corpora. Standard deviations are sample (ddof=1) everywhere.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import LEVELS, SIDES
from .errors import (
    AllRowsNaForColumn,
    FieldUndefinedForVariant,
    MissingChannel,
    MissingWindow,
)
from .features import WINDOWINGS, FeatureTable

logger = logging.getLogger(__name__)

VARIANTS = ("raw", "cms", "wms", "c2", "c3", "c6")
META_FIELDS = ("side", "level", "channel")
SIDE_CODE = {s: i for i, s in enumerate(SIDES)}
LEVEL_CODE = {s: i for i, s in enumerate(LEVELS)}
UNIT_KEYS = ("subject", "side", "level", "channel", "window")

# meta fields that are defined (and attached by default) for each variant
VARIANT_META = {
    "raw": ("side", "level", "channel"),
    "wms": ("side", "level", "channel"),
    "cms": (),
    "c2": ("level",),
    "c3": ("side",),
    "c6": (),
}


@dataclass(eq=False)
class Dataset:
    variant: str
    windowing: str
    matrix: np.ndarray
    row_meta: list[dict]
    labels: np.ndarray
    column_names: list[str]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def subjects(self) -> np.ndarray:
        return np.array([m["subject"] for m in self.row_meta])

    def column_index(self, names) -> list[int]:
        lookup = {n: i for i, n in enumerate(self.column_names)}
        return [lookup[n] for n in names]

    def meta_columns(self) -> list[str]:
        return [c for c in self.column_names if c.startswith("meta_")]


def _unit(meta: dict) -> dict:
    return {k: meta.get(k) for k in UNIT_KEYS}


def _check_complete(keys_by_subject: dict[str, set], what: str, error) -> None:
    expected = set().union(*keys_by_subject.values()) if keys_by_subject else set()
    for subject, keys in keys_by_subject.items():
        missing = expected - keys
        if missing:
            raise error(f"subject {subject} lacks {what} {sorted(missing, key=str)[:5]}")


def _subject_labels(table: FeatureTable) -> dict[str, int]:
    labels: dict[str, int] = {}
    for m in table.meta:
        if labels.setdefault(m["subject"], int(m["label"])) != int(m["label"]):
            raise ValueError(f"subject {m['subject']} has rows with different labels")
    return labels


def _sort_key(m: dict):
    return (m["subject"], m["channel"], m["window"])


def build_raw(table: FeatureTable) -> Dataset:
    """One row per unit; every subject must have the same set of units."""
    _subject_labels(table)
    units: dict[str, set] = {}
    for m in table.meta:
        key = (m["channel"], m["window"])
        if key in units.setdefault(m["subject"], set()):
            raise ValueError(f"duplicate unit {key} for subject {m['subject']}")
        units[m["subject"]].add(key)
    _check_complete({s: {c for c, _ in u} for s, u in units.items()}, "channels", MissingChannel)
    _check_complete(units, "units", MissingWindow)
    order = sorted(range(len(table.meta)), key=lambda i: _sort_key(table.meta[i]))
    meta = [_unit(table.meta[i]) for i in order]
    if table.windowing == "w0":
        for m in meta:
            m["window"] = None
    labels = np.array([int(table.meta[i]["label"]) for i in order])
    return Dataset("raw", table.windowing, table.values[order].copy(), meta, labels, list(table.names))


def _mean_std(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    finite = np.isfinite(block)
    count = finite.sum(axis=0)
    filled = np.where(finite, block, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / count
        dev = np.where(finite, block - mean, 0.0)
        std = np.sqrt((dev**2).sum(axis=0) / (count - 1))
    mean[count == 0] = np.nan
    std[count < 2] = np.nan
    return mean, std


def _aggregate(table: FeatureTable, group_keys, variant: str, error) -> Dataset:
    labels_by_subject = _subject_labels(table)
    groups: dict[tuple, list[int]] = {}
    for i, m in enumerate(table.meta):
        groups.setdefault(tuple(m[k] for k in group_keys), []).append(i)
    # every group of a subject must hold the same set of units
    members = {g: {(table.meta[i]["channel"], table.meta[i]["window"]) for i in idx} for g, idx in groups.items()}
    if variant == "cms":
        _check_complete({g[0]: s for g, s in members.items()}, "units", error)
    else:
        windows = {g: {w for _, w in s} for g, s in members.items()}
        _check_complete({"/".join(map(str, g)): w for g, w in windows.items()}, "windows", error)
        per_subject: dict[str, set] = {}
        for g in groups:
            per_subject.setdefault(g[0], set()).add(g[1])
        _check_complete(per_subject, "channels", MissingChannel)

    rows, meta, labels = [], [], []
    for g in sorted(groups):
        idx = groups[g]
        mean, std = _mean_std(table.values[idx])
        rows.append(np.concatenate([mean, std]))
        first = table.meta[idx[0]]
        unit = {k: None for k in UNIT_KEYS}
        unit["subject"] = first["subject"]
        if variant == "wms":
            unit.update(channel=first["channel"], side=first["side"], level=first["level"])
        meta.append(unit)
        labels.append(labels_by_subject[first["subject"]])
    names = [f"{n}_mean" for n in table.names] + [f"{n}_std" for n in table.names]
    matrix = np.vstack(rows) if rows else np.empty((0, len(names)))
    return Dataset(variant, table.windowing, matrix, meta, np.array(labels), names)


def aggregate_cms(table: FeatureTable) -> Dataset:
    """Per-subject mean and std of each feature over all channels and windows."""
    return _aggregate(table, ("subject",), "cms", MissingChannel)


def aggregate_wms(table: FeatureTable) -> Dataset:
    """Per-(subject, channel) mean and std of each feature over the windows."""
    if WINDOWINGS.get(table.windowing, 1) < 2:
        raise FieldUndefinedForVariant("wms needs a windowed corpus (w3 or w5)")
    return _aggregate(table, ("subject", "channel"), "wms", MissingWindow)


# positions joined by each concatenation variant: (group field, ordering field)
CONCAT_LAYOUT = {
    "c2": ("level", "side"),
    "c3": ("side", "level"),
    "c6": (None, None),
}
_POSITION_ORDER = {"side": SIDES, "level": LEVELS}


def _position(m: dict, variant: str) -> str:
    if variant == "c2":
        return m["side"]
    if variant == "c3":
        return m["level"]
    return f"{m['side']}{m['level']}"


def _position_rank(m: dict, variant: str) -> tuple:
    return (SIDE_CODE[m["side"]], LEVEL_CODE[m["level"]]) if variant != "c2" else (SIDE_CODE[m["side"]],)


def concat(variant: str, base: Dataset) -> Dataset:
    """Join channel-level rows of ``base`` side by side.

    ``base`` must hold one row per (subject, channel): raw ``w0`` rows or
    ``wms`` rows. Columns are channel-major blocks named ``<col>@<position>``.
    """
    if variant not in CONCAT_LAYOUT:
        raise ValueError(f"unknown concatenation variant {variant!r}")
    if base.variant not in ("raw", "wms") or any(m.get("window") is not None for m in base.row_meta):
        raise FieldUndefinedForVariant("concatenation needs channel-level rows (w0 raw or wms)")
    group_field = CONCAT_LAYOUT[variant][0]
    expected_size = {"c2": 2, "c3": 3, "c6": 6}[variant]

    groups: dict[tuple, list[int]] = {}
    for i, m in enumerate(base.row_meta):
        key = (m["subject"],) if group_field is None else (m["subject"], m[group_field])
        groups.setdefault(key, []).append(i)

    def rank(g):
        if group_field is None:
            return (g[0],)
        return (g[0], _POSITION_ORDER[group_field].index(g[1]))

    positions = None
    rows, meta, labels = [], [], []
    for g in sorted(groups, key=rank):
        idx = sorted(groups[g], key=lambda i: _position_rank(base.row_meta[i], variant))
        pos = [_position(base.row_meta[i], variant) for i in idx]
        if len(idx) != expected_size or len(set(pos)) != expected_size:
            raise MissingChannel(f"group {g} has channels at {pos}, expected {expected_size}")
        if positions is None:
            positions = pos
        elif pos != positions:
            raise MissingChannel(f"group {g} has positions {pos}, expected {positions}")
        rows.append(np.concatenate([base.matrix[i] for i in idx]))
        unit = {k: None for k in UNIT_KEYS}
        unit["subject"] = g[0]
        if group_field is not None:
            unit[group_field] = g[1]
        meta.append(unit)
        labels.append(base.labels[idx[0]])
    if positions is None:
        raise MissingChannel("no rows to concatenate")
    names = [f"{c}@{p}" for p in positions for c in base.column_names]
    return Dataset(variant, base.windowing, np.vstack(rows), meta, np.array(labels), names)


def deconcat(ds: Dataset) -> tuple[np.ndarray, list[str]]:
    """Split a concatenated dataset back into channel rows.

    Returns ``(rows, positions)``: the array has shape (n_rows * k, width)
    with the k channel blocks of each row consecutive.
    """
    positions: list[str] = []
    for name in ds.column_names:
        if name.startswith("meta_"):
            continue
        pos = name.rsplit("@", 1)[1]
        if pos not in positions:
            positions.append(pos)
    k = len(positions)
    features = [i for i, n in enumerate(ds.column_names) if not n.startswith("meta_")]
    block = ds.matrix[:, features]
    width = block.shape[1] // k
    return block.reshape(len(block) * k, width), positions


def attach_meta(ds: Dataset, fields) -> Dataset:
    """Append small-integer location columns ``meta_<field>``.

    side Left=0/Right=1, level Upper=0/Middle=1/Lower=2, channel as-is.
    """
    fields = list(fields)
    cols = []
    for f in fields:
        if f not in META_FIELDS:
            raise FieldUndefinedForVariant(f"unknown meta field {f!r}")
        values = [m.get(f) for m in ds.row_meta]
        if any(v is None for v in values):
            raise FieldUndefinedForVariant(f"{f} is undefined for {ds.variant} rows")
        if f == "side":
            cols.append([SIDE_CODE[v] for v in values])
        elif f == "level":
            cols.append([LEVEL_CODE[v] for v in values])
        else:
            cols.append([int(v) for v in values])
    if not cols:
        return ds
    matrix = np.column_stack([ds.matrix, np.asarray(cols, dtype=np.float64).T])
    return replace(ds, matrix=matrix, column_names=ds.column_names + [f"meta_{f}" for f in fields])


def impute_na(ds: Dataset, policy: str = "median", tau: float = 0.5) -> tuple[Dataset, list[str]]:
    """Remove masked values.

    ``policy`` is ``"drop"`` (drop columns whose NA fraction exceeds
    ``tau``), ``"median"`` (column-median imputation) or ``"drop+median"``.
    Returns the new dataset and the dropped column names.
    """
    if policy not in ("drop", "median", "drop+median"):
        raise ValueError(f"unknown NA policy {policy!r}")
    matrix = ds.matrix.copy()
    names = list(ds.column_names)
    dropped: list[str] = []
    na = ~np.isfinite(matrix)
    if not na.any():
        return ds, dropped
    if "drop" in policy:
        frac = na.mean(axis=0)
        keep = frac <= tau
        dropped = [n for n, k in zip(names, keep) if not k]
        matrix = matrix[:, keep]
        names = [n for n, k in zip(names, keep) if k]
        if dropped:
            logger.info("dropped %d columns with NA fraction > %g", len(dropped), tau)
    if "median" in policy:
        na = ~np.isfinite(matrix)
        empty = na.all(axis=0) & (len(matrix) > 0)
        if empty.any():
            raise AllRowsNaForColumn(f"column {names[int(np.argmax(empty))]} is NA in every row")
        for j in np.flatnonzero(na.any(axis=0)):
            col = matrix[:, j]
            col[na[:, j]] = np.median(col[~na[:, j]])
    return replace(ds, matrix=matrix, column_names=names), dropped


def build_dataset(table: FeatureTable, variant: str, meta_fields=None) -> Dataset:
    """Assemble ``variant`` from a feature table and attach meta columns.

    ``meta_fields=None`` attaches nothing; pass ``"default"`` for the
    per-variant defaults used by supervised runs.
    """
    if variant == "raw":
        ds = build_raw(table)
    elif variant == "cms":
        ds = aggregate_cms(table)
    elif variant == "wms":
        ds = aggregate_wms(table)
    elif variant in CONCAT_LAYOUT:
        base = build_raw(table) if table.windowing == "w0" else aggregate_wms(table)
        ds = concat(variant, base)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if meta_fields == "default":
        meta_fields = VARIANT_META[variant]
    return attach_meta(ds, meta_fields or ())


def write_dataset(path: str | Path, ds: Dataset) -> None:
    """CSV with identity columns (subject, label, unit_*) then the matrix."""
    path = Path(path)
    ident = ["subject", "label", "unit_side", "unit_level", "unit_channel", "unit_window"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ident + ds.column_names)
        for m, label, row in zip(ds.row_meta, ds.labels, ds.matrix):
            cells = [m["subject"], int(label)] + ["" if m.get(k) is None else m[k] for k in ("side", "level", "channel", "window")]
            cells += ["NA" if not np.isfinite(v) else repr(float(v)) for v in row]
            writer.writerow(cells)
    manifest = {"variant": ds.variant, "windowing": ds.windowing, "n_rows": ds.shape[0], "n_cols": ds.shape[1]}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    info = json.loads(path.with_suffix(".json").read_text())
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[6:]
        meta, labels, rows = [], [], []
        for cells in reader:
            side, level, channel, window = (c if c != "" else None for c in cells[2:6])
            meta.append(
                {
                    "subject": cells[0],
                    "side": side,
                    "level": level,
                    "channel": None if channel is None else int(channel),
                    "window": None if window is None else int(window),
                }
            )
            labels.append(int(cells[1]))
            rows.append([np.nan if c == "NA" else float(c) for c in cells[6:]])
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(info["variant"], info["windowing"], matrix, meta, np.array(labels), names)
