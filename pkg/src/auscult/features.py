"""Named acoustic feature vectors per analysis unit.

A :class:`FeatureRegistry` fixes the ordered list of feature names and the
framing parameters. ``default_registry()`` has 370 entries:

* 10 scalar features: F0 mean/std and voiced fraction, formants F1-F4
  (frame means), loudness, HNR (mean over voiced frames) and the DFA
  exponent of the whole unit;
* 45 frame-level series summarised by 8 statistics each (mean, std,
  skewness, kurtosis, min, max, median, iqr): MFCC c0-c12, log energy and
  RMS, each with first and second regression deltas.

Values that are undefined for a unit (no voiced frames, constant series,
...) are NaN in ``values`` and flagged in ``na_mask``; they are never
replaced here.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import TooShortForDfa, TooShortForFrame

FAMILIES = ("F0", "Formant", "Loudness", "HNR", "DFA", "LogEnergy", "RMS", "MFCC")
SERIES_STATS = ("mean", "std", "skewness", "kurtosis", "min", "max", "median", "iqr")


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    family: str
    source: str
    statistic: str | None = None


@dataclass(frozen=True)
class FeatureRegistry:
    entries: tuple[FeatureEntry, ...]
    frame_length: float = 0.100
    frame_hop: float = 0.050
    window: str = "hann"
    n_mfcc: int = 13
    n_mels: int = 26
    hash: str = field(init=False, compare=False)

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        for e in self.entries:
            if e.family not in FAMILIES:
                raise ValueError(f"unknown family {e.family!r}")
        object.__setattr__(self, "hash", hashlib.sha256(self.to_json().encode()).hexdigest()[:16])

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def to_json(self) -> str:
        payload = {
            "frame_length": self.frame_length,
            "frame_hop": self.frame_hop,
            "window": self.window,
            "n_mfcc": self.n_mfcc,
            "n_mels": self.n_mels,
            "entries": [[e.name, e.family, e.source, e.statistic] for e in self.entries],
        }
        return json.dumps(payload, sort_keys=True)

    def manifest(self) -> dict:
        return {
            "registry_hash": self.hash,
            "n_features": len(self),
            "frame_length": self.frame_length,
            "frame_hop": self.frame_hop,
            "window": self.window,
            "n_mfcc": self.n_mfcc,
            "n_mels": self.n_mels,
        }


def _series_families(n_mfcc: int) -> list[tuple[str, str]]:
    base = [(f"mfcc{i}", "MFCC") for i in range(n_mfcc)]
    base += [("log_energy", "LogEnergy"), ("rms", "RMS")]
    out = []
    for prefix in ("", "d_", "dd_"):
        out += [(prefix + name, fam) for name, fam in base]
    return out


SCALARS = (
    ("f0_mean", "F0"),
    ("f0_std", "F0"),
    ("f0_voiced_fraction", "F0"),
    ("f1", "Formant"),
    ("f2", "Formant"),
    ("f3", "Formant"),
    ("f4", "Formant"),
    ("loudness", "Loudness"),
    ("hnr", "HNR"),
    ("dfa", "DFA"),
)


def default_registry(n_mfcc: int = 13, stats=SERIES_STATS, **params) -> FeatureRegistry:
    """The default 370-entry registry (10 scalars + 45 series x 8 stats)."""
    entries = [FeatureEntry(name, fam, name) for name, fam in SCALARS]
    for series, fam in _series_families(n_mfcc):
        entries += [FeatureEntry(f"{series}_{stat}", fam, series, stat) for stat in stats]
    return FeatureRegistry(tuple(entries), n_mfcc=n_mfcc, **params)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    registry_hash: str
    values: np.ndarray
    na_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _nan_mean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    x = x[np.isfinite(x)]
    return float(x.mean()) if len(x) else np.nan


def unit_measurements(samples, sample_rate: int, registry: FeatureRegistry) -> tuple[dict, dict]:
    """Scalar features and per-frame series for one unit."""
    frame_len = int(round(registry.frame_length * sample_rate))
    hop = int(round(registry.frame_hop * sample_rate))
    raw = dsp.frame_signal(samples, frame_len, hop)
    win = dsp.frame_signal(samples, frame_len, hop, registry.window)

    f0, peak = dsp.pitch_track(raw, sample_rate)
    voiced = np.isfinite(f0)
    r = np.clip(peak, 1e-6, 1 - 1e-6)
    hnr_frames = np.where(voiced, np.clip(10 * np.log10(r / (1 - r)), -60.0, 60.0), np.nan)
    fmt = dsp.formants(win, sample_rate, 4)
    try:
        dfa = dsp.dfa_exponent(samples)
    except TooShortForDfa:
        dfa = np.nan

    scalars = {
        "f0_mean": _nan_mean(f0),
        "f0_std": float(np.std(f0[voiced])) if voiced.sum() >= 2 else np.nan,
        "f0_voiced_fraction": float(voiced.mean()),
        "f1": _nan_mean(fmt[:, 0]),
        "f2": _nan_mean(fmt[:, 1]),
        "f3": _nan_mean(fmt[:, 2]),
        "f4": _nan_mean(fmt[:, 3]),
        "loudness": dsp.loudness(win),
        "hnr": _nan_mean(hnr_frames),
        "dfa": dfa,
    }

    base = {}
    coeffs = dsp.mfcc(win, sample_rate, registry.n_mfcc, registry.n_mels)
    for i in range(registry.n_mfcc):
        base[f"mfcc{i}"] = coeffs[:, i]
    base["log_energy"] = dsp.frame_log_energy(raw)
    base["rms"] = dsp.frame_rms(raw)
    series = dict(base)
    for name, values in base.items():
        d = dsp.deltas(values)
        series["d_" + name] = d
        series["dd_" + name] = dsp.deltas(d)
    return scalars, series


def extract(unit, registry: FeatureRegistry | None = None) -> FeatureVector:
    """Feature vector of a Recording or WindowedRecording."""
    registry = registry or default_registry()
    return extract_samples(unit.samples, unit.sample_rate, registry)


def extract_samples(samples, sample_rate: int, registry: FeatureRegistry) -> FeatureVector:
    if len(samples) < int(round(registry.frame_length * sample_rate)):
        raise TooShortForFrame(f"{len(samples)} samples shorter than one frame")
    scalars, series = unit_measurements(samples, sample_rate, registry)
    wanted: dict[str, set[str]] = {}
    for e in registry.entries:
        if e.statistic is not None:
            wanted.setdefault(e.source, set()).add(e.statistic)
    summaries = {src: dsp.describe(series[src], sorted(stats)) for src, stats in wanted.items()}
    values = np.empty(len(registry))
    for j, e in enumerate(registry.entries):
        values[j] = scalars[e.source] if e.statistic is None else summaries[e.source][e.statistic]
    mask = ~np.isfinite(values)
    values[mask] = np.nan
    return FeatureVector(registry.hash, values, mask)


# --------------------------------------------------------------------------
# feature tables


@dataclass
class FeatureTable:
    """Feature vectors of many units plus their identifying metadata.

    ``meta`` holds one dict per row with keys subject, channel, side, level,
    window and label.
    """

    registry: FeatureRegistry | None
    names: list[str]
    values: np.ndarray
    meta: list[dict]
    windowing: str = "w0"

    META_COLUMNS = ("subject", "channel", "side", "level", "window", "label")

    def __len__(self) -> int:
        return len(self.meta)


WINDOWINGS = {"w0": 1, "w3": 3, "w5": 5}


def extract_table(recordings, windowing: str, labels: dict[str, int], registry=None, threads: int = 1) -> FeatureTable:
    """Extract features for every (recording, window) unit.

    Rows are ordered by recording then window index, independent of
    ``threads``.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .corpus import split_windows

    registry = registry or default_registry()
    n = WINDOWINGS[windowing]
    units = [w for rec in recordings for w in split_windows(rec, n)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vectors = list(pool.map(lambda u: extract(u, registry), units))
    else:
        vectors = [extract(u, registry) for u in units]
    meta = [
        {
            "subject": u.parent.subject_code,
            "channel": u.parent.channel,
            "side": u.parent.side,
            "level": u.parent.level,
            "window": u.window_index,
            "label": labels[u.parent.subject_code],
        }
        for u in units
    ]
    values = np.vstack([v.values for v in vectors]) if vectors else np.empty((0, len(registry)))
    return FeatureTable(registry, registry.names, values, meta, windowing)


def write_feature_csv(path: str | Path, table: FeatureTable) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*FeatureTable.META_COLUMNS, *table.names])
        for meta, row in zip(table.meta, table.values):
            cells = [meta[k] for k in FeatureTable.META_COLUMNS]
            cells += ["NA" if not np.isfinite(v) else repr(float(v)) for v in row]
            writer.writerow(cells)
    sidecar = {"windowing": table.windowing, "n_rows": len(table)}
    if table.registry is not None:
        sidecar.update(table.registry.manifest())
        sidecar["registry"] = json.loads(table.registry.to_json())
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_feature_csv(path: str | Path) -> FeatureTable:
    path = Path(path)
    registry = None
    windowing = "w0"
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        info = json.loads(sidecar.read_text())
        windowing = info.get("windowing", windowing)
        if "registry" in info:
            reg = info["registry"]
            registry = FeatureRegistry(
                tuple(FeatureEntry(*e) for e in reg["entries"]),
                frame_length=reg["frame_length"],
                frame_hop=reg["frame_hop"],
                window=reg["window"],
                n_mfcc=reg["n_mfcc"],
                n_mels=reg["n_mels"],
            )
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_meta = len(FeatureTable.META_COLUMNS)
        names = header[n_meta:]
        meta, rows = [], []
        for cells in reader:
            m = dict(zip(FeatureTable.META_COLUMNS, cells[:n_meta]))
            m["channel"] = int(m["channel"])
            m["window"] = int(m["window"])
            m["label"] = int(m["label"])
            meta.append(m)
            rows.append([np.nan if c == "NA" else float(c) for c in cells[n_meta:]])
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureTable(registry, names, values, meta, windowing)
