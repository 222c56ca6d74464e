"""Auscultation recordings: WAV I/O, corpus manifest and windowing.

Recordings are mono 16-bit PCM. Samples are normalised by dividing by 32768,
which is exactly invertible on the int16 grid. Subject metadata and the
channel -> (side, level) mapping come from a CSV manifest; nothing about the
body location of a channel is hard-coded.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DanglingFileReference,
    DuplicateChannel,
    ManifestError,
    MissingDiagnosis,
    NotMono,
    NotPcm16,
    RecordingTooShort,
    TruncatedFile,
    UnknownSubject,
    WavFormatError,
    WrongSampleRate,
)

SAMPLE_RATE = 4000
PCM_SCALE = 32768.0
SIDES = ("Left", "Right")
LEVELS = ("Upper", "Middle", "Lower")
SEXES = ("Female", "Male")
MANIFEST_HEADER = ("file", "subject", "channel", "side", "level", "sex", "age", "diagnosis")


@dataclass(frozen=True)
class SubjectMeta:
    subject_code: str
    sex: str
    age: float
    diagnosis: int  # 1 = pathological

    @property
    def stratum(self) -> str:
        return f"{self.sex}:{self.diagnosis}"


@dataclass(frozen=True, eq=False)
class Recording:
    subject_code: str
    channel: int | None
    side: str | None
    level: str | None
    sample_rate: int
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class WindowedRecording:
    parent: Recording
    window_index: int
    n_windows: int
    start: int
    samples: np.ndarray

    @property
    def sample_rate(self) -> int:
        return self.parent.sample_rate

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    subject_code: str
    channel: int
    side: str
    level: str


@dataclass
class CorpusIndex:
    """Immutable-after-load view of a corpus manifest."""

    root: Path
    entries: list[ManifestEntry]
    subjects: dict[str, SubjectMeta]
    channel_map: dict[int, tuple[str, str]]
    _by_file: dict[str, ManifestEntry] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_file = {Path(e.file).name: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def entry_for(self, path: str | Path) -> ManifestEntry:
        try:
            return self._by_file[Path(path).name]
        except KeyError:
            raise UnknownSubject(f"{path} is not listed in the manifest") from None

    def path_of(self, entry: ManifestEntry) -> Path:
        return self.root / entry.file

    def label_of(self, subject_code: str) -> int:
        return self.subjects[subject_code].diagnosis


# --------------------------------------------------------------------------
# WAV I/O


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV file; return (normalised samples, rate)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(n_frames)
    except wave.Error as exc:
        # the stdlib reader only understands integer PCM
        msg = str(exc)
        if "unknown format" in msg:
            raise NotPcm16(f"{path}: {msg}") from exc
        raise WavFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise TruncatedFile(f"{path}: header is truncated") from exc

    if n_channels != 1:
        raise NotMono(f"{path}: {n_channels} channels")
    if width != 2:
        raise NotPcm16(f"{path}: sample width {8 * width} bits")
    if len(raw) != 2 * n_frames:
        raise TruncatedFile(f"{path}: header declares {n_frames} frames, found {len(raw) // 2}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / PCM_SCALE, rate


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    pcm = np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    return np.clip(pcm, -32768, 32767).astype("<i2")


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write normalised samples as mono 16-bit PCM (values clipped to int16)."""
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(int(sample_rate))
        wav.writeframes(to_pcm16(samples).tobytes())


def load_wav(
    path: str | Path,
    index: CorpusIndex | None = None,
    *,
    allow_any_rate: bool = False,
) -> Recording:
    """Load one channel recording and join its manifest metadata.

    Without an ``index`` the subject code is the file stem and the location
    fields are left empty.
    """
    samples, rate = read_wav(path)
    if rate != SAMPLE_RATE and not allow_any_rate:
        raise WrongSampleRate(f"{path}: {rate} Hz (expected {SAMPLE_RATE} Hz)")
    if index is None:
        return Recording(Path(path).stem, None, None, None, rate, samples)
    entry = index.entry_for(path)
    return Recording(entry.subject_code, entry.channel, entry.side, entry.level, rate, samples)


def load_corpus(index: CorpusIndex, *, allow_any_rate: bool = False) -> list[Recording]:
    """Load every manifest entry, ordered by (subject, channel)."""
    entries = sorted(index.entries, key=lambda e: (e.subject_code, e.channel))
    return [load_wav(index.path_of(e), index, allow_any_rate=allow_any_rate) for e in entries]


# --------------------------------------------------------------------------
# manifest


def _parse_diagnosis(value: str, subject: str) -> int:
    value = value.strip()
    if value == "":
        raise MissingDiagnosis(f"subject {subject} has no diagnosis")
    if value not in ("0", "1"):
        raise ManifestError(f"subject {subject}: diagnosis must be 0 or 1, got {value!r}")
    return int(value)


def load_manifest(path: str | Path, *, check_files: bool = True) -> CorpusIndex:
    """Parse a corpus manifest CSV.

    ``file`` paths are relative to the manifest's directory. With
    ``check_files`` every referenced WAV must exist.
    """
    path = Path(path)
    root = path.parent
    entries: list[ManifestEntry] = []
    subjects: dict[str, SubjectMeta] = {}
    channel_map: dict[int, tuple[str, str]] = {}
    seen: set[tuple[str, int]] = set()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_HEADER:
            raise ManifestError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            subject = row["subject"].strip()
            if not subject:
                raise ManifestError(f"line {lineno}: empty subject")
            diagnosis = _parse_diagnosis(row["diagnosis"] or "", subject)
            sex = row["sex"].strip()
            if sex not in SEXES:
                raise ManifestError(f"line {lineno}: sex must be one of {SEXES}, got {sex!r}")
            side, level = row["side"].strip(), row["level"].strip()
            if side not in SIDES or level not in LEVELS:
                raise ManifestError(f"line {lineno}: bad side/level {side!r}/{level!r}")
            try:
                channel = int(row["channel"])
                age = float(row["age"])
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            if not 1 <= channel <= 6:
                raise ManifestError(f"line {lineno}: channel {channel} outside 1..6")

            if (subject, channel) in seen:
                raise DuplicateChannel(f"subject {subject} lists channel {channel} twice")
            seen.add((subject, channel))
            if channel_map.setdefault(channel, (side, level)) != (side, level):
                raise DuplicateChannel(
                    f"channel {channel} mapped to both {channel_map[channel]} and {(side, level)}"
                )

            meta = SubjectMeta(subject, sex, age, diagnosis)
            if subjects.setdefault(subject, meta) != meta:
                raise ManifestError(f"subject {subject} has inconsistent sex/age/diagnosis")

            fname = row["file"].strip()
            if check_files and not (root / fname).is_file():
                raise DanglingFileReference(f"line {lineno}: {fname} does not exist")
            entries.append(ManifestEntry(fname, subject, channel, side, level))

    return CorpusIndex(root, entries, subjects, channel_map)


def write_manifest(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# --------------------------------------------------------------------------
# windowing


def window_bounds(n_samples: int, n_windows: int) -> list[tuple[int, int]]:
    """Sample ranges of ``n_windows`` half-overlapping windows.

    The recording is cut at ``floor(j * N / (n + 1))`` for j = 0..n+1 and
    window i spans cuts i..i+2, so the last window always ends at N and
    window lengths differ by at most one sample when 2N/(n+1) is fractional.
    """
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    if n_windows == 1:
        return [(0, n_samples)]
    if n_samples < n_windows + 1:
        raise RecordingTooShort(f"{n_samples} samples cannot hold {n_windows} windows")
    cuts = [(j * n_samples) // (n_windows + 1) for j in range(n_windows + 2)]
    return [(cuts[i], cuts[i + 2]) for i in range(n_windows)]


def split_windows(rec: Recording, n: int) -> list[WindowedRecording]:
    """Split a recording into ``n`` windows with 50% overlap (n in 1, 3, 5)."""
    if n not in (1, 3, 5):
        raise ValueError(f"n must be 1, 3 or 5, got {n}")
    return [
        WindowedRecording(rec, i, n, start, rec.samples[start:stop])
        for i, (start, stop) in enumerate(window_bounds(len(rec.samples), n))
    ]
