"""Synthetic six-channel auscultation corpus with known labels.

Normal channels are band-limited noise (100-1000 Hz) shaped by a breathing
envelope, plus a low heart-sound thump train, stethoscope rub bursts and
a recording-level gain. Those nuisances vary between subjects and carry no
label information.
Pathological subjects add adventitious sounds on a random subset of their
channels: crackles (exponentially damped sinusoid bursts of 5-20 ms placed
in inspiration) and/or wheezes (frequency-jittered tones). ``snr_db`` sets
the power of the adventitious sounds relative to the breath sound, so it
works as a difficulty knob.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .corpus import SAMPLE_RATE, write_manifest, write_wav

logger = logging.getLogger(__name__)

# channel number -> (side, level): upper pair, between the scapulae, lower pair
CHANNEL_MAP = {
    1: ("Left", "Upper"),
    2: ("Right", "Upper"),
    3: ("Left", "Middle"),
    4: ("Right", "Middle"),
    5: ("Left", "Lower"),
    6: ("Right", "Lower"),
}

# age (mean, sd) by (sex, diagnosis), shaped after a small clinical cohort
_AGE = {
    ("Female", 0): (66.0, 20.3),
    ("Male", 0): (49.4, 19.5),
    ("Female", 1): (71.9, 11.1),
    ("Male", 1): (73.8, 11.2),
}


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 45
    pathological_fraction: float = 19 / 45
    seed: int = 7
    breath_cycles: tuple[float, float] = (3.0, 4.0)  # cycles per recording
    crackle_rate: float = 4.0  # events per second of inspiration
    wheeze_band: tuple[float, float] = (100.0, 800.0)
    snr_db: float = -15.0  # adventitious vs breath sound power
    female_fraction: float = 20 / 45
    channel_fraction: float = 0.6  # chance a pathological subject's channel is affected
    duration: float = 15.0
    sample_rate: int = SAMPLE_RATE

    def validate(self) -> None:
        if not 0.0 < self.pathological_fraction < 1.0:
            raise ValueError("pathological_fraction must lie strictly between 0 and 1")
        if self.n_subjects < 2:
            raise ValueError("need at least 2 subjects")
        lo, hi = self.breath_cycles
        if not 0 < lo <= hi:
            raise ValueError("breath_cycles must be an increasing positive pair")
        flo, fhi = self.wheeze_band
        if not 0 < flo < fhi < self.sample_rate / 2:
            raise ValueError("wheeze_band must lie inside (0, Nyquist)")
        if not 0.0 < self.channel_fraction <= 1.0:
            raise ValueError("channel_fraction must lie in (0, 1]")
        if self.crackle_rate < 0:
            raise ValueError("crackle_rate must be >= 0")

    @property
    def n_pathological(self) -> int:
        n = int(round(self.n_subjects * self.pathological_fraction))
        return min(max(n, 1), self.n_subjects - 1)


@dataclass(frozen=True)
class SubjectPlan:
    code: str
    diagnosis: int
    sex: str
    age: int
    index: int


def plan_subjects(spec: SynthSpec) -> list[SubjectPlan]:
    """Codes, labels, sexes and ages; sex shares are balanced within each class."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    n_path = spec.n_pathological
    diagnoses = np.array([1] * n_path + [0] * (spec.n_subjects - n_path))
    rng.shuffle(diagnoses)
    sexes = np.empty(spec.n_subjects, dtype=object)
    for d in (0, 1):
        idx = np.flatnonzero(diagnoses == d)
        n_f = int(round(len(idx) * spec.female_fraction))
        chosen = rng.permutation(idx)
        sexes[chosen[:n_f]] = "Female"
        sexes[chosen[n_f:]] = "Male"
    plans = []
    for i in range(spec.n_subjects):
        mu, sd = _AGE[(sexes[i], int(diagnoses[i]))]
        age = int(np.clip(round(rng.normal(mu, sd)), 18, 95))
        plans.append(SubjectPlan(f"S{i + 1:03d}", int(diagnoses[i]), sexes[i], age, i))
    return plans


def _bandpass(x: np.ndarray, lo: float, hi: float, fs: int, order: int = 4) -> np.ndarray:
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x**2)))


def breath_envelope(t: np.ndarray, cycles: float, phase: float) -> np.ndarray:
    """Inspiration-weighted breathing envelope in [0.15, 1]."""
    theta = 2 * np.pi * cycles * t / t[-1] + phase
    insp = np.maximum(np.sin(theta), 0.0) ** 2
    exp = 0.4 * np.maximum(-np.sin(theta), 0.0) ** 2
    return 0.15 + 0.85 * np.maximum(insp, exp)


def crackle_train(n: int, fs: int, envelope: np.ndarray, rate: float, rng) -> np.ndarray:
    """Damped sinusoid bursts (5-20 ms) at inspiration-weighted random times."""
    out = np.zeros(n)
    duration = n / fs
    insp = envelope > 0.6
    count = rng.poisson(rate * duration * max(insp.mean(), 0.05))
    candidates = np.flatnonzero(insp) if insp.any() else np.arange(n)
    for start in rng.choice(candidates, size=count):
        length = int(fs * rng.uniform(0.005, 0.020))
        tt = np.arange(length) / fs
        freq = rng.uniform(200.0, 1200.0)
        burst = np.exp(-5.0 * tt / tt[-1]) * np.sin(2 * np.pi * freq * tt + rng.uniform(0, 2 * np.pi))
        stop = min(n, start + length)
        out[start:stop] += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0) * burst[: stop - start]
    return out


def wheeze(n: int, fs: int, band: tuple[float, float], rng) -> np.ndarray:
    """One to three tonal segments with a slowly jittered frequency."""
    out = np.zeros(n)
    for _ in range(rng.integers(1, 4)):
        length = int(fs * rng.uniform(0.4, 1.5))
        start = int(rng.integers(0, n - length))
        f0 = rng.uniform(*band)
        jitter = np.cumsum(rng.normal(0.0, 0.5, length))
        jitter -= jitter.mean()
        freq = np.clip(f0 + jitter, band[0], band[1])
        phase = 2 * np.pi * np.cumsum(freq) / fs
        tone = np.sin(phase) + 0.3 * np.sin(2 * phase)
        out[start : start + length] += np.hanning(length) * tone
    return out


def heart_sounds(n: int, fs: int, rng) -> np.ndarray:
    bpm = rng.uniform(55.0, 100.0)
    period = int(fs * 60.0 / bpm)
    tt = np.arange(int(0.06 * fs)) / fs
    thump = np.exp(-tt / 0.015) * np.sin(2 * np.pi * rng.uniform(40.0, 70.0) * tt)
    out = np.zeros(n)
    for s in range(int(rng.integers(0, period)), n - len(tt), period):
        out[s : s + len(tt)] += thump
        s2 = s + int(0.3 * fs)
        if s2 + len(tt) < n:
            out[s2 : s2 + len(tt)] += 0.6 * thump
    return out


def rub_artifacts(n: int, fs: int, count: int, rng) -> np.ndarray:
    """Low-frequency friction bursts from stethoscope movement."""
    out = np.zeros(n)
    for _ in range(count):
        length = int(fs * rng.uniform(0.2, 0.6))
        start = int(rng.integers(0, n - length))
        burst = _bandpass(rng.standard_normal(length + 400), 50.0, 250.0, fs)[200 : 200 + length]
        out[start : start + length] += np.hanning(length) * burst / max(_rms(burst), 1e-12)
    return out


def subject_signals(spec: SynthSpec, plan: SubjectPlan) -> dict[int, np.ndarray]:
    """Six channels of normalised samples for one subject."""
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    rng = np.random.default_rng([spec.seed, 1, plan.index])
    t = np.arange(n) / fs
    cycles = rng.uniform(*spec.breath_cycles)
    phase = rng.uniform(0, 2 * np.pi)
    gain = 10 ** rng.uniform(-1.0, -0.3)  # recording level, unrelated to the label
    heart_level = rng.uniform(0.0, 0.8)
    rub_rate = rng.choice([0.0, 1.0, 3.0, 6.0])  # bursts per channel, unrelated to the label
    lo_edge = rng.uniform(90.0, 130.0)
    hi_edge = rng.uniform(700.0, 1000.0)

    affected = rng.random(6) < spec.channel_fraction
    if plan.diagnosis == 1 and not affected.any():
        affected[rng.integers(0, 6)] = True
    kind = rng.choice(["crackle", "wheeze", "both"])
    adv_gain = 10 ** (spec.snr_db / 20.0)

    channels = {}
    for ch in range(1, 7):
        env = breath_envelope(t, cycles, phase)
        breath = _bandpass(rng.standard_normal(n), lo_edge, hi_edge, fs) * env
        breath /= _rms(breath)
        x = breath + heart_level * heart_sounds(n, fs, rng)
        if rub_rate > 0:
            x = x + 3.0 * rub_artifacts(n, fs, rng.poisson(rub_rate), rng)
        if plan.diagnosis == 1 and affected[ch - 1]:
            adv = np.zeros(n)
            if kind in ("crackle", "both"):
                adv += crackle_train(n, fs, env, spec.crackle_rate, rng)
            if kind in ("wheeze", "both"):
                adv += wheeze(n, fs, spec.wheeze_band, rng)
            if _rms(adv) > 0:
                x = x + adv_gain * adv / _rms(adv)
        x = x + 0.02 * rng.standard_normal(n)  # sensor floor
        channels[ch] = gain * x / max(np.max(np.abs(x)), 1e-12) * 0.9
    return channels


def generate(spec: SynthSpec, out_dir: str | Path, threads: int = 1) -> Path:
    """Write ``<code>_ch<k>.wav`` files and ``manifest.csv``; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plans = plan_subjects(spec)

    def work(plan: SubjectPlan) -> list[dict]:
        rows = []
        for ch, samples in subject_signals(spec, plan).items():
            name = f"{plan.code}_ch{ch}.wav"
            write_wav(out / name, samples, spec.sample_rate)
            side, level = CHANNEL_MAP[ch]
            rows.append(
                {
                    "file": name,
                    "subject": plan.code,
                    "channel": ch,
                    "side": side,
                    "level": level,
                    "sex": plan.sex,
                    "age": plan.age,
                    "diagnosis": plan.diagnosis,
                }
            )
        return rows

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = [r for chunk in pool.map(work, plans) for r in chunk]
    manifest = out / "manifest.csv"
    write_manifest(manifest, rows)
    logger.info("wrote %d recordings for %d subjects to %s", len(rows), len(plans), out)
    return manifest
