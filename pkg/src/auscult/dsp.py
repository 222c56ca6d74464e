"""Frame-level acoustic measurements.

All functions take normalised amplitudes (floats in [-1, 1]) and a sample
rate, and operate on 2-D frame arrays of shape ``(n_frames, frame_len)``
where that makes sense. Undefined per-frame values are returned as NaN; the
feature layer turns NaN into masked entries.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .errors import TooShortForDfa, TooShortForFrame

EPS = 1e-10
F0_MIN = 50.0
F0_MAX = 800.0
VOICING_THRESHOLD = 0.5


def frame_signal(samples, frame_length: int, hop: int, window_fn: str | None = None) -> np.ndarray:
    """Cut ``samples`` into overlapping frames.

    Returns ``floor((N - frame_length) / hop) + 1`` frames; a trailing
    partial frame is dropped. ``window_fn`` is a scipy window name applied
    to every frame (``None`` keeps the frames rectangular).
    """
    x = np.asarray(samples, dtype=np.float64)
    if hop <= 0 or frame_length < hop:
        raise ValueError("need frame_length >= hop > 0")
    if len(x) < frame_length:
        raise TooShortForFrame(f"{len(x)} samples < frame length {frame_length}")
    n_frames = (len(x) - frame_length) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop][:n_frames]
    if window_fn is not None:
        frames = frames * signal.get_window(window_fn, frame_length, fftbins=False)
    return np.ascontiguousarray(frames)


# --------------------------------------------------------------------------
# pitch and periodicity


def _nccf(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalised cross-correlation of each frame with its lagged self.

    ``out[f, k] = sum x[n] x[n+k] / sqrt(sum x[n]^2 * sum x[n+k]^2)`` with the
    sums over the overlapping part, for k = 0..max_lag.
    """
    n = frames.shape[1]
    nfft = sfft.next_fast_len(2 * n)
    spec = sfft.rfft(frames, nfft, axis=1)
    acf = sfft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : max_lag + 1]
    # energy of the leading / trailing n-k samples via cumulative sums
    sq = np.cumsum(frames**2, axis=1)
    total = sq[:, -1:]
    lags = np.arange(max_lag + 1)
    head = sq[:, n - 1 - lags]  # sum of x[0 : n-k]
    tail = total - np.concatenate([np.zeros((len(frames), 1)), sq[:, : max_lag]], axis=1)
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > EPS, acf / np.where(denom > EPS, denom, 1.0), 0.0)
    return r


def _pick_period(r: np.ndarray, min_lag: int, max_lag: int) -> tuple[float, float]:
    """First strong local maximum of one NCCF row; (lag, peak value) or NaNs."""
    seg = r[min_lag - 1 : max_lag + 2]
    inner = seg[1:-1]
    is_peak = (inner >= seg[:-2]) & (inner > seg[2:])
    if not is_peak.any():
        return np.nan, np.nan
    peak_vals = np.where(is_peak, inner, -np.inf)
    best = peak_vals.max()
    if best < VOICING_THRESHOLD:
        return np.nan, best
    # earliest peak close to the best one avoids picking a period multiple
    k = int(np.argmax(peak_vals >= 0.9 * best))
    lag = k + min_lag
    y0, y1, y2 = r[lag - 1], r[lag], r[lag + 1]
    curv = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / curv if curv < 0 else 0.0
    return lag + float(np.clip(shift, -0.5, 0.5)), float(y1)


def pitch_track(frames: np.ndarray, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (F0 in Hz, NCCF peak) with NaN F0 for unvoiced frames."""
    frames = np.atleast_2d(frames)
    min_lag = max(2, int(np.floor(sample_rate / F0_MAX)))
    max_lag = int(np.ceil(sample_rate / F0_MIN))
    if frames.shape[1] < max_lag + 2:
        raise TooShortForFrame(f"frame of {frames.shape[1]} samples too short for {F0_MIN} Hz")
    r = _nccf(frames, max_lag + 1)
    f0 = np.full(len(frames), np.nan)
    peak = np.full(len(frames), np.nan)
    for i, row in enumerate(r):
        lag, val = _pick_period(row, min_lag, max_lag)
        peak[i] = val
        if np.isfinite(lag):
            f0[i] = sample_rate / lag
    return f0, peak


def f0_contour(frames: np.ndarray, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation pitch per frame in the 50-800 Hz band.

    Returns ``(f0, voiced)``; unvoiced frames carry NaN in ``f0``.
    """
    f0, _ = pitch_track(frames, sample_rate)
    return f0, np.isfinite(f0)


def hnr(frames: np.ndarray, sample_rate: int) -> np.ndarray:
    """Harmonics-to-noise ratio in dB for each voiced frame, NaN otherwise.

    ``10 log10(r / (1 - r))`` where r is the normalised autocorrelation at
    the pitch lag, clamped to [-60, 60] dB.
    """
    f0, peak = pitch_track(frames, sample_rate)
    r = np.clip(peak, 1e-6, 1 - 1e-6)
    out = np.clip(10 * np.log10(r / (1 - r)), -60.0, 60.0)
    out[~np.isfinite(f0)] = np.nan
    return out


# --------------------------------------------------------------------------
# formants


def lpc_order(sample_rate: int, count: int = 4) -> int:
    # 2 + fs/kHz alone leaves too few pole pairs for 4 formants at 4 kHz
    return max(2 + int(round(sample_rate / 1000)), 2 * count + 2)


def lpc(frames: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation-method LPC for every frame at once (Levinson-Durbin).

    Returns ``(a, ok)`` where ``a[:, 0] == 1`` and ``ok`` flags frames with
    a positive-definite, non-degenerate recursion.
    """
    frames = np.atleast_2d(frames)
    n = frames.shape[1]
    nfft = sfft.next_fast_len(2 * n)
    spec = sfft.rfft(frames, nfft, axis=1)
    r = sfft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, : order + 1]
    n_frames = len(frames)
    a = np.zeros((n_frames, order + 1))
    a[:, 0] = 1.0
    err = r[:, 0].copy()
    ok = err > EPS * n
    safe_err = np.where(ok, err, 1.0)
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", a[:, 1:i], r[:, i - 1 : 0 : -1]) if i > 1 else r[:, 1].copy()
        k = -acc / safe_err
        ok &= np.abs(k) < 1.0
        prev = a[:, 1:i].copy()
        a[:, 1:i] = prev + k[:, None] * prev[:, ::-1]
        a[:, i] = k
        safe_err = np.where(ok, safe_err * (1 - k**2), 1.0)
    return a, ok


def formants(frames: np.ndarray, sample_rate: int, count: int = 4) -> np.ndarray:
    """Lowest ``count`` LPC resonance frequencies per frame (Hz).

    Roots of the prediction polynomial with positive imaginary part are
    converted to frequencies; those within 50 Hz of DC or Nyquist, or
    broader than their own centre frequency (Q < 1), are discarded. Missing
    formants and ill-conditioned frames are NaN.
    """
    frames = np.atleast_2d(frames)
    order = lpc_order(sample_rate, count)
    if frames.shape[1] <= order:
        raise TooShortForFrame(f"frame shorter than LPC order {order}")
    a, ok = lpc(frames, order)
    out = np.full((len(frames), count), np.nan)
    if not ok.any():
        return out
    # companion matrices, batched eigenvalues
    good = np.flatnonzero(ok)
    comp = np.zeros((len(good), order, order))
    comp[:, 0, :] = -a[good, 1:]
    comp[:, np.arange(1, order), np.arange(order - 1)] = 1.0
    roots = np.linalg.eigvals(comp)
    nyq = sample_rate / 2
    for row, z in zip(good, roots):
        z = z[z.imag > 0]
        freqs = np.angle(z) * sample_rate / (2 * np.pi)
        bandwidth = -np.log(np.abs(z)) * sample_rate / np.pi
        keep = (freqs > 50.0) & (freqs < nyq - 50.0) & (bandwidth < freqs)
        freqs = np.sort(freqs[keep])[:count]
        out[row, : len(freqs)] = freqs
    return out


# --------------------------------------------------------------------------
# scaling


def dfa_exponent(samples, min_box: int = 16) -> float:
    """First-order DFA scaling exponent of a series.

    Box sizes are powers of two from ``min_box`` up to N/8; at least four
    sizes are required. Returns NaN for a fluctuation-free (constant) series.
    """
    x = np.asarray(samples, dtype=np.float64)
    profile = np.cumsum(x - x.mean())
    sizes = []
    s = min_box
    while s <= len(x) // 8:
        sizes.append(s)
        s *= 2
    if len(sizes) < 4:
        raise TooShortForDfa(f"{len(x)} samples give only {len(sizes)} box sizes")
    flucts = []
    for s in sizes:
        k = len(profile) // s
        boxes = profile[: k * s].reshape(k, s)
        t = np.arange(s, dtype=np.float64)
        t -= t.mean()
        slope = boxes @ t / (t @ t)
        resid = boxes - boxes.mean(axis=1, keepdims=True) - slope[:, None] * t
        flucts.append(np.sqrt(np.mean(resid**2)))
    flucts = np.asarray(flucts)
    if np.any(flucts <= EPS * 1e-3):
        return np.nan
    alpha, _ = np.polyfit(np.log(sizes), np.log(flucts), 1)
    return float(alpha)


# --------------------------------------------------------------------------
# spectral envelope and energy


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, nfft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters, shape ``(n_mels, nfft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames: np.ndarray, nfft: int | None = None) -> np.ndarray:
    nfft = nfft or sfft.next_fast_len(frames.shape[1])
    return np.abs(sfft.rfft(frames, nfft, axis=1)) ** 2


def mfcc(windowed_frames: np.ndarray, sample_rate: int, n_coeffs: int = 13, n_mels: int = 26) -> np.ndarray:
    """MFCC matrix ``(n_frames, n_coeffs)`` from already-windowed frames."""
    nfft = max(512, 1 << int(np.ceil(np.log2(windowed_frames.shape[1]))))
    power = power_spectrum(windowed_frames, nfft)
    bank = mel_filterbank(n_mels, nfft, sample_rate)
    log_mel = np.log(power @ bank.T + EPS)
    return sfft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_coeffs]


DESCRIPTIVE_STATS = ("mean", "std", "skewness", "kurtosis", "min", "max")


def describe(series, stats=DESCRIPTIVE_STATS) -> dict[str, float]:
    """Descriptive statistics of a 1-D series, ignoring NaN entries.

    Higher moments of a constant series and everything of an empty one are
    NaN. ``std`` is the population standard deviation.
    """
    x = np.asarray(series, dtype=np.float64)
    x = x[np.isfinite(x)]
    out: dict[str, float] = {}
    n = len(x)
    mean = x.mean() if n else np.nan
    std = x.std() if n else np.nan
    for stat in stats:
        if n == 0:
            out[stat] = np.nan
        elif stat == "mean":
            out[stat] = mean
        elif stat == "std":
            out[stat] = std
        elif stat in ("skewness", "kurtosis"):
            if std <= 1e-12 * max(1.0, abs(mean)):
                out[stat] = np.nan
            else:
                z = (x - mean) / std
                out[stat] = np.mean(z**3) if stat == "skewness" else np.mean(z**4) - 3.0
        elif stat == "min":
            out[stat] = x.min()
        elif stat == "max":
            out[stat] = x.max()
        elif stat == "median":
            out[stat] = np.median(x)
        elif stat == "iqr":
            q1, q3 = np.percentile(x, [25, 75])
            out[stat] = q3 - q1
        else:
            raise ValueError(f"unknown statistic {stat!r}")
    return {k: float(v) for k, v in out.items()}


def mfcc_stats(windowed_frames: np.ndarray, sample_rate: int, n_coeffs: int = 13, stats=DESCRIPTIVE_STATS) -> dict[str, float]:
    """Per-coefficient statistics of the MFCC trajectory, keyed ``mfcc{i}_{stat}``."""
    coeffs = mfcc(windowed_frames, sample_rate, n_coeffs)
    out = {}
    for i in range(n_coeffs):
        for stat, val in describe(coeffs[:, i], stats).items():
            out[f"mfcc{i}_{stat}"] = val
    return out


def frame_rms(frames: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(frames**2, axis=1))


def frame_log_energy(frames: np.ndarray) -> np.ndarray:
    return np.log(np.sum(frames**2, axis=1) + EPS)


def energy_stats(frames: np.ndarray, stats=DESCRIPTIVE_STATS) -> dict[str, float]:
    """Statistics of per-frame log energy and RMS (rectangular frames)."""
    out = {}
    for name, series in (("log_energy", frame_log_energy(frames)), ("rms", frame_rms(frames))):
        for stat, val in describe(series, stats).items():
            out[f"{name}_{stat}"] = val
    return out


def loudness(windowed_frames: np.ndarray) -> float:
    """Mean over frames of total spectral power raised to 0.25."""
    power = power_spectrum(windowed_frames).sum(axis=1) / windowed_frames.shape[1]
    return float(np.mean(power**0.25))


def deltas(features: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along axis 0 with edge padding."""
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    padded = np.concatenate([np.repeat(feats[:1], width, axis=0), feats, np.repeat(feats[-1:], width, axis=0)])
    num = sum(k * (padded[width + k : width + k + n] - padded[width - k : width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))
