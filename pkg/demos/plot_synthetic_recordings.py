"""
What the synthetic recordings look like
=======================================

One normal and one pathological subject from the default synthetic corpus,
with the per-frame measurements the feature registry summarises.
Writes ``synthetic_recordings.png`` next to this script.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from auscult import dsp
from auscult.features import default_registry, extract_samples
from auscult.synth import SynthSpec, plan_subjects, subject_signals

spec = SynthSpec(snr_db=0.0)  # louder adventitious sounds than the default, easier to see
plans = plan_subjects(spec)
normal = next(p for p in plans if p.diagnosis == 0)
sick = next(p for p in plans if p.diagnosis == 1)

# channel 5 (left lower) of each subject, 15 s at 4 kHz
x_normal = subject_signals(spec, normal)[5]
x_sick = subject_signals(spec, sick)[5]
t = np.arange(len(x_normal)) / spec.sample_rate

# 100 ms frames with a 50 ms hop, as in the registry
frames_normal = dsp.frame_signal(x_normal, 400, 200, "hann")
frames_sick = dsp.frame_signal(x_sick, 400, 200, "hann")
mfcc_normal = dsp.mfcc(frames_normal, spec.sample_rate)
mfcc_sick = dsp.mfcc(frames_sick, spec.sample_rate)

fig, axes = plt.subplots(3, 2, figsize=(11, 8), sharex="col")
for col, (x, m, p) in enumerate([(x_normal, mfcc_normal, normal), (x_sick, mfcc_sick, sick)]):
    axes[0, col].plot(t, x, lw=0.3)
    axes[0, col].set_title(f"{p.code} ({'pathological' if p.diagnosis else 'normal'})")
    ft = np.arange(len(m)) * 0.05
    axes[1, col].plot(ft, dsp.frame_rms(dsp.frame_signal(x, 400, 200)))
    axes[1, col].set_ylabel("RMS")
    axes[2, col].imshow(m[:, 1:].T, aspect="auto", origin="lower", extent=(0, ft[-1], 1, 13))
    axes[2, col].set_ylabel("MFCC c1-c12")
    axes[2, col].set_xlabel("time (s)")
fig.tight_layout()
out = Path(__file__).with_name("synthetic_recordings.png")
fig.savefig(out, dpi=90)
print("wrote", out)

# the whole 370-entry vector for each recording; a few entries side by side
registry = default_registry()
v_normal = extract_samples(x_normal, spec.sample_rate, registry)
v_sick = extract_samples(x_sick, spec.sample_rate, registry)
for name in ("rms_mean", "log_energy_kurtosis", "mfcc1_std", "dfa", "hnr", "f0_voiced_fraction"):
    i = registry.names.index(name)
    print(f"{name:22s} normal {v_normal.values[i]:9.3f}   pathological {v_sick.values[i]:9.3f}")
