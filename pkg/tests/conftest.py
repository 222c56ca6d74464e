from __future__ import annotations

import numpy as np
import pytest

from auscult.features import WINDOWINGS, FeatureTable, default_registry
from auscult.synth import CHANNEL_MAP, SynthSpec, generate

# channel -> (side, level) used by the fake tables below
FAKE_CHANNELS = dict(CHANNEL_MAP)


def fake_table(n_subjects: int = 45, windowing: str = "w0", n_features: int | None = None, seed: int = 0,
               n_pos: int | None = None) -> FeatureTable:
    """Random feature table with a complete (subject, channel, window) grid."""
    registry = default_registry() if n_features is None else None
    names = registry.names if registry else [f"x{j}" for j in range(n_features)]
    rng = np.random.default_rng(seed)
    n_pos = n_subjects // 2 if n_pos is None else n_pos
    meta = []
    for s in range(n_subjects):
        for ch in range(1, 7):
            side, level = FAKE_CHANNELS[ch]
            for w in range(WINDOWINGS[windowing]):
                meta.append({"subject": f"P{s:02d}", "channel": ch, "side": side, "level": level,
                             "window": w, "label": int(s < n_pos)})
    values = rng.standard_normal((len(meta), len(names)))
    return FeatureTable(registry, list(names), values, meta, windowing)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Eight-subject synthetic corpus on disk; returns the manifest path."""
    out = tmp_path_factory.mktemp("corpus")
    return generate(SynthSpec(n_subjects=8, pathological_fraction=0.5, seed=3, snr_db=0.0), out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

