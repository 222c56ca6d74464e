"""Experiment configuration and the end-to-end run.

A configuration is a flat ``key = value`` text file (``#`` starts a
comment). Every key can be overridden from the command line.
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .corpus import load_corpus, load_manifest
from .datasets import VARIANTS, Dataset, build_dataset
from .errors import ConfigError, EmptyCorpus
from .evaluation import ModelSpec, aggregate_runs, make_folds, run_cv, write_runs_csv
from .features import WINDOWINGS, FeatureTable, extract_table, read_feature_csv
from .forest import FcfConfig, RfConfig
from .fusion import SCOPES
from .report import model_label, plot_curves, report_payload, table_row, write_json, write_table_csv

logger = logging.getLogger(__name__)

THREADS_ENV = "AUSCULT_THREADS"

# (windowing, variant, fusion) combinations with an established detection scope
KNOWN_COMBINATIONS = {
    # patient-based
    **{(w, "cms", None): "patient" for w in ("w0", "w3", "w5")},
    ("w0", "c6", None): "patient",
    ("w5", "c6", None): "patient",
    **{(w, "raw", "code"): "patient" for w in ("w0", "w3", "w5")},
    ("w5", "wms", "code"): "patient",
    **{(w, v, "code"): "patient" for w in ("w0", "w5") for v in ("c2", "c3")},
    # side-based
    ("w0", "c3", None): "side",
    ("w5", "c3", None): "side",
    **{(w, "raw", "code_side"): "side" for w in ("w0", "w3", "w5")},
    ("w5", "wms", "code_side"): "side",
    # level-based
    ("w0", "c2", None): "level",
    ("w5", "c2", None): "level",
    **{(w, "raw", "code_level"): "level" for w in ("w0", "w3", "w5")},
    ("w5", "wms", "code_level"): "level",
    # channel-based
    ("w0", "raw", None): "channel",
    ("w5", "wms", None): "channel",
    ("w3", "raw", "code_channel"): "channel",
    ("w5", "raw", "code_channel"): "channel",
    # window-based
    ("w3", "raw", None): "window",
    ("w5", "raw", None): "window",
}


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str = ""
    features: str = ""  # feature CSV; extracted from ``corpus`` when empty
    windowing: str = "w0"
    variant: str = "cms"
    model: str = "rf"
    meta: str = "default"  # "default", "none" or a comma list of side/level/channel
    fusion: str = "none"
    k: int = 9
    repeats: int = 30
    seed: int = 0
    out: str = ""
    num_trees: int = 500
    tune_budget: int = 30
    tune_warmup: int = 19
    ndim: int = 3
    pick_pooled_gain: float = 1.0
    sample_size: int = 0  # 0 = all training rows
    plots: bool = True
    allow_novel: bool = False
    allow_any_rate: bool = False
    threads: int = 0  # 0 = environment default

    @property
    def fusion_scope(self) -> str | None:
        return None if self.fusion in ("", "none") else self.fusion

    @property
    def meta_fields(self):
        if self.model == "fcf" or self.meta == "none":
            return None
        if self.meta == "default":
            return "default"
        return tuple(f.strip() for f in self.meta.split(",") if f.strip())

    @property
    def detection_scope(self) -> str | None:
        return KNOWN_COMBINATIONS.get((self.windowing, self.variant, self.fusion_scope))

    def validate(self) -> None:
        if self.windowing not in WINDOWINGS:
            raise ConfigError(f"windowing must be one of {sorted(WINDOWINGS)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.model not in ("rf", "fcf"):
            raise ConfigError("model must be rf or fcf")
        if self.fusion_scope is not None and self.fusion_scope not in SCOPES:
            raise ConfigError(f"fusion must be none or one of {sorted(SCOPES)}")
        if self.k < 2 or self.repeats < 1:
            raise ConfigError("need k >= 2 and repeats >= 1")
        if not self.corpus and not self.features:
            raise ConfigError("set corpus or features")
        if self.detection_scope is None and not self.allow_novel:
            raise ConfigError(
                f"{self.windowing} {self.variant} with fusion={self.fusion} is not an established "
                "combination; pass allow_novel to run it anyway"
            )

    def model_spec(self) -> ModelSpec:
        rf = RfConfig(num_trees=self.num_trees)
        fcf = FcfConfig(
            num_trees=self.num_trees,
            ndim=self.ndim,
            pick_pooled_gain=self.pick_pooled_gain,
            sample_size=self.sample_size or None,
        )
        return ModelSpec(self.model, rf, fcf, self.tune_budget, self.tune_warmup)


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
CONFIG_KEYS = tuple(_FIELD_TYPES)


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return low in ("1", "true", "yes")
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value.strip()


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    """Config file values, then non-None ``overrides`` on top."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return PipelineConfig(**values)


def format_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in asdict(cfg).items())


# ----------------------------------------------------------------- stages


def resolve_manifest(corpus: str | Path) -> Path:
    p = Path(corpus)
    return p / "manifest.csv" if p.is_dir() else p


def corpus_features(corpus: str | Path, windowing: str, threads: int = 1, allow_any_rate: bool = False) -> FeatureTable:
    index = load_manifest(resolve_manifest(corpus))
    if len(index) == 0:
        raise EmptyCorpus(f"{corpus} lists no recordings")
    recordings = load_corpus(index, allow_any_rate=allow_any_rate)
    labels = {code: meta.diagnosis for code, meta in index.subjects.items()}
    return extract_table(recordings, windowing, labels, threads=threads)


def subjects_of(cfg: PipelineConfig, table: FeatureTable) -> dict[str, str]:
    """subject -> stratum (sex x diagnosis) for fold planning."""
    if cfg.corpus:
        index = load_manifest(resolve_manifest(cfg.corpus), check_files=False)
        return {code: m.stratum for code, m in index.subjects.items()}
    # a bare feature table carries labels but not sex: stratify on diagnosis only
    return {m["subject"]: f"?:{m['label']}" for m in table.meta}


def load_table(cfg: PipelineConfig, threads: int) -> FeatureTable:
    if cfg.features:
        table = read_feature_csv(cfg.features)
        if table.windowing != cfg.windowing:
            raise ConfigError(f"{cfg.features} holds {table.windowing} features, config asks for {cfg.windowing}")
        return table
    return corpus_features(cfg.corpus, cfg.windowing, threads, cfg.allow_any_rate)


def assemble(cfg: PipelineConfig, table: FeatureTable) -> Dataset:
    return build_dataset(table, cfg.variant, cfg.meta_fields)


def run_pipeline(cfg: PipelineConfig, table: FeatureTable | None = None) -> dict:
    """Assemble, cross-validate, aggregate and write every output of one run.

    Outputs (``runs.csv``, ``report.json``, ``report.csv``, ``config.txt``
    and, if enabled, ``curves.svg``) are staged in a scratch directory and
    moved into ``cfg.out`` only once all of them exist.
    """
    cfg.validate()
    if not cfg.out:
        raise ConfigError("out is required")
    threads = cfg.threads or default_threads()
    _set_threads(threads)
    if table is None:
        table = load_table(cfg, threads)
    ds = assemble(cfg, table)
    plan = make_folds(subjects_of(cfg, table), cfg.k, cfg.repeats, cfg.seed)
    runs = run_cv(ds, plan, cfg.model_spec(), cfg.fusion_scope)
    rep = aggregate_runs(runs)
    label = model_label(cfg.model, cfg.windowing, cfg.variant, ds.shape, cfg.fusion_scope is not None)
    public = {k: v for k, v in asdict(cfg).items() if k not in ("threads", "out")}
    payload = report_payload(label, rep, runs, public, ds.shape)
    payload["detection_scope"] = cfg.detection_scope
    payload["fusion_scope"] = cfg.fusion_scope

    out = Path(cfg.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        write_runs_csv(stage / "runs.csv", runs)
        write_json(stage / "report.json", payload)
        write_table_csv(stage / "report.csv", [table_row(label, rep)])
        (stage / "config.txt").write_text(format_config(replace(cfg, threads=0)), encoding="utf-8")
        if cfg.plots:
            plot_curves(stage / "curves.svg", runs, label)
        for f in sorted(stage.iterdir()):
            os.replace(f, out / f.name)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    logger.info("%s: AUC ROC %.3f", label, rep.auc_roc)
    return payload


def _set_threads(n: int) -> None:
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
