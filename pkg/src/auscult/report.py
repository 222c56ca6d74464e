"""Result tables, JSON reports and ROC/PRC plots."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .evaluation import MetricReport, RunResult, ci_z, pr_points, roc_points

TABLE_COLUMNS = ("Model", "AUC ROC", "AUC PRC", "Acc", "Kappa", "Sens", "Spec", "Prec", "NPV", "F1")


def model_label(model: str, windowing: str, variant: str, shape, fused: bool = False) -> str:
    """Row label such as ``RF w5 cms ( 45 x 740 )`` or ``... fused``."""
    rows, cols = shape
    label = f"{model.upper()} {windowing} {variant} ( {rows} x {cols} )"
    return label + " fused" if fused else label


def _num(v: float | None, digits: int = 3) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.{digits}f}"


def _with_ci(mean: float, half: float | None) -> str:
    return _num(mean) if half is None else f"{_num(mean)} ± {_num(half)}"


def table_row(label: str, rep: MetricReport) -> list[str]:
    m = rep.confusion.as_dict()
    acc = m["Acc"]
    return [
        label,
        _with_ci(rep.auc_roc, rep.auc_roc_ci),
        _with_ci(rep.auc_prc, rep.auc_prc_ci),
        "NA" if math.isnan(acc) else f"{100 * acc:.2f}",
        *(_num(m[k]) for k in ("Kappa", "Sens", "Spec", "Prec", "NPV", "F1")),
    ]


def write_table_csv(path: str | Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)


def report_payload(label: str, rep: MetricReport, runs: list[RunResult], config: dict, shape) -> dict:
    return {
        "label": label,
        "config": config,
        "dataset": {"rows": int(shape[0]), "cols": int(shape[1])},
        "report": rep.to_dict(),
        "runs": [{"repeat": r.repeat, "auc_roc": r.auc_roc, "auc_prc": r.auc_prc, "n_predictions": len(r.predictions)} for r in runs],
    }


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- curves

GRID = np.linspace(0.0, 1.0, 101)


def mean_roc(runs: list[RunResult], confidence: float = 0.90):
    """Mean TPR over a fixed FPR grid with a normal-approximation band."""
    curves = []
    for r in runs:
        fpr, tpr = roc_points(r.scores, r.labels)
        # step curve: the best TPR reachable at each FPR
        idx = np.searchsorted(fpr, GRID, side="right") - 1
        curves.append(tpr[idx])
    return _band(np.array(curves), confidence)


def mean_prc(runs: list[RunResult], confidence: float = 0.90):
    """Mean precision over a fixed recall grid (interpolated: best precision at recall >= r)."""
    curves = []
    for r in runs:
        rec, prec = pr_points(r.scores, r.labels)
        best = np.maximum.accumulate(prec[::-1])[::-1]
        idx = np.minimum(np.searchsorted(rec, GRID, side="left"), len(rec) - 1)
        curves.append(best[idx])
    return _band(np.array(curves), confidence)


def _band(curves: np.ndarray, confidence: float):
    mean = curves.mean(axis=0)
    if len(curves) < 2:
        return GRID, mean, mean, mean
    half = ci_z(confidence) * curves.std(axis=0, ddof=1) / math.sqrt(len(curves))
    return GRID, mean, np.clip(mean - half, 0, 1), np.clip(mean + half, 0, 1)


def plot_curves(path: str | Path, runs: list[RunResult], title: str, confidence: float = 0.90) -> None:
    """Side-by-side mean ROC and PRC with a grey confidence band, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "auscult", "svg.fonttype": "none"}):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4.2))
        x, m, lo, hi = mean_roc(runs, confidence)
        ax1.fill_between(x, lo, hi, color="0.8", step="post")
        ax1.step(x, m, where="post", color="tab:blue")
        ax1.plot([0, 1], [0, 1], ls=":", color="0.5")
        ax1.set(xlabel="1 - Specificity", ylabel="Sensitivity", title="ROC", xlim=(0, 1), ylim=(0, 1.01))
        x, m, lo, hi = mean_prc(runs, confidence)
        ax2.fill_between(x, lo, hi, color="0.8")
        ax2.plot(x, m, color="tab:blue")
        ax2.set(xlabel="Recall", ylabel="Precision", title="PRC", xlim=(0, 1), ylim=(0, 1.01))
        fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
