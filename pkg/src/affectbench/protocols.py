"""Metrics, the three evaluation protocols, aggregation, and emission.

Every protocol tests on the same per-subject window set (the final 15%
of each class, in time order), so accuracy differences between the three
model types measure generalization, not test-set drift.  The best
validation checkpoint, restored from its float32 blobs, is what gets
evaluated, mirroring a save-then-test workflow.
"""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from affectbench.datapipe import (
    PROTOCOL_EXCLUSIVE,
    PROTOCOL_INCLUSIVE,
    PROTOCOL_PERSONALIZED,
    AffectClass,
    SubjectRecording,
    Window,
    make_windows,
    normalize,
    split_personalized,
    split_subject_exclusive,
    split_subject_inclusive,
    stack_windows,
)
from affectbench.model import ModelConfig, build_model
from affectbench.rng import ROLE_INIT, Rng
from affectbench.training import TrainConfig, evaluate, train

PROTOCOL_ORDER = (PROTOCOL_PERSONALIZED, PROTOCOL_INCLUSIVE,
                  PROTOCOL_EXCLUSIVE)

NUM_CLASSES = len(AffectClass)


@dataclass
class ConfusionMatrix:
    """Counts[true_class, predicted_class] for the three classes."""

    counts: np.ndarray

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    @classmethod
    def from_pairs(cls, y_true, y_pred) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("label and prediction counts differ")
        if y_true.size and (y_true.min() < 0 or y_true.max() >= NUM_CLASSES
                            or y_pred.min() < 0
                            or y_pred.max() >= NUM_CLASSES):
            raise ValueError(f"labels must lie in [0, {NUM_CLASSES})")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_lists(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def per_class_prf(cm: ConfusionMatrix) -> list[tuple[float, float, float]]:
    """(precision, recall, F1) per class; zero denominators yield 0."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    out = []
    for c in range(NUM_CLASSES):
        tp = float(cm.counts[c, c])
        pred_c = float(cm.counts[:, c].sum())
        true_c = float(cm.counts[c, :].sum())
        precision = tp / pred_c if pred_c > 0 else 0.0
        recall = tp / true_c if true_c > 0 else 0.0
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        out.append((precision, recall, f1))
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of the per-class F1 scores."""
    scores = [f1 for _, _, f1 in per_class_prf(cm)]
    return sum(scores) / NUM_CLASSES


@dataclass
class MetricsReport:
    subject_id: int
    model_type: str
    accuracy: float
    macro_f1: float
    per_class: list[tuple[float, float, float]]
    confusion: ConfusionMatrix
    seed: int
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "model_type": self.model_type,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": [
                {"class": AffectClass(c).name, "precision": p, "recall": r,
                 "f1": f}
                for c, (p, r, f) in enumerate(self.per_class)
            ],
            "confusion": self.confusion.to_lists(),
            "seed": self.seed,
            "config_hash": self.config_hash,
        }


@dataclass
class AggregateRow:
    model_type: str
    count: int
    accuracy_mean_pct: float
    accuracy_sd_pct: Optional[float]
    f1_mean_pct: float
    f1_sd_pct: Optional[float]

    def to_dict(self) -> dict:
        return {
            "model_type": self.model_type,
            "count": self.count,
            "accuracy_mean_pct": round(self.accuracy_mean_pct, 2),
            "accuracy_sd_pct": (None if self.accuracy_sd_pct is None
                                else round(self.accuracy_sd_pct, 2)),
            "f1_mean_pct": round(self.f1_mean_pct, 2),
            "f1_sd_pct": (None if self.f1_sd_pct is None
                          else round(self.f1_sd_pct, 2)),
        }


@dataclass
class ExperimentSummary:
    reports: list[MetricsReport]
    aggregates: dict[str, AggregateRow] = field(default_factory=dict)

    def by_type(self, model_type: str) -> list[MetricsReport]:
        return [r for r in self.reports if r.model_type == model_type]

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "aggregates": {k: v.to_dict() for k, v in self.aggregates.items()},
        }


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Stable 16-hex-digit digest of the full run configuration."""
    payload = json.dumps(
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _prepared_windows(recordings: Sequence[SubjectRecording],
                      stats_fraction: float = 1.0) -> dict[int, list[Window]]:
    """Normalize then window each recording, keyed by subject id."""
    out: dict[int, list[Window]] = {}
    for rec in sorted(recordings, key=lambda r: r.subject_id):
        if rec.subject_id in out:
            raise ValueError(f"duplicate subject id {rec.subject_id}")
        out[rec.subject_id] = make_windows(normalize(rec, stats_fraction))
    return out


def _score(model, windows: Sequence[Window], model_type: str, seed: int,
           cfg_hash: str) -> MetricsReport:
    x, y_true = stack_windows(windows)
    _, y_pred = evaluate(model, (x, y_true))
    cm = ConfusionMatrix.from_pairs(y_true, y_pred)
    return MetricsReport(
        subject_id=windows[0].subject_id,
        model_type=model_type,
        accuracy=accuracy(cm),
        macro_f1=macro_f1(cm),
        per_class=per_class_prf(cm),
        confusion=cm,
        seed=seed,
        config_hash=cfg_hash,
    )


def _train_best(split, model_cfg: ModelConfig, train_cfg: TrainConfig,
                save_dir=None, stem: str = ""):
    """Fresh model from the init sub-stream, trained, best epoch restored.

    With ``save_dir`` set, the best checkpoint and the per-epoch loss
    log are written there under ``stem``.
    """
    model = build_model(model_cfg, Rng.derived(train_cfg.seed, ROLE_INIT))
    ckpt, report = train(model, split.train, split.val, train_cfg)
    if save_dir is not None:
        import os

        ckpt.write(os.path.join(save_dir, f"{stem}.ckpt"))
        report.write_jsonl(os.path.join(save_dir, f"{stem}_epochs.jsonl"))
    return ckpt.restore(), report


def _annotate(exc: Exception, subject_id: int) -> Exception:
    try:
        return type(exc)(f"subject {subject_id}: {exc}")
    except TypeError:
        return RuntimeError(f"subject {subject_id}: {exc}")


def _map_subjects(subject_ids: Sequence[int],
                  fn: Callable[[int], MetricsReport],
                  jobs: int) -> list[MetricsReport]:
    """Run one training per subject, optionally across a thread pool.

    Results come back ordered by subject id regardless of completion
    order, so parallel runs stay deterministic.
    """
    if jobs <= 1 or len(subject_ids) <= 1:
        return [fn(sid) for sid in subject_ids]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, subject_ids))


def run_personalized(recordings: Sequence[SubjectRecording],
                     train_cfg: TrainConfig, model_cfg: ModelConfig,
                     jobs: int = 1, save_dir=None) -> list[MetricsReport]:
    """One independent model per subject, tested on that subject's tail."""
    if not recordings:
        raise ValueError("need at least 1 recording")
    windows = _prepared_windows(recordings)
    cfg_hash = config_hash(model_cfg, train_cfg)

    def one(sid: int) -> MetricsReport:
        try:
            split = split_personalized(windows[sid])
            model, _ = _train_best(split, model_cfg, train_cfg, save_dir,
                                   f"{PROTOCOL_PERSONALIZED}_S{sid:03d}")
            return _score(model, split.test, PROTOCOL_PERSONALIZED,
                          train_cfg.seed, cfg_hash)
        except Exception as exc:
            raise _annotate(exc, sid) from exc

    return _map_subjects(sorted(windows), one, jobs)


def run_subject_exclusive(recordings: Sequence[SubjectRecording],
                          train_cfg: TrainConfig, model_cfg: ModelConfig,
                          jobs: int = 1, save_dir=None) -> list[MetricsReport]:
    """One model per held-out subject, trained on everyone else."""
    if len(recordings) < 2:
        raise ValueError("need at least 2 recordings")
    windows = _prepared_windows(recordings)
    pool = [w for ws in windows.values() for w in ws]
    cfg_hash = config_hash(model_cfg, train_cfg)

    def one(sid: int) -> MetricsReport:
        try:
            split = split_subject_exclusive(pool, sid)
            model, _ = _train_best(split, model_cfg, train_cfg, save_dir,
                                   f"{PROTOCOL_EXCLUSIVE}_S{sid:03d}")
            return _score(model, split.test, PROTOCOL_EXCLUSIVE,
                          train_cfg.seed, cfg_hash)
        except Exception as exc:
            raise _annotate(exc, sid) from exc

    return _map_subjects(sorted(windows), one, jobs)


def run_subject_inclusive(recordings: Sequence[SubjectRecording],
                          train_cfg: TrainConfig, model_cfg: ModelConfig,
                          save_dir=None) -> list[MetricsReport]:
    """One model on all subjects' early segments, tested per subject."""
    if not recordings:
        raise ValueError("need at least 1 recording")
    windows = _prepared_windows(recordings)
    pool = [w for ws in windows.values() for w in ws]
    cfg_hash = config_hash(model_cfg, train_cfg)
    first = sorted(windows)[0]
    split = split_subject_inclusive(pool, first)
    model, _ = _train_best(split, model_cfg, train_cfg, save_dir,
                           PROTOCOL_INCLUSIVE)
    reports = []
    for sid in sorted(windows):
        test = split_subject_inclusive(pool, sid).test
        reports.append(_score(model, test, PROTOCOL_INCLUSIVE,
                              train_cfg.seed, cfg_hash))
    return reports


def aggregate(reports: Sequence[MetricsReport]) -> ExperimentSummary:
    """Mean and sample SD (ddof=1) of accuracy and F1 per model type.

    A model type with a single report gets mean only; its SD is None.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    ordered: list[MetricsReport] = []
    aggregates: dict[str, AggregateRow] = {}
    types = [t for t in PROTOCOL_ORDER
             if any(r.model_type == t for r in reports)]
    types += sorted({r.model_type for r in reports} - set(PROTOCOL_ORDER))
    for model_type in types:
        rows = sorted((r for r in reports if r.model_type == model_type),
                      key=lambda r: r.subject_id)
        ordered.extend(rows)
        acc_pct = [100.0 * r.accuracy for r in rows]
        f1_pct = [100.0 * r.macro_f1 for r in rows]
        aggregates[model_type] = AggregateRow(
            model_type=model_type,
            count=len(rows),
            accuracy_mean_pct=statistics.fmean(acc_pct),
            accuracy_sd_pct=(statistics.stdev(acc_pct)
                             if len(rows) >= 2 else None),
            f1_mean_pct=statistics.fmean(f1_pct),
            f1_sd_pct=statistics.stdev(f1_pct) if len(rows) >= 2 else None,
        )
    return ExperimentSummary(ordered, aggregates)


def run_experiment(recordings: Sequence[SubjectRecording],
                   train_cfg: TrainConfig, model_cfg: ModelConfig,
                   jobs: int = 1) -> ExperimentSummary:
    """All three protocols over one recording set, aggregated."""
    reports = []
    reports += run_personalized(recordings, train_cfg, model_cfg, jobs)
    reports += run_subject_inclusive(recordings, train_cfg, model_cfg)
    if len(recordings) >= 2:
        reports += run_subject_exclusive(recordings, train_cfg, model_cfg,
                                         jobs)
    return aggregate(reports)


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _agg_cell(mean_pct: float, sd_pct: Optional[float]) -> str:
    sd = "n/a" if sd_pct is None else f"{sd_pct:.2f}"
    return f"{mean_pct:.2f} ({sd})"


def summary_from_dict(d: dict) -> ExperimentSummary:
    """Rebuild a summary from its JSON form, recomputing aggregates."""
    reports = []
    for rd in d["reports"]:
        cm = ConfusionMatrix(np.array(rd["confusion"], dtype=np.int64))
        per_class = [(pc["precision"], pc["recall"], pc["f1"])
                     for pc in rd["per_class"]]
        reports.append(MetricsReport(
            subject_id=int(rd["subject_id"]),
            model_type=str(rd["model_type"]),
            accuracy=float(rd["accuracy"]),
            macro_f1=float(rd["macro_f1"]),
            per_class=per_class,
            confusion=cm,
            seed=int(rd["seed"]),
            config_hash=str(rd["config_hash"]),
        ))
    return aggregate(reports)


def emit_report(summary: ExperimentSummary, path, format: str,
                config_echo: Optional[dict] = None) -> None:
    """Write the summary as JSON or CSV; same summary, same bytes.

    ``config_echo`` (JSON only) embeds the effective run configuration.
    """
    if not summary.reports:
        raise ValueError("empty summary")
    if format == "json":
        payload = summary.to_dict()
        if config_echo is not None:
            payload["config"] = config_echo
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    elif format == "csv":
        lines = ["model_type,subject_id,accuracy_pct,f1_pct,seed,config_hash"]
        for r in summary.reports:
            lines.append(
                f"{r.model_type},{r.subject_id},{_pct(r.accuracy)},"
                f"{_pct(r.macro_f1)},{r.seed},{r.config_hash}"
            )
        # Aggregate rows carry Table-style "mean (sd)" cells and ALL in
        # the subject column.
        for model_type, agg in summary.aggregates.items():
            seed = summary.by_type(model_type)[0].seed
            cfg_hash = summary.by_type(model_type)[0].config_hash
            lines.append(
                f"{model_type},ALL,"
                f"{_agg_cell(agg.accuracy_mean_pct, agg.accuracy_sd_pct)},"
                f"{_agg_cell(agg.f1_mean_pct, agg.f1_sd_pct)},"
                f"{seed},{cfg_hash}"
            )
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


_BAR_COLORS = {
    PROTOCOL_PERSONALIZED: "#4c78a8",
    PROTOCOL_INCLUSIVE: "#f58518",
    PROTOCOL_EXCLUSIVE: "#54a24b",
}
_BAR_LABELS = {
    PROTOCOL_PERSONALIZED: "personalized",
    PROTOCOL_INCLUSIVE: "subject-inclusive",
    PROTOCOL_EXCLUSIVE: "subject-exclusive",
}


def emit_bar_chart_svg(summary: ExperimentSummary, metric: str, path) -> None:
    """Grouped bars per subject, one bar per model type, y axis 0..100%.

    Bars are the only rect elements in the file; output bytes depend
    only on the summary.
    """
    if metric == "accuracy":
        value = lambda r: 100.0 * r.accuracy
        title = "Test accuracy by subject (%)"
    elif metric == "f1":
        value = lambda r: 100.0 * r.macro_f1
        title = "Macro F1 by subject (%)"
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if not summary.reports:
        raise ValueError("empty summary")

    subjects = sorted({r.subject_id for r in summary.reports})
    by_key = {(r.model_type, r.subject_id): r for r in summary.reports}
    types = [t for t in PROTOCOL_ORDER
             if any(r.model_type == t for r in summary.reports)]

    bar_w = 18
    bar_gap = 4
    group_gap = 24
    left, right, top, bottom = 60, 30, 48, 56
    group_w = len(types) * bar_w + (len(types) - 1) * bar_gap
    plot_w = len(subjects) * group_w + (len(subjects) + 1) * group_gap
    plot_h = 260
    width = left + plot_w + right
    height = top + plot_h + bottom

    def sy(pct: float) -> float:
        return top + plot_h * (1.0 - pct / 100.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="24" font-family="sans-serif" font-size="15" '
        f'font-weight="bold">{title}</text>',
    ]
    for tick in range(0, 101, 20):
        y = sy(tick)
        parts.append(
            f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" '
            f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick}</text>'
        )
    parts.append(
        f'<line x1="{left}" y1="{sy(0):.2f}" x2="{left + plot_w}" '
        f'y2="{sy(0):.2f}" stroke="#333333" stroke-width="1"/>'
    )

    x = left + group_gap
    for sid in subjects:
        bx = x
        for model_type in types:
            report = by_key.get((model_type, sid))
            if report is not None:
                v = value(report)
                y = sy(v)
                parts.append(
                    f'<rect x="{bx}" y="{y:.2f}" width="{bar_w}" '
                    f'height="{sy(0) - y:.2f}" '
                    f'fill="{_BAR_COLORS[model_type]}"/>'
                )
            bx += bar_w + bar_gap
        parts.append(
            f'<text x="{x + group_w / 2:.2f}" y="{sy(0) + 16:.2f}" '
            f'text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">S{sid}</text>'
        )
        x += group_w + group_gap

    lx = left
    ly = height - 18
    for model_type in types:
        parts.append(
            f'<circle cx="{lx + 6}" cy="{ly - 4}" r="6" '
            f'fill="{_BAR_COLORS[model_type]}"/>'
        )
        label = _BAR_LABELS.get(model_type, model_type)
        parts.append(
            f'<text x="{lx + 16}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )
        lx += 16 + 9 * len(label) + 24
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(parts) + "\n")
