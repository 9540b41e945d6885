"""Leave-One-Subject-Out evaluation, classification metrics, and reporting.

Metrics are pure functions. Folds are independent and may run
concurrently; aggregation is a single-threaded reduction over the
completed folds, and serialized values are rounded to 2 decimals only at
rendering time.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from decimal import ROUND_HALF_EVEN, ROUND_HALF_UP, Decimal

import numpy as np

from .data import Dataset
from .errors import DataError, MetricUndefinedError, ShapeError, StateError
from .models import ModelConfig, build
from .signals import FilterSpec, Segment, SegmenterSpec, preprocess_record
from .training import (
    TARGETS,
    TrainConfig,
    TrainLog,
    make_validation_split,
    predict_proba,
    segments_to_arrays,
    train,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("accuracy", "f1_class0", "f1_class1", "weighted_f1", "macro_f1", "auc")

# Table column order and row labels used by the renderers.
TABLE_COLUMNS = ("accuracy", "f1_class0", "f1_class1", "weighted_f1", "auc")
TABLE_HEADERS = ("Test Accuracy", "F1-score class 0", "F1-score class 1", "weighted F1", "AUC")
VARIANT_LABELS = {"cnn": "CNN", "cnn_lstm": "CNN-LSTM", "cnn_tcn_lstm": "CNN-TCN-LSTM"}
SECTION_LABELS = {
    "valence": "Valence only",
    "arousal": "Arousal only",
    "average": "Average of Valence and Arousal",
}


@dataclass
class FoldMetrics:
    test_subject: str
    accuracy: float
    f1_class0: float
    f1_class1: float
    weighted_f1: float
    macro_f1: float
    auc: float | None  # None when the test subject has a single class


@dataclass
class EvalReport:
    """Per-target fold rows and means, plus the across-target average row."""

    folds: dict[str, list[FoldMetrics]]
    means: dict[str, dict[str, float | None]]
    average: dict[str, float | None] | None


def loso_folds(subject_ids) -> list[tuple[list[str], str]]:
    """One fold per subject: (train_subjects, test_subject), each subject
    tested exactly once, train and test disjoint."""
    subjects = sorted(set(subject_ids))
    if len(subjects) < 2:
        raise DataError(f"need at least 2 distinct subjects, got {len(subjects)}")
    folds = [([s for s in subjects if s != test], test) for test in subjects]
    if len({test for _, test in folds}) != len(folds):  # pragma: no cover
        raise StateError("duplicate test subjects across folds")
    return folds


def _paired(preds, labels):
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ShapeError(f"predictions {p.shape} and labels {y.shape} must be equal 1-d")
    if p.size == 0:
        raise DataError("empty predictions/labels")
    return p, y


def accuracy(preds, labels) -> float:
    p, y = _paired(preds, labels)
    return float((p == y).mean())


def f1_per_class(preds, labels, class_id: int) -> float:
    """One-vs-rest F1; 0 by convention when precision + recall is 0."""
    p, y = _paired(preds, labels)
    tp = int(((p == class_id) & (y == class_id)).sum())
    fp = int(((p == class_id) & (y != class_id)).sum())
    fn = int(((p != class_id) & (y == class_id)).sum())
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    if prec + rec == 0.0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


def weighted_f1(preds, labels) -> float:
    """Support-weighted mean of the per-class F1 scores."""
    p, y = _paired(preds, labels)
    total = 0.0
    for c in (0, 1):
        total += (y == c).sum() * f1_per_class(p, y, c)
    return float(total / y.size)


def macro_f1(preds, labels) -> float:
    return 0.5 * (f1_per_class(preds, labels, 0) + f1_per_class(preds, labels, 1))


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; ties contribute half credit.

    Equals the mean over all (positive, negative) pairs of
    1[s_pos > s_neg] + 0.5 * 1[s_pos == s_neg].
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} and labels {y.shape} must be equal 1-d")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC undefined: only one class present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j < s.size and sorted_s[j] == sorted_s[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # average of 1-based ranks i+1..j
        i = j
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_fold(model, test_segments, target: str, trial_majority_vote: bool = False) -> FoldMetrics:
    """Infer-mode metrics on one held-out subject.

    Predictions are the argmax of the class probabilities (exact ties go
    to class 0) and AUC uses the class-1 probability. With
    `trial_majority_vote`, segment predictions are collapsed to one vote
    per trial and scores to the mean class-1 probability.
    """
    if not test_segments:
        raise DataError("empty test set")
    subjects = {s.subject_id for s in test_segments}
    if len(subjects) != 1:
        raise DataError(
            f"test segments span subjects {sorted(subjects)}, expected exactly one"
        )
    subject = subjects.pop()
    x, y = segments_to_arrays(test_segments, target)
    probs = predict_proba(model, x)
    scores = probs[:, 1]
    preds = probs.argmax(axis=1)

    if trial_majority_vote:
        trials = sorted({s.trial_id for s in test_segments})
        t_ids = np.array([s.trial_id for s in test_segments])
        preds = np.array([int(preds[t_ids == t].mean() > 0.5) for t in trials])
        scores = np.array([scores[t_ids == t].mean() for t in trials])
        y = np.array([y[t_ids == t][0] for t in trials])

    try:
        auc_val = auc(scores, y)
    except MetricUndefinedError:
        log.warning("subject %s: AUC undefined (single-class test set)", subject)
        auc_val = None
    return FoldMetrics(
        test_subject=subject,
        accuracy=accuracy(preds, y),
        f1_class0=f1_per_class(preds, y, 0),
        f1_class1=f1_per_class(preds, y, 1),
        weighted_f1=weighted_f1(preds, y),
        macro_f1=macro_f1(preds, y),
        auc=auc_val,
    )


def _mean_metrics(rows: list[FoldMetrics]) -> dict[str, float | None]:
    out = {}
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in rows]
        if name == "auc":
            defined = [v for v in values if v is not None]
            if len(defined) < len(values):
                log.warning(
                    "excluding %d fold(s) with undefined AUC from the mean",
                    len(values) - len(defined),
                )
            out[name] = float(np.mean(defined)) if defined else None
        else:
            out[name] = float(np.mean(values))
    return out


def aggregate(folds_by_target: dict[str, list[FoldMetrics]]) -> EvalReport:
    """Per-target means over folds plus, when both targets are present, an
    average row that is their elementwise mean."""
    if not folds_by_target:
        raise DataError("no fold results to aggregate")
    for target in folds_by_target:
        if target not in TARGETS:
            raise DataError(f"unknown target {target!r}")
    if len(folds_by_target) == 2:
        subjects = {
            t: sorted(r.test_subject for r in rows) for t, rows in folds_by_target.items()
        }
        a, b = subjects.values()
        if a != b:
            raise DataError(f"targets evaluated over different folds: {a} vs {b}")
    means = {t: _mean_metrics(rows) for t, rows in folds_by_target.items()}
    average = None
    if len(means) == 2:
        average = {}
        for name in METRIC_FIELDS:
            vals = [m[name] for m in means.values()]
            average[name] = None if any(v is None for v in vals) else float(np.mean(vals))
    return EvalReport(folds=dict(folds_by_target), means=means, average=average)


# -- serialization -------------------------------------------------------------


def round2(x: float) -> float:
    """Half-up rounding to 2 decimals, absorbing sub-nano float noise first
    so that accumulated means like (0.66 + 0.69) / 2 render as 0.68."""
    d = Decimal(repr(float(x))).quantize(Decimal("1e-9"), rounding=ROUND_HALF_EVEN)
    return float(d.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report_to_dict(report: EvalReport) -> dict:
    return {
        "folds": {t: [asdict(r) for r in rows] for t, rows in report.folds.items()},
        "means": report.means,
        "average": report.average,
    }


def report_from_dict(d: dict) -> EvalReport:
    return EvalReport(
        folds={t: [FoldMetrics(**r) for r in rows] for t, rows in d["folds"].items()},
        means=d["means"],
        average=d["average"],
    )


def save_reports(reports: dict[str, EvalReport], path) -> None:
    payload = {v: report_to_dict(r) for v, r in reports.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def load_reports(path) -> dict[str, EvalReport]:
    with open(path) as fh:
        payload = json.load(fh)
    return {v: report_from_dict(d) for v, d in payload.items()}


def _table_rows(reports: dict[str, EvalReport]):
    """(section, variant, values) rows in the published table's order."""
    sections = []
    targets_present = set()
    for r in reports.values():
        targets_present.update(r.means)
    for t in ("valence", "arousal"):
        if t in targets_present:
            sections.append(t)
    if all(r.average is not None for r in reports.values()) and reports:
        sections.append("average")
    rows = []
    for section in sections:
        for variant, report in reports.items():
            values = report.average if section == "average" else report.means.get(section)
            if values is None:
                continue
            rows.append((section, variant, [values[c] for c in TABLE_COLUMNS]))
    return sections, rows


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{round2(v):.2f}"


def render_csv(reports: dict[str, EvalReport]) -> str:
    lines = ["section,model," + ",".join(TABLE_COLUMNS)]
    for section, variant, values in _table_rows(reports)[1]:
        label = VARIANT_LABELS.get(variant, variant)
        lines.append(f"{section},{label}," + ",".join(_fmt(v) for v in values))
    return "\n".join(lines) + "\n"


def render_markdown(reports: dict[str, EvalReport]) -> str:
    sections, rows = _table_rows(reports)
    out = []
    header = "| Model | " + " | ".join(TABLE_HEADERS) + " |"
    rule = "|" + "---|" * (len(TABLE_HEADERS) + 1)
    for section in sections:
        out.append(f"### {SECTION_LABELS[section]}")
        out.append(header)
        out.append(rule)
        for sec, variant, values in rows:
            if sec != section:
                continue
            label = VARIANT_LABELS.get(variant, variant)
            out.append(f"| {label} | " + " | ".join(_fmt(v) for v in values) + " |")
        out.append("")
    return "\n".join(out)


# -- LOSO orchestration ---------------------------------------------------------


@dataclass
class FoldRun:
    """Everything produced by training and testing one fold."""

    target: str
    fold_index: int
    test_subject: str
    metrics: FoldMetrics
    train_log: TrainLog
    fold_seed: int
    fit_subjects: list[str]
    val_subjects: list[str]


def fold_seed_for(seed: int, fold_index: int, target: str) -> int:
    """Deterministic per-(fold, target) seed, independent of scheduling."""
    ss = np.random.SeedSequence([seed, fold_index, TARGETS.index(target)])
    return int(ss.generate_state(1)[0])


def run_loso(
    dataset: Dataset,
    fspec: FilterSpec,
    sspec: SegmenterSpec,
    model_config: ModelConfig,
    train_config: TrainConfig,
    targets,
    seed: int,
    jobs: int = 1,
) -> dict[str, list[FoldRun]]:
    """Full LOSO loop for one model variant over the requested targets.

    Each fold trains a fresh model on the other subjects (with a
    subject-grouped validation split for early stopping) and evaluates on
    the held-out subject. Fold RNGs depend only on (seed, fold, target),
    so results are identical regardless of `jobs`.
    """
    segments: list[Segment] = []
    for record in dataset.records:
        segments.extend(preprocess_record(record, fspec, sspec))
    if not segments:
        raise DataError("dataset produced no segments")
    by_subject: dict[str, list[Segment]] = {}
    for seg in segments:
        by_subject.setdefault(seg.subject_id, []).append(seg)
    folds = loso_folds(by_subject.keys())

    def run_one(target: str, i: int, train_subjects: list[str], test_subject: str) -> FoldRun:
        fseed = fold_seed_for(seed, i, target)
        fit, val = make_validation_split(train_subjects, train_config, fseed)
        model = build(model_config, np.random.default_rng([fseed, 0]))
        cfg = replace(train_config, seed=fseed, target=target)
        fit_segs = [s for subj in fit for s in by_subject[subj]]
        val_segs = [s for subj in val for s in by_subject[subj]]
        tlog, _ = train(model, fit_segs, val_segs, cfg)
        metrics = evaluate_fold(model, by_subject[test_subject], target)
        log.info(
            "fold %s/%s target=%s: acc=%.3f auc=%s (stopped at epoch %d)",
            i + 1,
            len(folds),
            target,
            metrics.accuracy,
            "n/a" if metrics.auc is None else f"{metrics.auc:.3f}",
            tlog.stop_epoch,
        )
        return FoldRun(target, i, test_subject, metrics, tlog, fseed, fit, val)

    tasks = [
        (target, i, tr, te) for target in targets for i, (tr, te) in enumerate(folds)
    ]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: run_one(*a), tasks))
    else:
        results = [run_one(*a) for a in tasks]

    out: dict[str, list[FoldRun]] = {t: [] for t in targets}
    for run in results:
        out[run.target].append(run)
    for t in out:
        out[t].sort(key=lambda r: r.fold_index)
    return out
