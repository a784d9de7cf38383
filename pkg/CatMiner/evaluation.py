"""
Class-specific metrics, user-assessment ground truth, Fleiss's kappa and
corpus statistics.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm, poisson
from statsmodels.stats import inter_rater

from .errors import DataError, SchemaError, UsageError
from .models import Label, Sample, TableRecord

logger = logging.getLogger(__name__)

CLASSES = (Label.NON_INTERESTING, Label.INTERESTING)
CLASS_TITLES = {Label.NON_INTERESTING: "userNeg", Label.INTERESTING: "userPos"}


class Vote(str, Enum):
    INTERESTING = "I"
    NON_INTERESTING = "N"
    NOT_SURE = "U"

    @property
    def label(self) -> Optional[Label]:
        return {Vote.INTERESTING: Label.INTERESTING, Vote.NON_INTERESTING: Label.NON_INTERESTING}.get(self)


VOTE_ORDER = (Vote.INTERESTING, Vote.NON_INTERESTING, Vote.NOT_SURE)


@dataclass(frozen=True)
class AssessmentMatrix:
    sample_ids: Tuple[str, ...]
    votes: Tuple[Tuple[Vote, ...], ...]

    def __post_init__(self) -> None:
        if not self.votes or len(self.votes) != len(self.sample_ids):
            raise DataError("assessment matrix needs one vote row per sample")
        widths = {len(row) for row in self.votes}
        if len(widths) != 1 or 0 in widths:
            raise DataError("assessment matrix must be rectangular and filled")

    @property
    def evaluators(self) -> int:
        return len(self.votes[0])

    def counts(self) -> np.ndarray:
        """n_ij: votes for category j (I, N, U) on sample i."""
        codes = np.array([[VOTE_ORDER.index(vote) for vote in row] for row in self.votes], dtype=int)
        table, _ = inter_rater.aggregate_raters(codes, n_cat=len(VOTE_ORDER))
        return table


def read_assessments(path: Union[str, Path]) -> AssessmentMatrix:
    """CSV with a sample_id column followed by one I/N/U column per evaluator."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as e:
        raise SchemaError(f"{path}: cannot read assessments: {e}") from e
    if len(rows) < 2:
        raise SchemaError(f"{path}: no assessment rows")
    header, body = rows[0], rows[1:]
    ids, votes = [], []
    for line_number, row in enumerate(body, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"{path}:{line_number}: expected {len(header)} columns, got {len(row)}")
        try:
            votes.append(tuple(Vote(cell.strip().upper()) for cell in row[1:]))
        except ValueError as e:
            raise SchemaError(f"{path}:{line_number}: invalid vote ({e}); expected I, N or U") from e
        ids.append(row[0].strip())
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate sample ids")
    return AssessmentMatrix(sample_ids=tuple(ids), votes=tuple(votes))


# ----------------------------------------------------------------------------
# Class metrics
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    support: int

    @property
    def class_accuracy(self) -> Optional[float]:
        """Share of correct predictions among those assigned to this class, i.e. precision."""
        return self.precision


@dataclass(frozen=True)
class ClassReport:
    per_class: Dict[Label, ClassMetrics]
    accuracy: float
    confusion: Dict[Tuple[Label, Label], int]
    total: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "classes": {
                label.value: {
                    "precision": m.precision,
                    "class_accuracy": m.class_accuracy,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for label, m in self.per_class.items()
            },
            "confusion": {f"{truth.value}->{pred.value}": n for (truth, pred), n in self.confusion.items()},
        }


def class_metrics(predictions: Sequence[Label], truth: Sequence[Label]) -> ClassReport:
    if len(predictions) != len(truth) or not truth:
        raise DataError(f"need equally long, non-empty label lists ({len(predictions)} vs {len(truth)})")
    predictions = [Label(p) for p in predictions]
    truth = [Label(t) for t in truth]
    pairs = Counter(zip(truth, predictions))
    confusion = {(t, p): pairs.get((t, p), 0) for t in CLASSES for p in CLASSES}
    per_class = {}
    for label in CLASSES:
        hits = confusion[(label, label)]
        predicted = sum(confusion[(t, label)] for t in CLASSES)
        actual = sum(confusion[(label, p)] for p in CLASSES)
        precision = hits / predicted if predicted else None
        recall = hits / actual if actual else None
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class[label] = ClassMetrics(precision=precision, recall=recall, f1=f1, support=actual)
    correct = sum(confusion[(label, label)] for label in CLASSES)
    return ClassReport(per_class=per_class, accuracy=correct / len(truth), confusion=confusion, total=len(truth))


# ----------------------------------------------------------------------------
# Ground truth from user assessments
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    level: int
    evaluators: int
    positives: Tuple[str, ...]
    negatives: Tuple[str, ...]
    excluded: Tuple[str, ...]

    def labels(self) -> Dict[str, Label]:
        truth = {sample_id: Label.INTERESTING for sample_id in self.positives}
        truth.update({sample_id: Label.NON_INTERESTING for sample_id in self.negatives})
        return truth


def majority_ground_truth(m: AssessmentMatrix, x: int) -> GroundTruth:
    """A sample takes label L when at least x evaluators voted L; not-sure winners are excluded."""
    if not m.evaluators / 2 < x <= m.evaluators:
        raise UsageError(f"agreement level {x} must exceed half of {m.evaluators} evaluators")
    positives, negatives, excluded = [], [], []
    for sample_id, row in zip(m.sample_ids, m.votes):
        counts = Counter(row)
        winner = next((vote for vote in VOTE_ORDER if counts[vote] >= x), None)
        if winner is Vote.INTERESTING:
            positives.append(sample_id)
        elif winner is Vote.NON_INTERESTING:
            negatives.append(sample_id)
        else:
            excluded.append(sample_id)
    return GroundTruth(x, m.evaluators, tuple(positives), tuple(negatives), tuple(excluded))


def agreement_levels(m: AssessmentMatrix) -> Dict[int, GroundTruth]:
    """Ground truth for every strict-majority level, from floor(y/2)+1 up to y."""
    return {x: majority_ground_truth(m, x) for x in range(m.evaluators // 2 + 1, m.evaluators + 1)}


def evaluate_predictions(predictions: Mapping[str, Label], truth: GroundTruth) -> Optional[ClassReport]:
    """Compare predictions with one agreement level; None when no labeled sample was predicted."""
    labels = truth.labels()
    ids = sorted(sample_id for sample_id in labels if sample_id in predictions)
    missing = len(labels) - len(ids)
    if missing:
        logger.warning("%d assessed samples at level %d have no prediction", missing, truth.level)
    if not ids:
        return None
    return class_metrics([predictions[i] for i in ids], [labels[i] for i in ids])


def hypothesis_agreement(samples: Iterable[Sample], m: AssessmentMatrix, x: int) -> Optional[ClassReport]:
    """How well the distant-supervision labels agree with users at level x."""
    labeled = {sample.sample_id: sample.label for sample in samples}
    return evaluate_predictions(labeled, majority_ground_truth(m, x))


# ----------------------------------------------------------------------------
# Fleiss's kappa
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed: float
    expected: float
    per_category_agreement: Dict[Vote, Optional[float]]
    proportions: Dict[Vote, float]
    standard_error: float
    confidence_interval: Tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "observed": self.observed,
            "expected": self.expected,
            "per_category_agreement": {v.value: k for v, k in self.per_category_agreement.items()},
            "proportions": {v.value: p for v, p in self.proportions.items()},
            "standard_error": self.standard_error,
            "confidence_interval": list(self.confidence_interval),
        }


def subject_agreements(counts: np.ndarray) -> np.ndarray:
    raters = counts.sum(axis=1).astype(float)
    return (np.sum(counts * counts, axis=1) - raters) / (raters * (raters - 1))


def label_proportions(counts: np.ndarray) -> np.ndarray:
    return counts.sum(axis=0).astype(float) / counts.sum()


def kappa_confidence_interval(
    kappa: float, proportions: np.ndarray, subjects: int, raters: int, level: float = 0.95
) -> Tuple[float, Tuple[float, float]]:
    """Large-sample standard error of kappa and its two-sided interval."""
    pq = proportions * (1.0 - proportions)
    total = float(pq.sum())
    if total == 0.0:
        return 0.0, (kappa, kappa)
    spread = total * total - float(np.sum(pq * (1.0 - 2.0 * proportions)))
    se = float(np.sqrt(2.0 * max(spread, 0.0)) / (total * np.sqrt(subjects * raters * (raters - 1))))
    z = float(norm.ppf(0.5 + level / 2.0))
    return se, (kappa - z * se, kappa + z * se)


def fleiss_kappa(m: AssessmentMatrix) -> KappaResult:
    counts = m.counts()
    subjects, raters = len(counts), m.evaluators
    if subjects < 2 or raters < 2:
        raise DataError("Fleiss's kappa needs at least 2 samples and 2 evaluators")
    observed = float(np.mean(subject_agreements(counts)))
    proportions = label_proportions(counts)
    expected = float(np.sum(proportions * proportions))
    if expected >= 1.0:
        kappa = 1.0 if observed >= 1.0 else 0.0
    else:
        kappa = float(inter_rater.fleiss_kappa(counts, method="fleiss"))

    per_category = {}
    for j, vote in enumerate(VOTE_ORDER):
        pq = proportions[j] * (1.0 - proportions[j])
        if pq == 0.0:
            per_category[vote] = None
            continue
        disagreement = float(np.sum(counts[:, j] * (raters - counts[:, j])))
        per_category[vote] = 1.0 - disagreement / (subjects * raters * (raters - 1) * pq)

    se, interval = kappa_confidence_interval(kappa, proportions, subjects, raters)
    return KappaResult(
        kappa=kappa,
        observed=observed,
        expected=expected,
        per_category_agreement=per_category,
        proportions={vote: float(p) for vote, p in zip(VOTE_ORDER, proportions)},
        standard_error=se,
        confidence_interval=interval,
    )


# ----------------------------------------------------------------------------
# Corpus statistics
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonFit:
    lam: float
    relative_sse: float
    support: Tuple[int, ...]
    empirical: Tuple[float, ...]
    model: Tuple[float, ...]


def poisson_fit(counts: Sequence[int]) -> PoissonFit:
    """Fit Poisson(lambda = mean) and measure the pmf mismatch over the observed support."""
    data = np.asarray(list(counts), dtype=int)
    if data.size == 0:
        raise DataError("poisson_fit needs at least one count")
    if (data < 0).any():
        raise DataError("counts must be non-negative")
    lam = float(data.mean())
    support, frequencies = np.unique(data, return_counts=True)
    empirical = frequencies / data.size
    model = poisson.pmf(support, lam)
    relative_sse = float(np.sum((empirical - model) ** 2) / np.sum(empirical ** 2))
    return PoissonFit(
        lam=lam,
        relative_sse=relative_sse,
        support=tuple(int(k) for k in support),
        empirical=tuple(float(p) for p in empirical),
        model=tuple(float(p) for p in model),
    )


@dataclass
class CorpusStats:
    tables: int
    histogram: Dict[int, int] = field(default_factory=dict)
    fit: Optional[PoissonFit] = None


def corpus_statistics(corpus: Sequence[TableRecord]) -> CorpusStats:
    """Histogram of categorical attributes per table and its Poisson fit."""
    per_table = [len(table.categorical_columns) for table in corpus]
    histogram = dict(sorted(Counter(per_table).items()))
    fit = poisson_fit(per_table) if per_table else None
    return CorpusStats(tables=len(per_table), histogram=histogram, fit=fit)


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------


def _cell(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100.0 * value:.2f}"


def render_report(
    reports: Mapping[int, Optional[ClassReport]],
    evaluators: int,
    kappa: Optional[KappaResult] = None,
    title: str = "",
) -> str:
    """Plain-text table: one row per agreement level, recall/precision/F1 per class, accuracy."""
    header = (
        f"{'Agreem.':<8}| {'userNeg Rec.':>12} {'Prec.':>7} {'F1':>7} "
        f"| {'userPos Rec.':>12} {'Prec.':>7} {'F1':>7} | {'Acc.':>7} | {'n':>4}"
    )
    lines = [title] if title else []
    lines += [header, "-" * len(header)]
    for level in sorted(reports, reverse=True):
        report = reports[level]
        agreement = f"{level}/{evaluators}"
        if report is None:
            lines.append(f"{agreement:<8}| {'no assessed samples':>28}")
            continue
        neg = report.per_class[Label.NON_INTERESTING]
        pos = report.per_class[Label.INTERESTING]
        lines.append(
            f"{agreement:<8}| {_cell(neg.recall):>12} {_cell(neg.precision):>7} {_cell(neg.f1):>7} "
            f"| {_cell(pos.recall):>12} {_cell(pos.precision):>7} {_cell(pos.f1):>7} "
            f"| {_cell(report.accuracy):>7} | {report.total:>4}"
        )
    if kappa is not None:
        low, high = kappa.confidence_interval
        lines.append(f"Fleiss kappa = {kappa.kappa:.3f} (95% CI [{low:.3f}, {high:.3f}])")
    return "\n".join(lines) + "\n"


def report_to_json(
    reports: Mapping[int, Optional[ClassReport]],
    evaluators: int,
    kappa: Optional[KappaResult] = None,
    extra: Optional[dict] = None,
) -> str:
    payload = {
        "evaluators": evaluators,
        "levels": {
            f"{level}/{evaluators}": (report.to_dict() if report is not None else None)
            for level, report in sorted(reports.items(), reverse=True)
        },
        "kappa": kappa.to_dict() if kappa is not None else None,
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2) + "\n"
