"""
Distant-supervision labeling of (subject, categorical attribute) pairs and the
train/test/sub-training splits built from them.

A categorical column is interesting for its subject when some value of the
column is the constraint of another table over the same subject, i.e. a
"child" table exists that lists the subject restricted to that value.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import DataError, SchemaError, UsageError
from .ingest import IngestWarning, head_noun_stem
from .measures import feature_vector
from .models import (
    FEATURE_COUNT,
    FULL_MASK,
    FeatureVector,
    Label,
    Sample,
    SampleSet,
    TableRecord,
    mask_slots,
    normalize_value,
)

logger = logging.getLogger(__name__)


@dataclass
class ConsMap:
    """constraint -> normalized subject -> ids of the tables listing it under that constraint"""

    entries: Dict[str, Dict[str, Set[str]]] = field(default_factory=dict)

    def add(self, constraint: str, subject: str, table_id: str) -> None:
        subjects = self.entries.setdefault(normalize_value(constraint), {})
        subjects.setdefault(normalize_value(subject), set()).add(table_id)

    def subjects(self, constraint: str) -> Set[str]:
        return set(self.entries.get(normalize_value(constraint), {}))

    def witness(self, value: str, subject: str, exclude_table: str = "") -> Optional[str]:
        """Smallest id of another table over `subject` constrained by `value`."""
        subjects = self.entries.get(value)
        if not subjects:
            return None
        wanted = head_noun_stem(subject)
        candidates = [
            table_id
            for candidate, table_ids in subjects.items()
            if head_noun_stem(candidate) == wanted
            for table_id in table_ids
            if table_id != exclude_table
        ]
        return min(candidates) if candidates else None

    def __contains__(self, constraint: str) -> bool:
        return normalize_value(constraint) in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def build_cons_map(corpus: Iterable[TableRecord]) -> ConsMap:
    cons_map = ConsMap()
    for table in corpus:
        if not table.subject:
            continue
        for constraint in table.metadata.constraints:
            cons_map.add(constraint, table.subject, table.id)
    logger.info("Built cons_map with %d constraints", len(cons_map))
    return cons_map


def corpus_fingerprint(corpus: Iterable[TableRecord]) -> str:
    digest = hashlib.sha256()
    for table in sorted(corpus, key=lambda t: t.id):
        digest.update(json.dumps(table.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
    return digest.hexdigest()


def generate_samples(
    corpus: Sequence[TableRecord],
    cons_map: Optional[ConsMap] = None,
    dedupe: bool = False,
    warnings: Optional[List[IngestWarning]] = None,
) -> SampleSet:
    """Label every categorical column of the corpus."""
    corpus = sorted(corpus, key=lambda t: t.id)
    cons_map = cons_map if cons_map is not None else build_cons_map(corpus)
    warnings = warnings if warnings is not None else []
    samples: List[Sample] = []
    seen: Set[Tuple[str, str]] = set()
    skipped_tables = 0

    for table in corpus:
        if not table.subject:
            warnings.append(IngestWarning(table.id, "no identifiable subject"))
            logger.warning("Skipping %s: no identifiable subject", table.id)
            skipped_tables += 1
            continue
        subject = normalize_value(table.subject)
        own_attributes: Set[str] = set()
        for column in table.categorical_columns:
            attribute = normalize_value(column.name)
            if attribute in own_attributes:
                warnings.append(IngestWarning(table.id, f"duplicate column {column.name!r}"))
                logger.warning("Skipping duplicate column %r of %s", column.name, table.id)
                continue
            own_attributes.add(attribute)
            if dedupe and (subject, attribute) in seen:
                logger.debug("Dropping duplicate pair (%s, %s) from %s", subject, attribute, table.id)
                continue
            try:
                values = column.value_set()
            except DataError:
                warnings.append(IngestWarning(table.id, f"empty column {column.name!r}"))
                logger.warning("Skipping empty column %r of %s", column.name, table.id)
                continue

            witness = None
            for value in values.values:
                child = cons_map.witness(value, subject, exclude_table=table.id)
                if child is not None:
                    witness = f"{value}@{child}"
                    break

            seen.add((subject, attribute))
            samples.append(
                Sample(
                    subject=subject,
                    attribute=attribute,
                    features=feature_vector(values),
                    label=Label.INTERESTING if witness else Label.NON_INTERESTING,
                    table_id=table.id,
                    witness=witness,
                )
            )

    result = SampleSet.from_samples(
        samples,
        provenance={
            "corpus_hash": corpus_fingerprint(corpus),
            "tables": len(corpus),
            "skipped_tables": skipped_tables,
            "dedupe": dedupe,
        },
    )
    logger.info(
        "Labeled %d samples: %d interesting, %d non-interesting",
        len(result),
        len(result.interesting),
        len(result.non_interesting),
    )
    return result


def brute_force_labels(corpus: Sequence[TableRecord]) -> Dict[Tuple[str, str], Label]:
    """All-pairs parent/child scan; keys are (table_id, normalized attribute)."""
    labels = {}
    for parent in corpus:
        if not parent.subject:
            continue
        parent_stem = head_noun_stem(parent.subject)
        for column in parent.categorical_columns:
            values = {normalize_value(cell) for cell in column.cells} - {""}
            if not values:
                continue
            interesting = any(
                child.id != parent.id
                and child.subject
                and head_noun_stem(child.subject) == parent_stem
                and values & set(child.metadata.constraints)
                for child in corpus
            )
            labels.setdefault(
                (parent.id, normalize_value(column.name)),
                Label.INTERESTING if interesting else Label.NON_INTERESTING,
            )
    return labels


def verify_against_brute_force(corpus: Sequence[TableRecord], samples: SampleSet) -> None:
    expected = brute_force_labels(corpus)
    actual = {(s.table_id, s.attribute): s.label for s in samples.samples}
    mismatched = sorted(key for key, label in actual.items() if expected.get(key) is not label)
    if mismatched:
        raise DataError(f"{len(mismatched)} labels disagree with the all-pairs scan, e.g. {mismatched[0]}")
    logger.info("All %d labels agree with the all-pairs scan", len(actual))


# ----------------------------------------------------------------------------
# Splits
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HoldoutSplit:
    train: SampleSet
    test_pos: Tuple[Sample, ...]
    test_neg: Tuple[Sample, ...]


def _held_out_count(size: int, fraction: float) -> int:
    if size < 2:
        raise DataError(f"class too small to split: {size} sample(s)")
    count = int(np.floor(size * fraction + 0.5))
    return min(max(count, 1), size - 1)


def _ordered(samples: Iterable[Sample]) -> List[Sample]:
    return sorted(samples, key=lambda s: (s.table_id, s.subject, s.attribute))


def holdout_split(samples: SampleSet, test_fraction: float, seed: int) -> HoldoutSplit:
    """Stratified random hold-out of `test_fraction` of each class."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test fraction must lie in (0, 1): {test_fraction}")
    rng = np.random.default_rng(seed)
    kept, held = {}, {}
    for label, members in ((Label.INTERESTING, samples.interesting), (Label.NON_INTERESTING, samples.non_interesting)):
        ordered = _ordered(members)
        n_test = _held_out_count(len(ordered), test_fraction)
        order = rng.permutation(len(ordered))
        held[label] = tuple(ordered[i] for i in order[:n_test])
        kept[label] = tuple(ordered[i] for i in order[n_test:])
    provenance = dict(samples.provenance, seed=seed, test_fraction=test_fraction)
    train = SampleSet(kept[Label.INTERESTING], kept[Label.NON_INTERESTING], provenance)
    logger.info(
        "Held out %d positives and %d negatives; %d samples left for training",
        len(held[Label.INTERESTING]),
        len(held[Label.NON_INTERESTING]),
        len(train),
    )
    return HoldoutSplit(train=train, test_pos=held[Label.INTERESTING], test_neg=held[Label.NON_INTERESTING])


def make_balanced_subfiles(train: SampleSet, k: int) -> List[SampleSet]:
    """Every subfile holds all positives and one of k near-equal chunks of negatives."""
    if k < 1:
        raise UsageError(f"subfile count must be at least 1: {k}")
    negatives = train.non_interesting
    if len(negatives) < k:
        raise DataError(f"cannot split {len(negatives)} negatives into {k} subfiles")
    chunks = np.array_split(np.arange(len(negatives)), k)
    return [
        SampleSet(
            interesting=train.interesting,
            non_interesting=tuple(negatives[i] for i in chunk),
            provenance=dict(train.provenance, subfile=index, subfiles=k),
        )
        for index, chunk in enumerate(chunks)
    ]


# ----------------------------------------------------------------------------
# Sample files
# ----------------------------------------------------------------------------


class SampleRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    subject: str
    attribute: str
    label: Label
    features: List[Optional[float]]
    witness: Optional[str] = None
    table_id: str = ""

    @field_validator("features")
    @classmethod
    def _seven_features(cls, value: List[Optional[float]]) -> List[Optional[float]]:
        if len(value) != FEATURE_COUNT:
            raise ValueError(f"expected {FEATURE_COUNT} features, got {len(value)}")
        return value

    def to_sample(self) -> Sample:
        return Sample(
            subject=self.subject,
            attribute=self.attribute,
            features=FeatureVector(values=tuple(self.features)),
            label=self.label,
            table_id=self.table_id,
            witness=self.witness,
        )


def write_samples(samples: Iterable[Sample], path: Union[str, Path]) -> None:
    lines = [json.dumps(sample.to_dict(), ensure_ascii=False) for sample in samples]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_samples(path: Union[str, Path]) -> List[Sample]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"{path}: cannot read: {e}") from e
    samples = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            samples.append(SampleRecord.model_validate_json(line).to_sample())
        except (ValidationError, DataError) as e:
            raise SchemaError(f"{path}:{line_number}: invalid sample: {e}") from e
    return samples


def read_sample_set(path: Union[str, Path]) -> SampleSet:
    return SampleSet.from_samples(read_samples(path), provenance={"source": str(path)})


def export_sparse(samples: Iterable[Sample], path: Union[str, Path], mask: int = FULL_MASK) -> None:
    """'<+1|-1> <slot>:<value> ...' lines, slots numbered from 1."""
    slots = mask_slots(mask)
    lines = []
    for sample in samples:
        values = sample.features.masked(mask)
        pairs = " ".join(f"{slot + 1}:{value!r}" for slot, value in zip(slots, values))
        lines.append(f"{sample.label.sign:+d} {pairs}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
