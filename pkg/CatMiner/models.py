from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .errors import DataError, UsageError

# Canonical slot order of every feature vector.
FEATURE_NAMES: Tuple[str, ...] = (
    "entropy",
    "max_coverage",
    "max_info_gap",
    "unalikeability",
    "peculiarity",
    "p_peculiarity",
    "p_diversity",
)
FEATURE_COUNT = len(FEATURE_NAMES)
FULL_MASK = (1 << FEATURE_COUNT) - 1


def normalize_value(text: str) -> str:
    """Trim, collapse inner whitespace and case-fold a cell or constraint."""
    return " ".join(str(text).split()).casefold()


def mask_slots(mask: int) -> Tuple[int, ...]:
    """Slot indices selected by a 7-bit mask (bit i <-> slot i)."""
    if not 0 < mask <= FULL_MASK:
        raise UsageError(f"feature mask out of range: {mask}")
    return tuple(i for i in range(FEATURE_COUNT) if mask >> i & 1)


def mask_to_string(mask: int) -> str:
    """'1' or '0' per slot, slot 0 first, e.g. FULL_MASK -> '1111111'."""
    mask_slots(mask)
    return "".join("1" if mask >> i & 1 else "0" for i in range(FEATURE_COUNT))


def mask_from_string(bits: str) -> int:
    bits = bits.strip()
    if len(bits) != FEATURE_COUNT or set(bits) - {"0", "1"}:
        raise UsageError(f"feature mask must be {FEATURE_COUNT} characters of 0/1: {bits!r}")
    mask = sum(1 << i for i, bit in enumerate(bits) if bit == "1")
    if mask == 0:
        raise UsageError("feature mask selects no features")
    return mask


class Label(str, Enum):
    INTERESTING = "interesting"
    NON_INTERESTING = "non_interesting"

    @property
    def sign(self) -> int:
        return 1 if self is Label.INTERESTING else -1

    @classmethod
    def from_sign(cls, value: float) -> "Label":
        return cls.INTERESTING if value > 0 else cls.NON_INTERESTING


class ColumnKind(str, Enum):
    SUBJECT = "subject"
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ValueSet:
    """
    Frequency multiset of one column's normalized values.

    Entries are kept sorted by descending count, then value, so two columns
    holding the same multiset compare equal whatever their row order.
    """

    entries: Tuple[Tuple[str, int], ...]
    table_size: int

    def __post_init__(self) -> None:
        if not self.entries:
            raise DataError("empty column")
        values = [value for value, _ in self.entries]
        if len(set(values)) != len(values):
            raise DataError("duplicate values in value set")
        if any(count < 1 for _, count in self.entries):
            raise DataError("value counts must be positive")
        if self.table_size != sum(count for _, count in self.entries):
            raise DataError("table_size must equal the sum of counts")

    @classmethod
    def from_counts(cls, counts: Dict[str, int]) -> "ValueSet":
        merged: Counter = Counter()
        for value, count in counts.items():
            merged[normalize_value(value)] += int(count)
        entries = tuple(sorted(merged.items(), key=lambda item: (-item[1], item[0])))
        return cls(entries=entries, table_size=sum(merged.values()))

    @property
    def n_distinct(self) -> int:
        return len(self.entries)

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(count for _, count in self.entries)

    @property
    def values(self) -> Tuple[str, ...]:
        return tuple(value for value, _ in self.entries)

    def probabilities(self) -> Tuple[float, ...]:
        return tuple(count / self.table_size for count in self.counts)

    def count(self, value: str) -> int:
        key = normalize_value(value)
        for candidate, count in self.entries:
            if candidate == key:
                return count
        return 0

    def to_cells(self) -> List[str]:
        """Expand back into a column, each value repeated count times."""
        return [value for value, count in self.entries for _ in range(count)]

    def to_dict(self) -> Dict[str, Any]:
        return {"entries": [list(entry) for entry in self.entries], "table_size": self.table_size}


def value_set_from_column(column_cells: Iterable[Optional[str]]) -> ValueSet:
    """Count normalized, non-empty cells of a column."""
    cells = [normalize_value(cell) for cell in column_cells if cell is not None]
    counter = Counter(cell for cell in cells if cell)
    if not counter:
        raise DataError("empty column")
    return ValueSet.from_counts(counter)


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind
    cells: Tuple[str, ...]

    def value_set(self) -> ValueSet:
        return value_set_from_column(self.cells)


@dataclass(frozen=True)
class TableMeta:
    constraints: Tuple[str, ...] = ()
    ranking_criterion: Optional[str] = None
    page_title: str = ""
    caption: Optional[str] = None

    def __post_init__(self) -> None:
        if any(c != normalize_value(c) or not c for c in self.constraints):
            raise DataError(f"constraints must be normalized: {self.constraints!r}")


@dataclass(frozen=True)
class TableRecord:
    id: str
    subject: str
    subject_col: int
    columns: Tuple[Column, ...]
    metadata: TableMeta = field(default_factory=TableMeta)

    def __post_init__(self) -> None:
        subject_columns = [i for i, c in enumerate(self.columns) if c.kind is ColumnKind.SUBJECT]
        if subject_columns != [self.subject_col]:
            raise DataError(
                f"table {self.id}: expected exactly one subject column at {self.subject_col}, "
                f"found {subject_columns}"
            )

    @property
    def categorical_columns(self) -> Tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind is ColumnKind.CATEGORICAL)

    @property
    def numeric_columns(self) -> Tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind is ColumnKind.NUMERIC)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "subject": self.subject,
            "subject_col": self.subject_col,
            "columns": [
                {"name": c.name, "kind": c.kind.value, "cells": list(c.cells)} for c in self.columns
            ],
            "constraints": list(self.metadata.constraints),
            "ranking_criterion": self.metadata.ranking_criterion,
            "page_title": self.metadata.page_title,
            "caption": self.metadata.caption,
        }


@dataclass(frozen=True)
class FeatureVector:
    """Seven measure values in FEATURE_NAMES order plus the kernel mask."""

    values: Tuple[Optional[float], ...]
    mask: int = FULL_MASK
    degenerate: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.values) != FEATURE_COUNT:
            raise DataError(f"feature vector needs {FEATURE_COUNT} values, got {len(self.values)}")
        for name, value in zip(FEATURE_NAMES, self.values):
            if value is not None and not 0.0 <= value <= 1.0:
                raise DataError(f"{name}={value} outside [0, 1]")
        mask_slots(self.mask)

    def masked(self, mask: Optional[int] = None) -> Tuple[float, ...]:
        slots = mask_slots(self.mask if mask is None else mask)
        picked = tuple(self.values[i] for i in slots)
        if any(value is None for value in picked):
            missing = [FEATURE_NAMES[i] for i in slots if self.values[i] is None]
            raise DataError(f"missing masked slot(s): {', '.join(missing)}")
        return picked

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


@dataclass(frozen=True)
class Sample:
    subject: str
    attribute: str
    features: FeatureVector
    label: Label
    table_id: str = ""
    witness: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str]:
        return (self.subject, self.attribute)

    @property
    def sample_id(self) -> str:
        """Stable identifier used by assessment files: '<table_id>::<attribute>'."""
        return f"{self.table_id}::{self.attribute}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject": self.subject,
            "attribute": self.attribute,
            "label": self.label.value,
            "features": list(self.features.values),
            "witness": self.witness,
            "table_id": self.table_id,
        }


@dataclass(frozen=True)
class SampleSet:
    interesting: Tuple[Sample, ...] = ()
    non_interesting: Tuple[Sample, ...] = ()
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(s.label is not Label.INTERESTING for s in self.interesting):
            raise DataError("non-interesting sample in the interesting list")
        if any(s.label is not Label.NON_INTERESTING for s in self.non_interesting):
            raise DataError("interesting sample in the non-interesting list")
        positive = {(s.table_id, s.subject, s.attribute) for s in self.interesting}
        clash = positive & {(s.table_id, s.subject, s.attribute) for s in self.non_interesting}
        if clash:
            raise DataError(f"sample keys in both classes: {sorted(clash)[:3]}")

    @classmethod
    def from_samples(
        cls, samples: Iterable[Sample], provenance: Optional[Dict[str, Any]] = None
    ) -> "SampleSet":
        samples = list(samples)
        return cls(
            interesting=tuple(s for s in samples if s.label is Label.INTERESTING),
            non_interesting=tuple(s for s in samples if s.label is Label.NON_INTERESTING),
            provenance=dict(provenance or {}),
        )

    @property
    def samples(self) -> Tuple[Sample, ...]:
        return self.interesting + self.non_interesting

    def __len__(self) -> int:
        return len(self.interesting) + len(self.non_interesting)
