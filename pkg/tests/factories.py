"""Small builders for records and samples used across the test modules."""

from typing import Dict, Optional, Sequence

from CatMiner.measures import feature_vector
from CatMiner.models import Column, ColumnKind, Label, Sample, TableMeta, TableRecord, ValueSet


def record(
    table_id: str,
    subject: str,
    columns: Dict[str, Sequence[str]],
    constraints: Sequence[str] = (),
) -> TableRecord:
    """TableRecord with a subject column followed by categorical columns."""
    first = next(iter(columns.values()), ())
    built = [Column(name="name", kind=ColumnKind.SUBJECT, cells=tuple(f"row {i}" for i in range(len(first))))]
    built += [Column(name=name, kind=ColumnKind.CATEGORICAL, cells=tuple(cells)) for name, cells in columns.items()]
    return TableRecord(
        id=table_id,
        subject=subject,
        subject_col=0,
        columns=tuple(built),
        metadata=TableMeta(constraints=tuple(constraints)),
    )


def sample(
    counts: Dict[str, int],
    label: Label,
    table_id: str = "t",
    attribute: str = "country",
    subject: Optional[str] = "things",
) -> Sample:
    return Sample(
        subject=subject,
        attribute=attribute,
        features=feature_vector(ValueSet.from_counts(counts)),
        label=label,
        table_id=table_id,
    )
