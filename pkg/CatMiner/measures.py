"""
The seven interestingness measures over a column's ValueSet.

Every measure returns a float in [0, 1]. Degenerate inputs (single-row tables,
single-valued or all-distinct columns) get fixed values; `degenerate_measures`
reports which ones were fixed rather than computed.
"""

from __future__ import annotations

import logging
import math
from enum import IntEnum
from typing import Any, Dict, Tuple

import numpy as np

from .errors import UsageError
from .models import (
    FEATURE_COUNT,
    FEATURE_NAMES,
    FULL_MASK,
    FeatureVector,
    ValueSet,
    mask_from_string,
    mask_to_string,
)

logger = logging.getLogger(__name__)


class MeasureId(IntEnum):
    """Measure identifiers; the value is the feature-vector slot."""

    ENTROPY = 0
    MAX_COVERAGE = 1
    MAX_INFO_GAP = 2
    UNALIKEABILITY = 3
    PECULIARITY = 4
    P_PECULIARITY = 5
    P_DIVERSITY = 6

    @property
    def key(self) -> str:
        return FEATURE_NAMES[self.value]

    @property
    def bit(self) -> int:
        return 1 << self.value


EXISTING_MEASURES = (
    MeasureId.ENTROPY.bit
    | MeasureId.MAX_COVERAGE.bit
    | MeasureId.UNALIKEABILITY.bit
    | MeasureId.PECULIARITY.bit
)
NOVEL_MEASURES = MeasureId.MAX_INFO_GAP.bit | MeasureId.P_PECULIARITY.bit | MeasureId.P_DIVERSITY.bit
ALL_MEASURES = FULL_MASK

NAMED_MASKS = {"all": ALL_MEASURES, "existing": EXISTING_MEASURES, "novel": NOVEL_MEASURES}


def _clamp(value: float) -> float:
    return min(1.0, max(0.0, float(value)))


def _probabilities(vs: ValueSet) -> np.ndarray:
    return np.asarray(vs.counts, dtype=float) / vs.table_size


def entropy_norm(vs: ValueSet) -> float:
    """Shannon entropy in bits divided by log2 of the table size."""
    if vs.table_size == 1 or vs.n_distinct == 1:
        return 0.0
    if vs.n_distinct == vs.table_size:
        return 1.0
    p = _probabilities(vs)
    return _clamp(-np.sum(p * np.log2(p)) / math.log2(vs.table_size))


def max_coverage(vs: ValueSet) -> float:
    return max(vs.counts) / vs.table_size


def max_info_gap_from(m_cov: float, table_size: int) -> float:
    """1 - log2(mCov) / log2(1/T); a single-row table has the full gap of 1."""
    if table_size <= 1:
        return 1.0
    return _clamp(1.0 - math.log2(m_cov) / math.log2(1.0 / table_size))


def max_info_gap(vs: ValueSet) -> float:
    return max_info_gap_from(max_coverage(vs), vs.table_size)


def unalikeability(vs: ValueSet) -> float:
    if vs.n_distinct == 1:
        return 0.0
    p = _probabilities(vs)
    return _clamp(1.0 - np.sum(p * p))


def simpson_peculiarity(vs: ValueSet) -> float:
    """Probability that two rows drawn without replacement differ."""
    size = vs.table_size
    if size == 1:
        return 0.0
    counts = np.asarray(vs.counts, dtype=float)
    return _clamp(1.0 - np.sum(counts * (counts - 1.0)) / (size * (size - 1.0)))


def max_p_diversity(table_size: int) -> float:
    """Raw p-diversity of a column whose T values are all distinct."""
    return (0.5 * table_size - 1.0) / math.sqrt(table_size)


def p_diversity_norm(vs: ValueSet) -> float:
    if vs.table_size <= 2:
        return 0.0
    if vs.n_distinct == vs.table_size:
        return 1.0
    p = _probabilities(vs)
    raw = math.sqrt(float(np.sum((p - 0.5) ** 2)))
    return _clamp(raw / max_p_diversity(vs.table_size))


def max_p_peculiarity(n_distinct: int, table_size: int) -> float:
    """Largest L1 distance from uniform over n values reachable with T rows."""
    uniform = 1.0 / n_distinct
    return (n_distinct - 1) * abs(1.0 / table_size - uniform) + abs(
        (table_size - n_distinct + 1) / table_size - uniform
    )


def p_peculiarity_norm(vs: ValueSet) -> float:
    n = vs.n_distinct
    if n == 1:
        return 1.0
    if n == vs.table_size:
        return 0.0
    raw = float(np.sum(np.abs(_probabilities(vs) - 1.0 / n)))
    return _clamp(raw / max_p_peculiarity(n, vs.table_size))


_MEASURES = (
    entropy_norm,
    max_coverage,
    max_info_gap,
    unalikeability,
    simpson_peculiarity,
    p_peculiarity_norm,
    p_diversity_norm,
)


def degenerate_measures(vs: ValueSet) -> Tuple[str, ...]:
    """Names of measures whose value was fixed by a degenerate input."""
    flagged = []
    if vs.table_size == 1:
        flagged += [MeasureId.MAX_INFO_GAP.key, MeasureId.PECULIARITY.key]
    if vs.n_distinct == 1 or vs.n_distinct == vs.table_size:
        flagged.append(MeasureId.P_PECULIARITY.key)
    if vs.table_size <= 2:
        flagged.append(MeasureId.P_DIVERSITY.key)
    return tuple(name for name in FEATURE_NAMES if name in flagged)


def feature_vector(vs: ValueSet, mask: int = FULL_MASK) -> FeatureVector:
    values = tuple(measure(vs) for measure in _MEASURES)
    degenerate = degenerate_measures(vs)
    if degenerate:
        logger.debug("degenerate measures %s for |T|=%d n=%d", degenerate, vs.table_size, vs.n_distinct)
    return FeatureVector(values=values, mask=mask, degenerate=degenerate)


def measure_report(vs: ValueSet, mask: int = FULL_MASK) -> Dict[str, Any]:
    fv = feature_vector(vs, mask)
    return {
        "table_size": vs.table_size,
        "distinct_values": vs.n_distinct,
        "measures": fv.as_dict(),
        "vector": list(fv.values),
        "mask": mask_to_string(mask),
        "degenerate": list(fv.degenerate),
    }


def parse_mask(text: str) -> int:
    """
    Parse a feature mask from 'all', 'existing', 'novel', a comma separated
    list of measure names, or a 7-character bit string (slot 0 first).
    """
    token = text.strip().casefold()
    if token in NAMED_MASKS:
        return NAMED_MASKS[token]
    if len(token) == FEATURE_COUNT and set(token) <= {"0", "1"}:
        return mask_from_string(token)
    mask = 0
    for name in filter(None, (part.strip() for part in token.split(","))):
        if name not in FEATURE_NAMES:
            raise UsageError(f"unknown measure {name!r}; expected one of {', '.join(FEATURE_NAMES)}")
        mask |= 1 << FEATURE_NAMES.index(name)
    if not mask:
        raise UsageError(f"empty feature mask: {text!r}")
    return mask


def parse_combos(text: str) -> Tuple[int, ...]:
    """'all' expands to every non-empty mask; otherwise ';'-separated masks."""
    token = text.strip().casefold()
    if token in ("all", "*"):
        return tuple(range(1, FULL_MASK + 1))
    masks = sorted({parse_mask(part) for part in token.split(";") if part.strip()})
    if not masks:
        raise UsageError(f"no feature combinations in {text!r}")
    return tuple(masks)
