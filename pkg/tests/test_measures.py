import math

import numpy as np
import pytest

from CatMiner.errors import UsageError
from CatMiner.measures import (
    EXISTING_MEASURES,
    NOVEL_MEASURES,
    MeasureId,
    degenerate_measures,
    entropy_norm,
    feature_vector,
    max_coverage,
    max_info_gap,
    max_info_gap_from,
    measure_report,
    p_diversity_norm,
    p_peculiarity_norm,
    parse_combos,
    parse_mask,
    simpson_peculiarity,
    unalikeability,
)
from CatMiner.models import FULL_MASK, ValueSet


def counts(*values):
    return ValueSet.from_counts({f"v{i}": count for i, count in enumerate(values)})


EXAMPLE_1 = counts(12, 8, 2, 2, 2, 2)
EXAMPLE_2 = counts(2, 2, 2, 2, 2, 1, 1)
EXAMPLE_3 = counts(12, 2, 2, 2, 2, 1, 1)
EXAMPLE_4 = counts(60, 50, 45, 60, 40, 60)


@pytest.mark.parametrize(
    "values, expected",
    [
        (EXAMPLE_1, [0.44, 0.43, 0.75, 0.71, 0.74, 0.58, 0.36]),
        (EXAMPLE_2, [0.77, 0.17, 0.28, 0.85, 0.92, 0.33, 0.66]),
        (EXAMPLE_3, [0.48, 0.55, 0.80, 0.67, 0.70, 0.69, 0.49]),
    ],
)
def test_worked_examples_all_measures(values, expected):
    fv = feature_vector(values)
    assert list(fv.values) == pytest.approx(expected, abs=0.005)


@pytest.mark.parametrize(
    "distribution, p_diversity, unalike, peculiarity",
    [
        ({"USA": 80, "Spain": 20}, 0.09, 0.32, 0.32),
        ({"USA": 60, "Spain": 40}, 0.03, 0.48, 0.48),
        ({"USA": 4, "Spain": 1}, 0.63, 0.32, 0.40),
        ({"USA": 3, "Spain": 2}, 0.21, 0.48, 0.60),
    ],
)
def test_p_diversity_tracks_table_size_where_other_measures_do_not(distribution, p_diversity, unalike, peculiarity):
    vs = ValueSet.from_counts(distribution)
    assert p_diversity_norm(vs) == pytest.approx(p_diversity, abs=0.005)
    assert unalikeability(vs) == pytest.approx(unalike, abs=0.005)
    assert simpson_peculiarity(vs) == pytest.approx(peculiarity, abs=0.005)


@pytest.mark.parametrize(
    "distribution, p_peculiarity, info_gap",
    [
        ({"USA": 90, "Spain": 10}, 0.82, 0.98),
        ({"USA": 9, "Spain": 1}, 1.0, 0.95),
    ],
)
def test_p_peculiarity_and_info_gap_on_skewed_columns(distribution, p_peculiarity, info_gap):
    vs = ValueSet.from_counts(distribution)
    assert p_peculiarity_norm(vs) == pytest.approx(p_peculiarity, abs=0.005)
    assert max_info_gap(vs) == pytest.approx(info_gap, abs=0.005)


def test_p_diversity_of_large_even_column():
    assert p_diversity_norm(EXAMPLE_4) == pytest.approx(0.09, abs=0.01)


def test_info_gap_grows_with_table_size_at_low_coverage():
    assert max_info_gap_from(0.2, 10) == pytest.approx(0.30, abs=0.01)
    assert max_info_gap_from(0.2, 100) == pytest.approx(0.65, abs=0.03)
    high = [max_info_gap_from(0.9, size) for size in range(10, 101)]
    assert max(high) - min(high) < 0.05


def test_entropy_of_all_distinct_column_is_one():
    assert entropy_norm(counts(1, 1, 1, 1)) == 1.0


def test_single_valued_column():
    vs = counts(5)
    assert entropy_norm(vs) == 0.0
    assert max_coverage(vs) == 1.0
    assert unalikeability(vs) == 0.0
    assert p_peculiarity_norm(vs) == 1.0
    assert "p_peculiarity" in degenerate_measures(vs)


def test_single_row_table_uses_fixed_values():
    vs = counts(1)
    fv = feature_vector(vs)
    assert fv.values == (0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0)
    assert set(fv.degenerate) == {"max_info_gap", "peculiarity", "p_peculiarity", "p_diversity"}


def test_all_distinct_column_flags_p_peculiarity():
    vs = counts(1, 1, 1)
    assert p_peculiarity_norm(vs) == 0.0
    assert p_diversity_norm(vs) == 1.0
    assert degenerate_measures(vs) == ("p_peculiarity",)


def test_random_columns_stay_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 12))
        vs = counts(*(int(c) for c in rng.integers(1, 40, size=n)))
        values = feature_vector(vs).values
        assert all(0.0 <= v <= 1.0 for v in values)
        assert not any(math.isnan(v) for v in values)


def test_peculiarity_never_below_unalikeability():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(1, 15))
        vs = counts(*(int(c) for c in rng.integers(1, 60, size=n)))
        assert simpson_peculiarity(vs) >= unalikeability(vs) - 1e-12


def test_measures_stay_finite_up_to_ten_thousand_rows():
    rng = np.random.default_rng(5)
    for _ in range(200):
        size = int(rng.integers(1, 10_001))
        n = int(rng.integers(1, min(50, size) + 1))
        extra = rng.multinomial(size - n, np.full(n, 1.0 / n))
        vs = counts(*(int(c) + 1 for c in extra))
        assert vs.table_size == size
        values = feature_vector(vs).values
        assert all(0.0 <= v <= 1.0 for v in values)
        assert not any(math.isnan(v) for v in values)


def test_info_gap_is_monotone_in_table_size():
    gaps = [max_info_gap_from(0.2, size) for size in range(5, 2001)]
    assert all(a <= b for a, b in zip(gaps, gaps[1:]))


def test_measures_ignore_value_names():
    a = ValueSet.from_counts({"usa": 3, "spain": 1})
    b = ValueSet.from_counts({"x": 1, "y": 3})
    assert feature_vector(a).values == feature_vector(b).values


def test_named_masks_partition_the_measures():
    assert EXISTING_MEASURES | NOVEL_MEASURES == FULL_MASK
    assert EXISTING_MEASURES & NOVEL_MEASURES == 0
    assert MeasureId.P_DIVERSITY.key == "p_diversity"


def test_parse_mask_forms():
    assert parse_mask("all") == FULL_MASK
    assert parse_mask("novel") == NOVEL_MEASURES
    assert parse_mask("1000000") == 1
    assert parse_mask("entropy, p_diversity") == 1 | (1 << 6)
    with pytest.raises(UsageError):
        parse_mask("entropy,nonsense")


def test_parse_combos():
    assert len(parse_combos("all")) == 127
    assert parse_combos("1000000; 0100000;1000000") == (1, 2)
    with pytest.raises(UsageError):
        parse_combos(" ; ")


def test_measure_report_lists_degenerate_measures():
    report = measure_report(counts(2, 1), mask=parse_mask("existing"))
    assert report["table_size"] == 3
    assert report["distinct_values"] == 2
    assert report["mask"] == "1101100"
    assert report["degenerate"] == []
    assert report["measures"]["max_coverage"] == pytest.approx(2 / 3)
