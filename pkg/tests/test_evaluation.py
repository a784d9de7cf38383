import json
import random

import numpy as np
import pytest

from CatMiner.errors import DataError, SchemaError, UsageError
from CatMiner.evaluation import (
    AssessmentMatrix,
    Vote,
    agreement_levels,
    class_metrics,
    corpus_statistics,
    evaluate_predictions,
    fleiss_kappa,
    hypothesis_agreement,
    majority_ground_truth,
    poisson_fit,
    read_assessments,
    render_report,
    report_to_json,
)
from CatMiner.models import Label
from factories import record, sample

POS, NEG = Label.INTERESTING, Label.NON_INTERESTING


def matrix(*rows: str) -> AssessmentMatrix:
    return AssessmentMatrix(
        sample_ids=tuple(f"s{i}" for i in range(len(rows))),
        votes=tuple(tuple(Vote(v) for v in row) for row in rows),
    )


def test_class_metrics_on_one_missed_positive():
    truth = [NEG] * 5 + [POS] * 6
    predictions = [NEG] * 5 + [POS] * 5 + [NEG]
    report = class_metrics(predictions, truth)
    neg, pos = report.per_class[NEG], report.per_class[POS]
    assert neg.recall == 1.0
    assert neg.precision == pytest.approx(5 / 6)
    assert pos.recall == pytest.approx(5 / 6)
    assert pos.precision == 1.0
    assert neg.f1 == pytest.approx(10 / 11)
    assert pos.f1 == pytest.approx(10 / 11)
    assert report.accuracy == pytest.approx(10 / 11)
    assert report.confusion[(POS, NEG)] == 1
    assert pos.class_accuracy == pos.precision


def test_class_metrics_perfect_and_wrong():
    perfect = class_metrics([POS, NEG, NEG], [POS, NEG, NEG])
    assert perfect.accuracy == 1.0
    assert all(m.f1 == 1.0 for m in perfect.per_class.values())
    wrong = class_metrics([NEG], [POS])
    assert wrong.accuracy == 0.0
    assert wrong.per_class[POS].recall == 0.0


def test_class_metrics_absent_class_is_undefined():
    report = class_metrics([POS, POS], [POS, POS])
    assert report.per_class[NEG].precision is None
    assert report.per_class[NEG].recall is None
    assert report.per_class[NEG].f1 is None


def test_class_metrics_rejects_mismatched_input():
    with pytest.raises(DataError):
        class_metrics([POS], [POS, NEG])
    with pytest.raises(DataError):
        class_metrics([], [])


def test_majority_ground_truth_levels():
    m = matrix("IIIIIIINN")
    for level in (5, 6, 7):
        assert majority_ground_truth(m, level).positives == ("s0",)
    assert majority_ground_truth(m, 8).excluded == ("s0",)


def test_not_sure_winner_and_split_votes_are_excluded():
    m = matrix("UUUUUUIIN", "IIIINNNNU")
    assert majority_ground_truth(m, 6).excluded == ("s0", "s1")
    assert majority_ground_truth(m, 5).excluded == ("s0", "s1")


def test_agreement_level_must_be_strict_majority():
    m = matrix("IIIIIIIII")
    with pytest.raises(UsageError):
        majority_ground_truth(m, 4)
    with pytest.raises(UsageError):
        majority_ground_truth(m, 10)
    assert sorted(agreement_levels(m)) == [5, 6, 7, 8, 9]


def test_raising_agreement_never_adds_samples():
    rng = random.Random(4)
    rows = ["".join(rng.choice("IINNU") for _ in range(9)) for _ in range(60)]
    levels = agreement_levels(matrix(*rows))
    for x in range(5, 9):
        assert set(levels[x + 1].positives) <= set(levels[x].positives)
        assert set(levels[x + 1].negatives) <= set(levels[x].negatives)


def test_evaluate_predictions_uses_only_predicted_samples():
    truth = majority_ground_truth(matrix("III", "NNN", "NNI"), 2)
    report = evaluate_predictions({"s0": POS, "s1": NEG}, truth)
    assert report.total == 2
    assert report.accuracy == 1.0
    assert evaluate_predictions({"other": POS}, truth) is None


def test_hypothesis_agreement_compares_sample_labels():
    samples = [
        sample({"a": 2, "b": 1}, POS, table_id="t1"),
        sample({"a": 1, "b": 1}, NEG, table_id="t2"),
    ]
    m = AssessmentMatrix(
        sample_ids=("t1::country", "t2::country"),
        votes=((Vote.INTERESTING,) * 3, (Vote.INTERESTING, Vote.INTERESTING, Vote.NON_INTERESTING)),
    )
    report = hypothesis_agreement(samples, m, 2)
    assert report.accuracy == 0.5
    assert report.per_class[POS].precision == 1.0
    assert report.per_class[POS].recall == 0.5


def test_fleiss_kappa_unanimous():
    assert fleiss_kappa(matrix("III", "III")).kappa == 1.0
    assert fleiss_kappa(matrix("II", "NN")).kappa == 1.0


def test_fleiss_kappa_small_disagreement():
    result = fleiss_kappa(matrix("II", "IN"))
    assert result.observed == pytest.approx(0.5)
    assert result.expected == pytest.approx(0.625)
    assert result.kappa == pytest.approx(-1 / 3, abs=1e-12)
    low, high = result.confidence_interval
    assert low <= result.kappa <= high


def test_fleiss_kappa_ignores_sample_and_rater_order():
    rows = ["IINU", "NNNI", "IIII", "UNIN", "NNNN"]
    base = fleiss_kappa(matrix(*rows)).kappa
    assert fleiss_kappa(matrix(*reversed(rows))).kappa == pytest.approx(base, abs=1e-12)
    assert fleiss_kappa(matrix(*(row[::-1] for row in rows))).kappa == pytest.approx(base, abs=1e-12)


def test_fleiss_kappa_ignores_category_names():
    rows = ["IINU", "NNNI", "IIII", "UNIN", "NNNN", "IUUN"]
    base = fleiss_kappa(matrix(*rows))
    for table in (str.maketrans("IN", "NI"), str.maketrans("INU", "UIN")):
        relabeled = fleiss_kappa(matrix(*(row.translate(table) for row in rows)))
        assert relabeled.kappa == pytest.approx(base.kappa, abs=1e-12)
        assert relabeled.expected == pytest.approx(base.expected, abs=1e-12)


def test_fleiss_kappa_needs_two_samples_and_raters():
    with pytest.raises(DataError):
        fleiss_kappa(matrix("III"))
    with pytest.raises(DataError):
        fleiss_kappa(matrix("I", "N"))


def test_poisson_fit_constant_counts():
    assert poisson_fit([2, 2, 2]).lam == 2.0
    assert poisson_fit([5]).lam == 5.0


def test_poisson_fit_recovers_rate():
    draws = np.random.default_rng(0).poisson(1.9, size=10_000)
    fit = poisson_fit(draws.tolist())
    assert 1.8 <= fit.lam <= 2.0
    assert fit.relative_sse < 0.01


def test_poisson_fit_rejects_bad_counts():
    with pytest.raises(DataError):
        poisson_fit([])
    with pytest.raises(DataError):
        poisson_fit([1, -1])


def test_corpus_statistics_histogram():
    corpus = [
        record("a", "Rivers", {"Country": ["x"], "Basin": ["y"]}),
        record("b", "Lakes", {"Country": ["x"]}),
        record("c", "Bridges", {"Country": ["x"]}),
    ]
    stats = corpus_statistics(corpus)
    assert stats.tables == 3
    assert stats.histogram == {1: 2, 2: 1}
    assert stats.fit.lam == pytest.approx(4 / 3)


def write_csv(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_read_assessments(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["sample_id,e1,e2,e3", "t1::country,I,i,N", "t2::city,U,N,N"])
    m = read_assessments(path)
    assert m.sample_ids == ("t1::country", "t2::city")
    assert m.evaluators == 3
    assert m.counts().tolist() == [[2, 1, 0], [0, 2, 1]]


@pytest.mark.parametrize(
    "lines, message",
    [
        (["sample_id,e1,e2", "a,I,X"], "invalid vote"),
        (["sample_id,e1,e2", "a,I"], "expected 3 columns"),
        (["sample_id,e1,e2", "a,I,N", "a,N,N"], "duplicate sample ids"),
        (["sample_id,e1,e2"], "no assessment rows"),
    ],
)
def test_read_assessments_errors(tmp_path, lines, message):
    path = write_csv(tmp_path / "a.csv", lines)
    with pytest.raises(SchemaError, match=message):
        read_assessments(path)


def test_render_report_marks_undefined_cells():
    reports = {9: class_metrics([POS, POS], [POS, POS]), 8: None}
    kappa = fleiss_kappa(matrix("II", "IN"))
    text = render_report(reports, 9, kappa=kappa, title="model")
    lines = text.splitlines()
    assert lines[0] == "model"
    assert lines[3].startswith("9/9")
    assert "n/a" in lines[3]
    assert "100.00" in lines[3]
    assert lines[4].startswith("8/9")
    assert "Fleiss kappa = -0.333" in text


def test_report_to_json():
    reports = {9: class_metrics([POS, NEG], [POS, POS]), 8: None}
    payload = json.loads(report_to_json(reports, 9, extra={"model": "final_model.json"}))
    assert list(payload["levels"]) == ["9/9", "8/9"]
    assert payload["levels"]["8/9"] is None
    assert payload["levels"]["9/9"]["accuracy"] == 0.5
    assert payload["levels"]["9/9"]["confusion"]["interesting->non_interesting"] == 1
    assert payload["kappa"] is None
    assert payload["model"] == "final_model.json"
