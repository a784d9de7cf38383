import json
import random

import pytest

from CatMiner.errors import DataError, SchemaError, UsageError
from CatMiner.ingest import load_corpus
from CatMiner.models import Label, SampleSet
from CatMiner.sampler import (
    brute_force_labels,
    build_cons_map,
    export_sparse,
    generate_samples,
    holdout_split,
    make_balanced_subfiles,
    read_samples,
    verify_against_brute_force,
    write_samples,
)
from factories import record, sample


def buildings_fixture():
    parent = record(
        "tallest-buildings",
        "Buildings",
        {
            "City": ["Dubai", "Shanghai", "Mecca", "New York City"],
            "Country": ["United Arab Emirates", "China", "Saudi Arabia", "United States"],
        },
    )
    child = record(
        "tallest-buildings-us",
        "Tallest Buildings",
        {"City": ["New York City", "Chicago", "Chicago"], "State": ["New York", "Illinois", "Illinois"]},
        constraints=["united states"],
    )
    return [parent, child]


def labels_of(samples: SampleSet):
    return {(s.table_id, s.attribute): s.label for s in samples.samples}


def test_cons_map_groups_subjects_per_constraint():
    corpus = [
        record("a", "Tallest Buildings", {"City": ["x"]}, ["united states"]),
        record("b", "Universities", {"City": ["y"]}, ["united states"]),
        record("c", "Universities", {"City": ["z"]}, ["united states"]),
    ]
    cons_map = build_cons_map(corpus)
    assert len(cons_map) == 1
    assert cons_map.subjects("United States") == {"tallest buildings", "universities"}
    assert "united states" in cons_map


def test_cons_map_empty_without_constraints():
    assert len(build_cons_map([record("a", "Rivers", {"Country": ["x"]})])) == 0


def test_parent_child_labels():
    samples = generate_samples(buildings_fixture())
    labels = labels_of(samples)
    assert labels[("tallest-buildings", "country")] is Label.INTERESTING
    assert labels[("tallest-buildings", "city")] is Label.NON_INTERESTING
    assert labels[("tallest-buildings-us", "city")] is Label.NON_INTERESTING
    assert labels[("tallest-buildings-us", "state")] is Label.NON_INTERESTING
    witness = next(s.witness for s in samples.interesting)
    assert witness == "united states@tallest-buildings-us"
    assert samples.provenance["tables"] == 2


def test_single_unconstrained_table_is_all_negative():
    samples = generate_samples([buildings_fixture()[0]])
    assert not samples.interesting
    assert len(samples.non_interesting) == 2


def test_table_never_witnesses_itself():
    table = record("self", "Rivers", {"Country": ["France", "Spain"]}, ["france"])
    samples = generate_samples([table])
    assert labels_of(samples) == {("self", "country"): Label.NON_INTERESTING}


def test_subject_must_match_for_witness():
    parent = record("p", "Rivers", {"Country": ["France", "Spain"]})
    child = record("c", "Lakes", {"City": ["Annecy"]}, ["france"])
    assert labels_of(generate_samples([parent, child]))[("p", "country")] is Label.NON_INTERESTING


def test_skips_tables_without_subject_and_empty_columns():
    warnings = []
    corpus = [
        record("a", "", {"Country": ["x"]}),
        record("b", "Rivers", {"Country": ["", " "], "Basin": ["Rhine"]}),
    ]
    samples = generate_samples(corpus, warnings=warnings)
    assert [s.attribute for s in samples.samples] == ["basin"]
    assert {w.table_id for w in warnings} == {"a", "b"}
    assert samples.provenance["skipped_tables"] == 1


def test_dedupe_keeps_first_table_per_pair():
    corpus = [
        record("a", "Rivers", {"Country": ["France", "Spain"]}),
        record("b", "rivers", {"Country": ["Peru", "Peru"]}),
    ]
    assert len(generate_samples(corpus)) == 2
    deduped = generate_samples(corpus, dedupe=True)
    assert [s.table_id for s in deduped.samples] == ["a"]


def test_sample_count_matches_categorical_columns(synthetic_corpus_file, units):
    path, expected = synthetic_corpus_file
    corpus = load_corpus(path, "json", units)
    samples = generate_samples(corpus)
    assert len(samples) == sum(len(t.categorical_columns) for t in corpus) == 40
    assert labels_of(samples) == expected
    assert len(samples.interesting) == 10


def test_labels_do_not_depend_on_corpus_order(synthetic_corpus_file, units):
    path, _ = synthetic_corpus_file
    corpus = load_corpus(path, "json", units)
    shuffled = list(corpus)
    random.Random(5).shuffle(shuffled)
    assert labels_of(generate_samples(corpus)) == labels_of(generate_samples(shuffled))


SUBJECTS = ["rivers", "river", "lakes", "tallest lakes", "bridges", "castles"]
VALUES = ["france", "spain", "peru", "chile", "japan", "oslo", "lima", "delta"]


def random_corpus(rng: random.Random):
    corpus = []
    for index in range(rng.randint(1, 50)):
        rows = rng.randint(1, 6)
        columns = {
            f"col{c}": [rng.choice(VALUES + [""]) for _ in range(rows)] for c in range(rng.randint(1, 3))
        }
        constraints = rng.sample(VALUES, rng.randint(0, 2))
        subject = rng.choice(SUBJECTS + [""])
        corpus.append(record(f"t{index:02d}", subject, columns, constraints))
    return corpus


def test_two_pass_labels_match_all_pairs_scan():
    rng = random.Random(11)
    for _ in range(100):
        corpus = random_corpus(rng)
        samples = generate_samples(corpus)
        verify_against_brute_force(corpus, samples)
        assert {(s.table_id, s.attribute) for s in samples.samples} == set(brute_force_labels(corpus))


def test_verify_detects_disagreement():
    corpus = buildings_fixture()
    samples = generate_samples(corpus)
    flipped = SampleSet.from_samples(
        [
            sample({"a": 1}, Label.NON_INTERESTING, table_id=s.table_id, attribute=s.attribute, subject=s.subject)
            for s in samples.samples
        ]
    )
    with pytest.raises(DataError, match="disagree"):
        verify_against_brute_force(corpus, flipped)


def make_set(positives: int, negatives: int) -> SampleSet:
    return SampleSet.from_samples(
        [sample({"a": 2, "b": 1}, Label.INTERESTING, table_id=f"p{i:03d}") for i in range(positives)]
        + [sample({"a": 1, "b": 1}, Label.NON_INTERESTING, table_id=f"n{i:04d}") for i in range(negatives)]
    )


def test_holdout_split_is_stratified_and_seeded():
    samples = make_set(158, 2519)
    split = holdout_split(samples, 0.25, seed=7)
    assert len(split.test_pos) == 40
    assert len(split.test_neg) == 630
    assert len(split.train.interesting) == 118
    assert len(split.train.non_interesting) == 1889
    again = holdout_split(samples, 0.25, seed=7)
    assert again == split
    other = holdout_split(samples, 0.25, seed=8)
    assert other.test_pos != split.test_pos


def test_holdout_split_small_classes():
    split = holdout_split(make_set(4, 4), 0.5, seed=1)
    assert (len(split.test_pos), len(split.test_neg)) == (2, 2)
    with pytest.raises(DataError, match="class too small"):
        holdout_split(make_set(1, 4), 0.5, seed=1)
    with pytest.raises(UsageError):
        holdout_split(make_set(4, 4), 1.0, seed=1)


def test_balanced_subfiles_partition_negatives():
    train = make_set(118, 1889)
    subfiles = make_balanced_subfiles(train, 10)
    assert len(subfiles) == 10
    sizes = [len(s.non_interesting) for s in subfiles]
    assert max(sizes) - min(sizes) <= 1
    assert all(s.interesting == train.interesting for s in subfiles)
    chunks = [n for s in subfiles for n in s.non_interesting]
    assert sorted(n.table_id for n in chunks) == sorted(n.table_id for n in train.non_interesting)
    assert len(subfiles[0]) in (306, 307)


def test_single_subfile_is_whole_training_set():
    train = make_set(3, 5)
    (only,) = make_balanced_subfiles(train, 1)
    assert only.samples == train.samples


def test_too_many_subfiles():
    with pytest.raises(DataError):
        make_balanced_subfiles(make_set(3, 2), 3)


def test_sample_file_round_trip_and_schema_errors(tmp_path):
    samples = list(generate_samples(buildings_fixture()).samples)
    path = tmp_path / "samples.jsonl"
    write_samples(samples, path)
    assert [s.to_dict() for s in read_samples(path)] == [s.to_dict() for s in samples]

    path.write_text(json.dumps({"subject": "x", "attribute": "y", "label": "interesting", "features": [0.1]}) + "\n")
    with pytest.raises(SchemaError, match=":1:"):
        read_samples(path)


def test_sparse_export(tmp_path):
    positive = sample({"a": 1, "b": 1}, Label.INTERESTING)
    path = tmp_path / "samples.svm"
    export_sparse([positive], path, mask=0b1000001)
    line = path.read_text().strip()
    assert line.startswith("+1 1:1.0 7:")
