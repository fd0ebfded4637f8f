import numpy as np
import pytest

from qtraj import (
    Exclusion,
    InsufficientDataError,
    LevelSlopePair,
    Snippet,
    SnippetParseError,
    SnippetValidationError,
    build_dataset,
    extract_level_slope,
    parse_records,
    read_pairs_csv,
    read_snippets_csv,
    reduce_snippets,
    resample_pairs,
    write_pairs_csv,
    write_snippets_csv,
)
from qtraj.snippets import SnippetDataset


def _records(rows):
    return [{"subject_id": s, "time": t, "value": v} for s, t, v in rows]


def test_parse_records_basic():
    snippets = parse_records(_records([("A", 0, 1.0), ("A", 1, 0.9)]))
    assert len(snippets) == 1
    assert snippets[0].subject_id == "A"
    assert snippets[0].times == (0.0, 1.0)
    assert snippets[0].values == (1.0, 0.9)


def test_parse_records_sorts_by_time():
    a = parse_records(_records([("A", 0, 1.0), ("A", 1, 0.9)]))[0]
    b = parse_records(_records([("A", 1, 0.9), ("A", 0, 1.0)]))[0]
    assert a == b


def test_parse_records_duplicate_timestamp():
    with pytest.raises(SnippetValidationError, match="A"):
        parse_records(_records([("A", 0, 1.0), ("A", 0, 1.1)]))


def test_parse_records_malformed_row_names_row_number():
    records = _records([("A", 0, 1.0), ("A", 1, "oops")])
    with pytest.raises(SnippetParseError, match="row 2"):
        parse_records(records)


def test_parse_records_non_finite_rejected():
    with pytest.raises(SnippetParseError):
        parse_records(_records([("A", 0, float("nan"))]))


def test_parse_records_conflicting_groups():
    records = [
        {"subject_id": "A", "time": 0, "value": 1.0, "group": "g1"},
        {"subject_id": "A", "time": 1, "value": 0.9, "group": "g2"},
    ]
    with pytest.raises(SnippetValidationError, match="group"):
        parse_records(records)


def test_snippet_requires_increasing_times():
    with pytest.raises(SnippetValidationError):
        Snippet(subject_id="A", times=(1.0, 0.0), values=(1.0, 2.0))


def test_extract_exact_line():
    pair = extract_level_slope(Snippet("A", (0.0, 1.0, 2.0), (0.0, 1.0, 2.0)))
    assert isinstance(pair, LevelSlopePair)
    assert pair.level == 1.0
    assert pair.slope == 1.0
    assert pair.n_obs == 3
    assert pair.time_span == 2.0
    assert pair.last_level == 2.0


def test_extract_flat_line():
    pair = extract_level_slope(Snippet("A", (0.0, 1.0), (0.7, 0.7)))
    assert pair.level == 0.7
    assert pair.slope == 0.0


def test_extract_hand_checked_slope():
    # t = [0,1,2], y = [1, .5, .3]: slope = sum((t-1)(y-.6)) / sum((t-1)^2) = -.7/2
    pair = extract_level_slope(Snippet("A", (0.0, 1.0, 2.0), (1.0, 0.5, 0.3)))
    assert pair.slope == pytest.approx(-0.35, abs=1e-14)
    assert pair.level == pytest.approx(0.6, abs=1e-14)


def test_extract_exact_on_affine_data():
    rng = np.random.default_rng(7)
    for _ in range(25):
        t = np.sort(rng.uniform(0.0, 10.0, rng.integers(2, 8)))
        while np.any(np.diff(t) == 0.0):
            t = np.sort(rng.uniform(0.0, 10.0, t.size))
        a, b = rng.uniform(-5.0, 5.0, 2)
        pair = extract_level_slope(Snippet("A", tuple(t), tuple(a + b * t)))
        assert pair.slope == pytest.approx(b, rel=1e-10, abs=1e-12)
        assert pair.level == pytest.approx(a + b * t.mean(), rel=1e-10, abs=1e-12)


def test_extract_shift_moves_level_not_slope():
    t = (0.0, 0.7, 1.1, 2.4)
    y = np.array([1.0, 0.8, 0.75, 0.4])
    base = extract_level_slope(Snippet("A", t, tuple(y)))
    shifted = extract_level_slope(Snippet("A", t, tuple(y + 2.5)))
    assert shifted.slope == pytest.approx(base.slope, abs=1e-12)
    assert shifted.level == pytest.approx(base.level + 2.5, abs=1e-12)


def test_extract_permutation_invariance_via_parse():
    rows = [("A", 2.0, 0.3), ("A", 0.0, 1.0), ("A", 1.0, 0.5)]
    rng = np.random.default_rng(3)
    reference = None
    for _ in range(6):
        perm = [rows[i] for i in rng.permutation(3)]
        pair = extract_level_slope(parse_records(_records(perm))[0])
        if reference is None:
            reference = pair
        assert pair == reference


def test_extract_single_observation_excluded():
    out = extract_level_slope(Snippet("A", (1.0,), (0.5,)))
    assert isinstance(out, Exclusion)
    assert out.subject_id == "A"
    assert out.reason


def test_build_dataset_ranges_and_bookkeeping():
    pairs = [
        extract_level_slope(Snippet("A", (0.0, 1.0), (0.1, 0.3))),
        extract_level_slope(Snippet("B", (0.0, 1.0), (0.7, 0.9))),
        extract_level_slope(Snippet("C", (1.0,), (0.5,))),
    ]
    dataset = build_dataset(pairs)
    assert dataset.n == 2
    assert dataset.level_range == (0.2, 0.8)
    assert len(dataset.exclusions) == 1
    assert dataset.exclusions[0].subject_id == "C"


def test_build_dataset_needs_two_pairs():
    with pytest.raises(InsufficientDataError):
        build_dataset([extract_level_slope(Snippet("C", (1.0,), (0.5,)))])
    with pytest.raises(InsufficientDataError):
        build_dataset([extract_level_slope(Snippet("A", (0.0, 1.0), (0.1, 0.3)))])


def test_build_dataset_rejects_duplicate_subjects():
    pair = extract_level_slope(Snippet("A", (0.0, 1.0), (0.1, 0.3)))
    with pytest.raises(SnippetValidationError, match="A"):
        build_dataset([pair, pair])


def test_dataset_arrays_match_pairs():
    snippets = [
        Snippet("A", (0.0, 1.0), (0.1, 0.3)),
        Snippet("B", (0.0, 1.0), (0.9, 0.5)),
    ]
    dataset = reduce_snippets(snippets)
    assert np.array_equal(dataset.levels, [p.level for p in dataset.pairs])
    assert np.array_equal(dataset.slopes, [p.slope for p in dataset.pairs])
    assert dataset.slope_range[0] == pytest.approx(-0.4, abs=1e-14)
    assert dataset.slope_range[1] == pytest.approx(0.2, abs=1e-14)


def test_pairs_csv_round_trip(tmp_path):
    snippets = [
        Snippet("A", (0.0, 1.0, 2.0), (1.0, 0.5, 0.3), group="g1"),
        Snippet("B", (0.0, 0.3), (0.9, 0.8), group="g2"),
    ]
    dataset = reduce_snippets(snippets)
    path = tmp_path / "pairs.csv"
    write_pairs_csv(dataset, str(path))
    back = read_pairs_csv(str(path))
    assert back.pairs == dataset.pairs


def test_pairs_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("subject_id,level\nA,0.5\n")
    with pytest.raises(SnippetParseError, match="slope"):
        read_pairs_csv(str(path))


def test_snippets_csv_round_trip(tmp_path):
    snippets = [
        Snippet("A", (0.0, 1.0, 2.0), (1.0, 0.5, 0.3)),
        Snippet("B", (0.25, 0.75), (0.9, 0.8)),
    ]
    path = tmp_path / "snips.csv"
    write_snippets_csv(snippets, str(path))
    back = read_snippets_csv(str(path))
    assert back == snippets


def test_snippets_csv_group_round_trip(tmp_path):
    snippets = [
        Snippet("A", (0.0, 1.0), (1.0, 0.5), group="x"),
        Snippet("B", (0.0, 1.0), (0.9, 0.8), group="y"),
    ]
    path = tmp_path / "snips.csv"
    write_snippets_csv(snippets, str(path))
    assert read_snippets_csv(str(path)) == snippets


def test_read_snippets_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("subject_id,time\nA,0\n")
    with pytest.raises(SnippetParseError, match="value"):
        read_snippets_csv(str(path))


def test_resample_pairs_seeded_and_membership():
    snippets = [Snippet(f"s{i}", (0.0, 1.0), (float(i), float(i) + 0.1))
                for i in range(10)]
    dataset = reduce_snippets(snippets)
    one = resample_pairs(dataset, np.random.default_rng(5))
    two = resample_pairs(dataset, np.random.default_rng(5))
    assert one.pairs == two.pairs
    assert one.n == dataset.n
    original = set(dataset.pairs)
    assert all(p in original for p in one.pairs)


def test_dataset_requires_a_pair():
    with pytest.raises(InsufficientDataError):
        SnippetDataset(pairs=())
