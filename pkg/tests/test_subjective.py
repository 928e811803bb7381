import numpy as np
import pytest

from sifid.errors import (
    DuplicateRating,
    NoRatingsForImage,
    ParseError,
    ScoreOutOfRange,
    TooFewRatings,
    ZeroVariance,
)
from sifid.subjective import (
    NORMALIZE_MODES,
    NormalizedTable,
    ScoreTable,
    aggregate,
    ingest_csv,
    normalize,
    write_aggregate_csv,
)


def _table(raw, critics=None, images=None):
    raw = np.asarray(raw, dtype=np.float64)
    critics = critics or tuple(f"c{i}" for i in range(raw.shape[0]))
    images = images or tuple(f"img{j}" for j in range(raw.shape[1]))
    return ScoreTable(critics=tuple(critics), images=tuple(images), raw=raw)


def test_score_table_validation():
    t = _table([[10.0, 20.0], [30.0, 40.0]])
    assert t.n_critics == 2 and t.n_images == 2
    with pytest.raises(ScoreOutOfRange):
        _table([[10.0, 101.0]])
    with pytest.raises(ScoreOutOfRange):
        _table([[-1.0, 50.0]])
    with pytest.raises(ParseError):
        ScoreTable(critics=("a",), images=("x", "y"), raw=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        t.raw[0, 0] = 5.0


def test_per_critic_zscore_properties():
    g = np.random.default_rng(0)
    raw = g.uniform(0.0, 100.0, (6, 9))
    norm = normalize(_table(raw), "per_critic")
    assert norm.mode == "per_critic"
    for i in range(6):
        row = norm.values[i]
        assert row.mean() == pytest.approx(0.0, abs=1e-12)
        assert np.std(row, ddof=1) == pytest.approx(1.0, abs=1e-12)
    # z-scoring is monotone within a critic's row: order is preserved
    for i in range(6):
        np.testing.assert_array_equal(np.argsort(raw[i]), np.argsort(norm.values[i]))


def test_per_critic_offset_and_scale_invariance():
    base = np.array([[20.0, 40.0, 60.0, 80.0]])
    harsh = base * 0.5
    lenient = base * 0.5 + 10.0
    t = _table(np.vstack([base, harsh, lenient]))
    norm = normalize(t, "per_critic")
    np.testing.assert_allclose(norm.values[0], norm.values[1], atol=1e-12)
    np.testing.assert_allclose(norm.values[0], norm.values[2], atol=1e-12)
    agg = aggregate(norm)
    values = [s.value for s in agg]
    assert values == sorted(values)
    assert all(s.n_raters == 3 for s in agg)


def test_per_critic_handles_missing_ratings():
    raw = np.array(
        [
            [10.0, 50.0, 90.0, np.nan],
            [20.0, 60.0, np.nan, 80.0],
            [np.nan, 40.0, 70.0, 90.0],
        ]
    )
    norm = normalize(_table(raw), "per_critic")
    assert np.isnan(norm.values[0, 3]) and np.isnan(norm.values[1, 2])
    agg = aggregate(norm)
    assert [s.n_raters for s in agg] == [2, 3, 2, 2]


def test_normalize_errors():
    with pytest.raises(TooFewRatings):
        normalize(_table([[50.0, 60.0]]))
    with pytest.raises(ParseError):
        normalize(_table([[1.0, 2.0], [3.0, 4.0]]), "per_rater")
    constant = np.array([[50.0, 50.0, 50.0], [10.0, 20.0, 30.0]])
    with pytest.raises(ZeroVariance):
        normalize(_table(constant), "per_critic")
    sparse = np.array([[10.0, np.nan, np.nan], [20.0, 30.0, 40.0]])
    with pytest.raises(TooFewRatings):
        normalize(_table(sparse), "per_critic")


def test_per_image_literal_aggregate_is_exactly_zero_two_critics():
    # with two critics each image column z-scores to +/- the same magnitude,
    # so the aggregate mean is exactly 0.0 in floating point
    raw = np.array([[10.0, 80.0, 45.0], [60.0, 20.0, 95.0]])
    norm = normalize(_table(raw), "per_image_literal")
    for s in aggregate(norm):
        assert s.value == 0.0


def test_per_image_literal_aggregate_is_zero_generally():
    g = np.random.default_rng(1)
    raw = g.uniform(0.0, 100.0, (14, 160))
    norm = normalize(_table(raw), "per_image_literal")
    for s in aggregate(norm):
        assert abs(s.value) < 1e-12
    assert NORMALIZE_MODES == ("per_critic", "per_image_literal")


def test_aggregate_no_ratings_column():
    values = np.array([[0.5, np.nan], [-0.5, np.nan]])
    norm = NormalizedTable(
        critics=("a", "b"), images=("x", "y"), values=values, mode="per_critic"
    )
    with pytest.raises(NoRatingsForImage):
        aggregate(norm)


def test_ingest_csv_round_trip(tmp_path):
    p = tmp_path / "ratings.csv"
    p.write_text(
        "critic_id,image_id,score\n"
        "alice,img_b,70\n"
        "alice,img_a,30\n"
        "bob,img_a,40\n"
        "bob,img_b,90\n"
    )
    t = ingest_csv(p)
    assert t.critics == ("alice", "bob")
    assert t.images == ("img_b", "img_a")
    np.testing.assert_array_equal(t.raw, [[70.0, 30.0], [90.0, 40.0]])

    agg = aggregate(normalize(t))
    out = tmp_path / "agg.csv"
    write_aggregate_csv(agg, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "image_id,subjective_score,n_raters"
    assert len(lines) == 3
    parsed = {row.split(",")[0]: row.split(",") for row in lines[1:]}
    assert float(parsed["img_a"][1]) == pytest.approx(-1.0 / np.sqrt(2.0))
    assert parsed["img_a"][2] == "2"


def test_ingest_single_critic_row_table(tmp_path):
    p = tmp_path / "one.csv"
    rows = "".join(f"solo,img{j:02d},{10 * j}\n" for j in range(10))
    p.write_text("critic_id,image_id,score\n" + rows)
    t = ingest_csv(p)
    assert t.n_critics == 1 and t.n_images == 10
    with pytest.raises(TooFewRatings):
        normalize(t)


def test_ingest_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("critic,image,points\nalice,img_a,50\n")
    with pytest.raises(ParseError):
        ingest_csv(p)
    p.write_text("critic_id,image_id,score\nalice,img_a,50\nalice,img_a,60\n")
    with pytest.raises(DuplicateRating):
        ingest_csv(p)
    p.write_text("critic_id,image_id,score\nalice,img_a,150\n")
    with pytest.raises(ScoreOutOfRange):
        ingest_csv(p)
    p.write_text("critic_id,image_id,score\nalice,img_a,lots\n")
    with pytest.raises(ParseError):
        ingest_csv(p)
    p.write_text("critic_id,image_id,score\n,img_a,50\n")
    with pytest.raises(ParseError):
        ingest_csv(p)
    p.write_text("critic_id,image_id,score\n")
    with pytest.raises(ParseError):
        ingest_csv(p)


def test_critic_permutation_does_not_change_aggregate(tmp_path):
    g = np.random.default_rng(2)
    raw = g.uniform(0.0, 100.0, (5, 7))
    t = _table(raw)
    agg = {s.image_id: s.value for s in aggregate(normalize(t))}
    perm = [3, 1, 4, 0, 2]
    t2 = _table(raw[perm], critics=tuple(f"c{i}" for i in perm))
    agg2 = {s.image_id: s.value for s in aggregate(normalize(t2))}
    for image_id, value in agg.items():
        assert agg2[image_id] == pytest.approx(value, abs=1e-12)
