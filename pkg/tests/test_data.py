import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from sofclr.data import (
    AugmentOp,
    DataError,
    Dataset,
    SyntheticConfig,
    augment,
    gen_synthetic,
    load_csv,
    parse_augment,
    save_csv,
    split_annotate,
)


def test_generation_is_deterministic():
    cfg = SyntheticConfig(n=200, seed=7)
    assert gen_synthetic(cfg) == gen_synthetic(cfg)
    assert gen_synthetic(cfg) != gen_synthetic(SyntheticConfig(n=200, seed=8))


def test_group_proportions():
    ds = gen_synthetic(SyntheticConfig(n=10000, group_props=(0.5, 0.5), seed=1))
    assert abs(np.mean(ds.attrs == 0) - 0.5) <= 0.02


def test_no_bias_means_no_label_group_correlation():
    ds = gen_synthetic(SyntheticConfig(n=10000, bias_strength=0.0, seed=2))
    assert abs(np.corrcoef(ds.labels, ds.attrs)[0, 1]) < 0.05


def test_full_bias_makes_group_linearly_recoverable():
    ds = gen_synthetic(SyntheticConfig(n=2000, bias_strength=1.0, seed=3))
    clf = LogisticRegression(C=1e4, max_iter=2000).fit(ds.features, ds.attrs)
    assert clf.score(ds.features, ds.attrs) == 1.0


def test_multi_group_generation():
    ds = gen_synthetic(SyntheticConfig(n=3000, K=3, group_props=(0.5, 0.3, 0.2), seed=4))
    assert ds.K == 3 and set(np.unique(ds.attrs)) == {0, 1, 2}


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(group_props=(0.5, 0.6))
    with pytest.raises(ValueError):
        SyntheticConfig(bias_strength=1.5)
    with pytest.raises(ValueError):
        SyntheticConfig(K=3)


def test_augmentation_edge_cases():
    x = np.array([1.0, -2.0, 3.0])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(augment(x, AugmentOp("gaussian_noise", (0.0,)), rng), x)
    np.testing.assert_array_equal(augment(x, AugmentOp("coordinate_mask", (1.0,)), rng), np.zeros(3))
    np.testing.assert_array_equal(augment(x, AugmentOp(), rng), x)
    with pytest.raises(ValueError):
        augment(x, AugmentOp("gaussian_noise", (0.1,)))


def test_augmentation_is_reproducible():
    x = np.arange(6.0).reshape(2, 3)
    op = AugmentOp("random_scale", (0.5, 1.5))
    a = augment(x, op, np.random.default_rng(9))
    b = augment(x, op, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    assert a[0, 1] / a[0, 2] == pytest.approx(1 / 2)


def test_augment_parsing_round_trip():
    for text in ("identity", "gaussian_noise:0.1", "coordinate_mask:0.25", "random_scale:0.5,2.0"):
        op = parse_augment(text)
        assert parse_augment(str(op)) == op
    with pytest.raises(ValueError):
        parse_augment("blur:3")
    with pytest.raises(ValueError):
        parse_augment("coordinate_mask:1.5")


@given(st.sampled_from(["identity", "gaussian_noise:0.3", "coordinate_mask:0.5", "random_scale:0.5,2"]),
       st.integers(1, 5), st.integers(1, 6))
def test_augment_preserves_shape(text, rows, cols):
    x = np.ones((rows, cols))
    assert augment(x, parse_augment(text), np.random.default_rng(0)).shape == (rows, cols)


def test_split_annotate_counts():
    ds = gen_synthetic(SyntheticConfig(n=1000, seed=0))
    part = split_annotate(ds, 0.05, 3)
    assert part.annotated.size == 50
    assert np.unique(part.annotated).size == 50 and part.annotated.max() < 1000
    assert split_annotate(ds, 1.0, 3).annotated.size == 1000
    assert split_annotate(ds, 0.05, 3) == part
    with pytest.raises(DataError):
        split_annotate(ds, 0.0009, 3)
    with pytest.raises(ValueError):
        split_annotate(ds, 0.0, 3)


def test_csv_round_trip(tmp_path):
    ds = split_annotate(gen_synthetic(SyntheticConfig(n=50, seed=5)), 0.2, 5)
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert back == ds
    assert back.attr(int(np.flatnonzero(~ds.attr_mask)[0])) is None


def test_missing_cells_are_absent_not_zero(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("id,x0,a,y\n0,1.5,,1\n1,2.5,1,\n")
    ds = load_csv(path)
    assert ds.attr(0) is None and ds.attr(1) == 1
    assert ds.label(0) == 1 and ds.label(1) is None


def test_csv_errors_name_the_line(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("id,feat,a,y\n0,1,0,0\n")
    with pytest.raises(DataError, match="line 1"):
        load_csv(bad_header)
    bad_row = tmp_path / "r.csv"
    bad_row.write_text("id,x0,a,y\n0,1,0,0\n1,oops,0,0\n")
    with pytest.raises(DataError, match="line 3"):
        load_csv(bad_row)
    short = tmp_path / "s.csv"
    short.write_text("id,x0,a,y\n0,1,0\n")
    with pytest.raises(DataError, match="line 2"):
        load_csv(short)
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset.from_arrays([[np.nan]], [0], [0])
    with pytest.raises(DataError):
        Dataset.from_arrays([[1.0]], [0], [2])
    ds = Dataset.from_arrays(np.zeros((3, 2)), [None, 1, 0], None)
    assert ds.annotated.tolist() == [1, 2] and ds.label(0) is None
