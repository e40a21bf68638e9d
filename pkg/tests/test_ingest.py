import gzip
import io
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedcorr.errors import InvalidInput, ParseError
from fedcorr.ingest import (
    LabeledDataset,
    load_mnist,
    parse_idx,
    parse_libsvm,
    serialize_idx,
    serialize_libsvm,
    synth_linreg,
    synth_logreg,
    to_pm1,
)

FIXTURES = Path(__file__).parent / "fixtures"

MALFORMED_LIBSVM = {
    "bad_value.libsvm": 2,
    "descending.libsvm": 2,
    "zero_index.libsvm": 1,
    "missing_colon.libsvm": 3,
}
MALFORMED_IDX = ["truncated.idx1-ubyte", "bad_magic.idx", "short_header.idx3-ubyte"]


# -- LIBSVM --------------------------------------------------------------------


def test_libsvm_hand_example():
    ds = parse_libsvm("+1 1:0.5 3:2.0\n", dim=3)
    np.testing.assert_array_equal(ds.features, [[0.5, 0.0, 2.0]])
    assert ds.labels.tolist() == [1]


def test_libsvm_empty_feature_list():
    ds = parse_libsvm("-1\n", dim=4)
    np.testing.assert_array_equal(ds.features, np.zeros((1, 4)))
    assert ds.labels.tolist() == [-1]


def test_libsvm_fixture():
    with open(FIXTURES / "small.libsvm") as fh:
        ds = parse_libsvm(fh)
    np.testing.assert_array_equal(ds.features, [[0.5, 0, 2.0], [0, 0, 0], [0, -1.25, 0]])
    assert ds.labels.tolist() == [1, -1, 1]


def test_w8a_shaped_fixture_has_declared_width():
    with open(FIXTURES / "w8a_sample.libsvm") as fh:
        ds = parse_libsvm(fh, dim=300)
    assert ds.features.shape == (20, 300)
    assert set(np.unique(ds.features).tolist()) <= {0.0, 1.0}
    assert set(ds.labels.tolist()) <= {-1, 1}


@pytest.mark.parametrize("name", ["small.libsvm", "w8a_sample.libsvm"])
def test_libsvm_fixture_round_trip(name):
    text = (FIXTURES / name).read_text()
    ds = parse_libsvm(text)
    again = parse_libsvm(serialize_libsvm(ds), dim=ds.feature_dim)
    np.testing.assert_array_equal(again.features, ds.features)
    np.testing.assert_array_equal(again.labels, ds.labels)


@pytest.mark.parametrize("name,line", sorted(MALFORMED_LIBSVM.items()))
def test_libsvm_malformed_fixtures(name, line):
    with pytest.raises(ParseError) as info:
        parse_libsvm((FIXTURES / name).read_text())
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_libsvm_index_beyond_dim():
    with pytest.raises(ParseError):
        parse_libsvm("+1 4:1\n", dim=3)


def test_libsvm_bad_label():
    with pytest.raises(ParseError):
        parse_libsvm("yes 1:1\n")


sparse_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 8)),
    elements=st.sampled_from([0.0, 0.0, 1.0, -2.5, 1e-7, 3.25e5]),
)


@given(sparse_rows, st.data())
def test_libsvm_round_trip_property(features, data):
    labels = np.array(data.draw(st.lists(st.sampled_from([-1, 1]), min_size=len(features), max_size=len(features))))
    ds = LabeledDataset(features, labels)
    again = parse_libsvm(serialize_libsvm(ds), dim=features.shape[1])
    np.testing.assert_array_equal(again.features, features)
    np.testing.assert_array_equal(again.labels, labels)


# -- IDX -----------------------------------------------------------------------


def test_idx_labels_fixture():
    raw = (FIXTURES / "labels.idx1-ubyte").read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 1])
    assert parse_idx(raw).tolist() == [7, 2]


def test_idx_image_fixture():
    with open(FIXTURES / "image.idx3-ubyte", "rb") as fh:
        img = parse_idx(fh)
    assert img.shape == (1, 2, 2) and img.dtype == np.uint8
    assert img[0].tolist() == [[0, 64], [128, 255]]


def test_idx_gzip_fixture():
    img = parse_idx((FIXTURES / "images.idx3-ubyte.gz").read_bytes())
    assert img.shape == (3, 4, 4)
    assert img.reshape(-1).tolist() == list(range(48))


@pytest.mark.parametrize("name", ["labels.idx1-ubyte", "image.idx3-ubyte"])
def test_idx_fixture_round_trip(name):
    raw = (FIXTURES / name).read_bytes()
    assert serialize_idx(parse_idx(raw)) == raw


@pytest.mark.parametrize("name", MALFORMED_IDX)
def test_idx_malformed_fixtures(name):
    with pytest.raises(ParseError):
        parse_idx((FIXTURES / name).read_bytes())


def test_idx_trailing_bytes():
    with pytest.raises(ParseError):
        parse_idx(struct.pack(">II", 0x801, 1) + bytes([1, 2]))


@given(
    st.one_of(
        arrays(np.uint8, st.integers(0, 20)),
        arrays(np.uint8, st.tuples(st.integers(0, 3), st.integers(1, 5), st.integers(1, 5))),
    )
)
def test_idx_round_trip_property(arr):
    blob = serialize_idx(arr)
    np.testing.assert_array_equal(parse_idx(blob), arr)
    np.testing.assert_array_equal(parse_idx(io.BytesIO(gzip.compress(blob))), arr)


def test_serialize_idx_rejects_other_shapes():
    with pytest.raises(InvalidInput):
        serialize_idx(np.zeros((2, 2), dtype=np.uint8))


def test_load_mnist_scales_and_resamples(tmp_path):
    imgs = np.zeros((2, 4, 4), dtype=np.uint8)
    imgs[0, :2, :2] = 255
    (tmp_path / "i").write_bytes(serialize_idx(imgs))
    (tmp_path / "l").write_bytes(serialize_idx(np.array([3, 1], dtype=np.uint8)))
    ds = load_mnist(tmp_path / "i", tmp_path / "l")
    assert ds.features.shape == (2, 16) and ds.features.max() == 1.0
    small = load_mnist(tmp_path / "i", tmp_path / "l", limit=1, side=2)
    np.testing.assert_allclose(small.features, [[1.0, 0.0, 0.0, 0.0]])
    assert small.labels.tolist() == [3]


def test_bundled_mnist_subset():
    root = Path(__file__).parent.parent / "data"
    ds = load_mnist(root / "mnist5k-images-idx3-ubyte.gz", root / "mnist5k-labels-idx1-ubyte.gz", side=16)
    assert ds.features.shape == (5000, 256)
    assert 0.0 <= ds.features.min() and ds.features.max() <= 1.0
    assert set(ds.labels.tolist()) == set(range(10))


# -- synthetic -------------------------------------------------------------------


def test_synth_is_deterministic():
    a, b = synth_linreg(30, 4, 0.1, seed=3), synth_linreg(30, 4, 0.1, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    c, d = synth_logreg(30, 4, seed=3), synth_logreg(30, 4, seed=3)
    np.testing.assert_array_equal(c.features, d.features)
    np.testing.assert_array_equal(c.groups, d.groups)


def test_single_sample_accepted():
    assert len(synth_linreg(1, 3)) == 1
    assert len(synth_logreg(1, 3)) == 1


def test_noiseless_linreg_is_recoverable():
    ds = synth_linreg(50, 5, noise=0.0, seed=1)
    r = np.hstack([ds.features, np.ones((50, 1))])
    x = np.zeros(5)
    step = 1.0 / (2.0 * np.linalg.eigvalsh(r.T @ r / 50).max())
    for _ in range(5000):
        x -= step * 2.0 * r.T @ (r @ x - ds.labels) / 50
    resid = r @ x - ds.labels
    assert resid @ resid / 50 < 1e-8
    np.testing.assert_allclose(x, ds.meta["x_true"], atol=1e-4)


def test_logreg_margin_holds():
    ds = synth_logreg(500, 6, margin=0.2, seed=4)
    scores = ds.labels * (ds.features @ ds.meta["w_true"])
    assert scores.min() >= 0.2 - 1e-12


def test_label_mapping():
    assert to_pm1([0, 1, 1]).tolist() == [-1, 1, 1]
    assert to_pm1([-1, 1]).tolist() == [-1, 1]
    with pytest.raises(InvalidInput):
        to_pm1([0, 1, 2])


def test_dataset_shape_checks():
    with pytest.raises(InvalidInput):
        LabeledDataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(InvalidInput):
        synth_linreg(0, 3)
