import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvweak.core_data import (
    DatasetIndex,
    IndexEntry,
    MultiViewSequence,
    decode_tensor,
    derive_action_bag,
    encode_tensor,
    read_sequence,
    read_tensor,
    split_dataset,
    write_sequence,
    write_tensor,
)
from mvweak.errors import FormatError, ShapeError, ValidationError


def column_or(labels):
    labels = np.asarray(labels)
    return np.array([int(any(labels[t, c] for t in range(labels.shape[0]))) for c in range(labels.shape[1])])


def test_bag_all_zero():
    assert derive_action_bag([[0, 0], [0, 0]]).bag.tolist() == [0, 0]


def test_bag_existence_rule():
    assert derive_action_bag([[1, 0], [0, 0], [1, 1]]).bag.tolist() == [1, 1]


def test_bag_random_matches_or():
    labels = np.random.default_rng(3).integers(0, 2, size=(5, 3))
    np.testing.assert_array_equal(derive_action_bag(labels).bag, column_or(labels))


def test_bag_rejects_non_binary_with_location():
    with pytest.raises(ValidationError, match=r"\(1, 0\)"):
        derive_action_bag([[0, 1], [2, 0]])


@pytest.mark.parametrize("T,C", [(t, c) for t in (1, 2, 3) for c in (1, 2, 3)])
def test_bag_exhaustive(T, C):
    for bits in itertools.product((0, 1), repeat=T * C):
        labels = np.array(bits).reshape(T, C)
        np.testing.assert_array_equal(derive_action_bag(labels).bag, column_or(labels))


@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_bag_monotone(T, C, data):
    labels = np.array(data.draw(st.lists(st.integers(0, 1), min_size=T * C, max_size=T * C))).reshape(T, C)
    t, c = data.draw(st.integers(0, T - 1)), data.draw(st.integers(0, C - 1))
    before = derive_action_bag(labels).bag
    labels[t, c] = 1
    after = derive_action_bag(labels).bag
    assert np.all(after >= before)


def test_tensor_roundtrip_zeros(tmp_path):
    write_tensor(tmp_path / "z.mvt", np.zeros((2, 3)))
    out = read_tensor(tmp_path / "z.mvt")
    assert out.shape == (2, 3) and out.dtype == np.float32 and not out.any()


def test_tensor_layout_bytes():
    buf = encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert buf[:4] == b"MVT1"
    assert buf[4] == 2
    assert buf[5:13] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert buf[13:] == np.array([1.0, 2.0], dtype="<f4").tobytes()


def test_tensor_bad_magic(tmp_path):
    (tmp_path / "bad.mvt").write_bytes(b"XXXX" + encode_tensor(np.zeros(2))[4:])
    with pytest.raises(FormatError, match="offset 0"):
        read_tensor(tmp_path / "bad.mvt")


def test_tensor_truncated():
    buf = encode_tensor(np.ones((3, 3)))
    with pytest.raises(FormatError, match="truncated"):
        decode_tensor(buf[:-5])
    with pytest.raises(FormatError, match="truncated"):
        decode_tensor(buf[:7])


def test_tensor_dimension_overflow():
    buf = b"MVT1" + bytes([5]) + (2**32 - 1).to_bytes(4, "little") * 5
    with pytest.raises(FormatError, match="overflow"):
        decode_tensor(buf)


def test_tensor_rank_limit():
    with pytest.raises(ShapeError):
        encode_tensor(np.zeros((1,) * 6))


def test_tensor_large_block_bit_identical(tmp_path):
    block = np.random.default_rng(0).random((4, 62, 64, 64, 3), dtype=np.float32)
    write_tensor(tmp_path / "x.mvt", block)
    assert read_tensor(tmp_path / "x.mvt").tobytes() == block.tobytes()


def test_tensor_roundtrip_many_random_ranks():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        rank = int(rng.integers(0, 6))
        shape = tuple(int(n) for n in rng.integers(1, 4, size=rank))
        x = rng.standard_normal(shape).astype(np.float32)
        y = decode_tensor(encode_tensor(x))
        assert y.shape == x.shape and y.tobytes() == x.tobytes()


def test_sequence_invariants():
    with pytest.raises(ShapeError):
        MultiViewSequence([np.zeros((2, 8, 8, 3)), np.zeros((3, 8, 8, 3))])
    with pytest.raises(ValidationError):
        MultiViewSequence(np.full((1, 1, 4, 4, 3), 1.5))


def test_sequence_directory_roundtrip(tmp_path):
    views = np.random.default_rng(0).random((2, 3, 8, 8, 3), dtype=np.float32)
    seq = MultiViewSequence(views, "abc", 2.5, ["a", "b"])
    labels = np.array([[0, 1], [0, 0], [0, 1]])
    write_sequence(tmp_path / "abc", seq, derive_action_bag(labels), labels)
    meta = json.loads((tmp_path / "abc" / "meta.json").read_text())
    assert meta["action_bag"] == [0, 1] and meta["num_views"] == 2 and meta["num_frames"] == 3
    rec = read_sequence(tmp_path / "abc")
    assert rec.sequence.views.tobytes() == views.tobytes()
    np.testing.assert_array_equal(rec.frame_labels.labels, labels)


def _index(n):
    return DatasetIndex([IndexEntry(f"s{i:03d}", f"s{i:03d}") for i in range(n)])


def test_split_two_sequences():
    out = split_dataset(_index(2), 0.5, 7)
    assert sorted(out.splits.values()) == ["test", "train"]


def test_split_deterministic_and_disjoint():
    a, b = split_dataset(_index(30), 0.5, 11), split_dataset(_index(30), 0.5, 11)
    assert a.splits == b.splits
    assert set(a.splits) == {e.sequence_id for e in a.entries}


def test_split_528_into_halves():
    out = split_dataset(_index(528), 0.5, 0)
    assert len(out.subset("train")) == 264 and len(out.subset("test")) == 264


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(_index(1), 0.5, 0)
    with pytest.raises(ValueError):
        split_dataset(_index(4), 1.0, 0)


def test_index_rejects_duplicates():
    with pytest.raises(ValidationError):
        DatasetIndex([IndexEntry("a", "a"), IndexEntry("a", "b")])


@settings(max_examples=25)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partition_property(n, frac, seed):
    out = split_dataset(_index(n), frac, seed)
    train, test = out.subset("train"), out.subset("test")
    assert len(train) + len(test) == n and train and test


def test_split_keeps_weak_pool_apart():
    entries = [IndexEntry(f"s{i}", f"s{i}") for i in range(4)] + [IndexEntry(f"w{i}", f"w{i}", False) for i in range(3)]
    out = split_dataset(DatasetIndex(entries), 0.5, 0)
    assert sorted(e.sequence_id for e in out.subset("weak")) == ["w0", "w1", "w2"]
    assert len(out.subset("train")) == 2 and len(out.subset("test")) == 2
