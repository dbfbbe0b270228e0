import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratecluster.errors import ConfigError, FormatError, TruncationError, ValidationError
from ratecluster.store import (
    BatchSampler,
    DatasetManifest,
    EmbeddingMatrix,
    read_embeddings,
    sample_batch,
    subsample_eval,
    write_embeddings,
)


def test_byte_layout_1x1(tmp_path):
    path = tmp_path / "one.emb"
    write_embeddings(EmbeddingMatrix(data=np.array([[2.0]])), path)
    raw = path.read_bytes()
    expected = (
        b"EMB1"
        + bytes([0x01, 0x01])
        + struct.pack("<QQ", 1, 1)
        + struct.pack("<f", 2.0)
    )
    assert raw == expected
    assert raw[-4:] == bytes([0x00, 0x00, 0x00, 0x40])


def test_roundtrip_exact(tmp_path, gen):
    m = EmbeddingMatrix(data=gen.standard_normal((17, 5)).astype(np.float32))
    path = tmp_path / "x.emb"
    write_embeddings(m, path)
    back = read_embeddings(path)
    assert np.array_equal(back.data, m.data)
    # write(read(file)) reproduces the file byte-for-byte
    path2 = tmp_path / "y.emb"
    write_embeddings(back, path2)
    assert path.read_bytes() == path2.read_bytes()


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=12),
    d=st.integers(min_value=1, max_value=9),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_roundtrip_property(tmp_path_factory, n, d, seed):
    rng = np.random.default_rng(seed)
    m = EmbeddingMatrix(data=rng.standard_normal((n, d)).astype(np.float32))
    path = tmp_path_factory.mktemp("emb") / "m.emb"
    write_embeddings(m, path)
    assert np.array_equal(read_embeddings(path).data, m.data)


def test_nan_rejected():
    with pytest.raises(ValidationError):
        EmbeddingMatrix(data=np.array([[np.nan]]))


def test_empty_dims_rejected():
    with pytest.raises(ValidationError):
        EmbeddingMatrix(data=np.zeros((0, 3)))


def test_ids_sidecar_roundtrip(tmp_path):
    m = EmbeddingMatrix(data=np.eye(3, dtype=np.float32), ids=["a", "b", "c"])
    path = tmp_path / "ids.emb"
    write_embeddings(m, path)
    assert json.loads((tmp_path / "ids.emb.json").read_text()) == {"ids": ["a", "b", "c"]}
    assert read_embeddings(path).ids == ["a", "b", "c"]


def test_ids_must_be_unique_and_match():
    with pytest.raises(ValidationError):
        EmbeddingMatrix(data=np.eye(2, dtype=np.float32), ids=["a", "a"])
    with pytest.raises(ValidationError):
        EmbeddingMatrix(data=np.eye(2, dtype=np.float32), ids=["a"])


def test_wrong_magic_names_offset(tmp_path):
    path = tmp_path / "bad.emb"
    good = tmp_path / "good.emb"
    write_embeddings(EmbeddingMatrix(data=np.ones((1, 1), np.float32)), good)
    raw = bytearray(good.read_bytes())
    raw[3] = ord("2")  # "EMB2"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        read_embeddings(path)
    assert exc.value.offset == 3


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.emb"
    write_embeddings(EmbeddingMatrix(data=np.ones((2, 3), np.float32)), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(TruncationError):
        read_embeddings(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "extra.emb"
    write_embeddings(EmbeddingMatrix(data=np.ones((2, 3), np.float32)), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_sample_batch_deterministic():
    s = BatchSampler(batch_size=4, seed=99)
    a = sample_batch(s, epoch=2, step=1, n=13)
    b = sample_batch(BatchSampler(batch_size=4, seed=99), epoch=2, step=1, n=13)
    assert a == b
    assert len(a) == 4


def test_epoch_coverage_without_drop_last():
    s = BatchSampler(batch_size=4, seed=7, drop_last=False)
    seen = []
    for step in range(s.num_batches(13)):
        seen.extend(sample_batch(s, epoch=0, step=step, n=13))
    assert sorted(seen) == list(range(13))


def test_drop_last_gives_full_batches_only():
    s = BatchSampler(batch_size=4, seed=7, drop_last=True)
    assert s.num_batches(13) == 3
    for step in range(3):
        assert len(sample_batch(s, epoch=0, step=step, n=13)) == 4


def test_batch_size_over_n_is_config_error():
    with pytest.raises(ConfigError):
        sample_batch(BatchSampler(batch_size=20, seed=0), 0, 0, 10)


def test_seed_changes_permutation():
    a = sample_batch(BatchSampler(batch_size=10, seed=0), 0, 0, 10)
    b = sample_batch(BatchSampler(batch_size=10, seed=1), 0, 0, 10)
    assert a != b  # 1/10! chance of collision for honest generators


def test_epochs_permute_differently():
    s = BatchSampler(batch_size=10, seed=0)
    assert sample_batch(s, 0, 0, 10) != sample_batch(s, 1, 0, 10)


def test_subsample_noop_when_under_cap(gen):
    m = EmbeddingMatrix(data=gen.standard_normal((100, 4)).astype(np.float32))
    sub, idx = subsample_eval(m, cap=200, seed=0)
    assert sub is m
    assert idx == list(range(100))


def test_subsample_large_distinct(gen):
    m = EmbeddingMatrix(data=gen.standard_normal((30000, 2)).astype(np.float32))
    sub, idx = subsample_eval(m, cap=15000, seed=5)
    assert sub.n == 15000
    assert len(set(idx)) == 15000
    assert idx == sorted(idx)
    assert np.array_equal(sub.data, m.data[idx])
    sub2, idx2 = subsample_eval(m, cap=15000, seed=5)
    assert idx2 == idx


def test_manifest_roundtrip_and_validation(tmp_path):
    man = DatasetManifest(embedding_path="x.emb", labels=[0, 1, 1], text_candidates=["a", "b"])
    path = tmp_path / "man.json"
    man.save(path)
    back = DatasetManifest.load(path)
    assert back.labels == [0, 1, 1]
    assert back.text_candidates == ["a", "b"]
    back.validate(n=3, text_rows=2)
    with pytest.raises(ValidationError):
        back.validate(n=4)
    with pytest.raises(ValidationError):
        back.validate(text_rows=3)
