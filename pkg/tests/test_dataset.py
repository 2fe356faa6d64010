import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ispsim import model as M
from ispsim.dataset import (
    DataError, decode_page, pack_pages, parse_idx, preload_nand, read_idx, samples_per_page,
    stripe_across_channels,
)
from ispsim.nand import NandArray, NandGeometry

from conftest import toy_set


def write_idx(path, array, gz=False):
    header = struct.pack(">HBB", 0, 8, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    raw = header + array.astype(np.uint8).tobytes()
    path.write_bytes(gzip.compress(raw, mtime=0) if gz else raw)


@pytest.mark.parametrize("gz", [False, True])
def test_parse_round_trip(tmp_path, gz):
    imgs = np.arange(3 * 4 * 4).reshape(3, 4, 4) % 256
    labels = np.array([1, 0, 9])
    write_idx(tmp_path / "i", imgs, gz)
    write_idx(tmp_path / "l", labels, gz)
    s = parse_idx(tmp_path / "i", tmp_path / "l")
    assert s.features.shape == (3, 16)
    assert np.allclose(s.features * 255, imgs.reshape(3, 16))
    assert s.labels.tolist() == [1, 0, 9]


def test_bad_magic_names_offset(tmp_path):
    (tmp_path / "x").write_bytes(b"\x00\x00\x0d\x01\x00\x00\x00\x01\x00")
    with pytest.raises(DataError, match="offset 0"):
        read_idx(tmp_path / "x")


def test_truncated_payload_names_offset(tmp_path):
    write_idx(tmp_path / "x", np.zeros((2, 4)))
    raw = (tmp_path / "x").read_bytes()
    (tmp_path / "x").write_bytes(raw[:-3])
    with pytest.raises(DataError, match=f"offset {len(raw) - 3}"):
        read_idx(tmp_path / "x")


def test_count_mismatch(tmp_path):
    write_idx(tmp_path / "i", np.zeros((3, 2, 2)))
    write_idx(tmp_path / "l", np.zeros(2))
    with pytest.raises(DataError, match="mismatch"):
        parse_idx(tmp_path / "i", tmp_path / "l")


def test_label_out_of_range(tmp_path):
    write_idx(tmp_path / "i", np.zeros((2, 2, 2)))
    write_idx(tmp_path / "l", np.array([0, 12]))
    with pytest.raises(DataError, match="offset 9"):
        parse_idx(tmp_path / "i", tmp_path / "l")


def test_bundled_subset(mnist_dir):
    train = parse_idx(mnist_dir / "train-images-idx3-ubyte.gz", mnist_dir / "train-labels-idx1-ubyte.gz")
    test = parse_idx(mnist_dir / "t10k-images-idx3-ubyte.gz", mnist_dir / "t10k-labels-idx1-ubyte.gz")
    assert train.features.shape == (4000, 784) and len(test) == 1000
    assert 0 <= train.features.min() and train.features.max() <= 1


def test_page_packing_arithmetic():
    assert samples_per_page(8192, 784) == 10
    pages = pack_pages(toy_set(25))
    assert [p.sample_count for p in pages] == [10, 10, 5]
    assert all(len(p.data) == 8192 for p in pages)
    assert pages[0].data[7850:] == bytes(342)  # 8192 - 10 * 785


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 45), st.integers(0, 10_000))
def test_pack_decode_round_trip(n, seed):
    s = toy_set(n, seed=seed)
    pages = pack_pages(s)
    decoded = [decode_page(p.data, p.sample_count) for p in pages]
    assert np.array_equal(np.concatenate([d.features for d in decoded]), s.features)
    assert np.array_equal(np.concatenate([d.labels for d in decoded]), s.labels)


def test_pack_rejects_out_of_range_features():
    with pytest.raises(DataError):
        pack_pages(M.SampleSet(np.full((1, 784), 2.0), np.zeros(1, dtype=int)))
    with pytest.raises(DataError):
        pack_pages(M.SampleSet(np.zeros((1, 9000)), np.zeros(1, dtype=int)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 16), st.one_of(st.none(), st.integers(0, 99)))
def test_striping_places_every_page_once(n_pages, n, seed):
    pages = pack_pages(toy_set(n_pages * 10, seed=1))
    layout = stripe_across_channels(pages, n, seed)
    idx = sorted(p.index for p in layout.pages())
    assert idx == list(range(n_pages))
    counts = [len(c) for c in layout.channels]
    assert max(counts) - min(counts) <= 1
    assert layout.total_samples == n_pages * 10
    addrs = [p.address for p in layout.pages()]
    assert len(set(addrs)) == len(addrs)
    assert all(a.channel == ch for ch, c in enumerate(layout.channels) for a in (p.address for p in c))


def test_striping_is_round_robin_without_seed():
    layout = stripe_across_channels(pack_pages(toy_set(50)), 2)
    assert [p.index for p in layout.channels[0]] == [0, 2, 4]
    assert layout.manifest().splitlines()[:2] == ["0 0 0 0 10", "1 1 0 0 10"]


def test_seeded_shuffle_is_deterministic():
    pages = pack_pages(toy_set(100))
    a = stripe_across_channels(pages, 3, seed=7).manifest()
    assert a == stripe_across_channels(pages, 3, seed=7).manifest()
    assert a != stripe_across_channels(pages, 3).manifest()


def test_preload_and_capacity():
    pages = pack_pages(toy_set(40))
    layout = stripe_across_channels(pages, 2)
    nand = NandArray(NandGeometry(2, 1, 2, 8192))
    preload_nand(layout, pages, nand)
    assert nand.read_page(layout.channels[1][0].address)[0] == pages[1].data
    small = NandArray(NandGeometry(2, 1, 1, 8192))
    with pytest.raises(DataError, match="need 2 pages per channel, 1 available"):
        preload_nand(layout, pages, small)
