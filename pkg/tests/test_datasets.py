import gzip
import struct

import numpy as np
import pytest

from shufflefl.datasets import (DATA_DIR, Dataset, dirichlet_partition, load_idx, load_mnist, read_idx,
                                save_idx, synth_blobs, synth_sequences)
from shufflefl.exceptions import DegenerateInputError, FormatError


def _write_raw(path, magic, dims, body):
    path.write_bytes(struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + body)


def test_idx_header_60000_images(tmp_path):
    # published MNIST training header: magic 2051, 60000 x 28 x 28
    img = tmp_path / "img.idx"
    lbl = tmp_path / "lbl.idx"
    rng = np.random.default_rng(0)
    _write_raw(img, 2051, (60000, 28, 28), rng.integers(0, 256, 60000 * 784, dtype=np.uint8).tobytes())
    _write_raw(lbl, 2049, (60000,), rng.integers(0, 10, 60000, dtype=np.uint8).tobytes())
    assert img.read_bytes()[:16] == bytes.fromhex("00000803 0000ea60 0000001c 0000001c".replace(" ", ""))
    ds = load_idx(img, lbl)
    assert ds.X.shape == (60000, 784)
    assert ds.image_shape == (28, 28)
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0


def test_idx_label_count_mismatch(tmp_path):
    img, lbl = tmp_path / "i", tmp_path / "l"
    _write_raw(img, 2051, (3, 2, 2), bytes(12))
    _write_raw(lbl, 2049, (4,), bytes(4))
    with pytest.raises(FormatError):
        load_idx(img, lbl)


def test_idx_bad_magic_and_truncation(tmp_path):
    bad = tmp_path / "bad"
    _write_raw(bad, 0x0D03, (2, 2), bytes(4))
    with pytest.raises(FormatError):
        read_idx(bad)
    short = tmp_path / "short"
    _write_raw(short, 2051, (3, 2, 2), bytes(11))
    with pytest.raises(FormatError):
        read_idx(short)
    (tmp_path / "tiny").write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        read_idx(tmp_path / "tiny")
    swapped_i, swapped_l = tmp_path / "si", tmp_path / "sl"
    _write_raw(swapped_i, 2049, (3,), bytes(3))
    _write_raw(swapped_l, 2049, (3,), bytes(3))
    with pytest.raises(FormatError):
        load_idx(swapped_i, swapped_l)


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_roundtrip_bytes(tmp_path, suffix):
    arr = np.random.default_rng(1).integers(0, 256, (5, 3, 4), dtype=np.uint8)
    p = tmp_path / f"a.idx{suffix}"
    save_idx(p, arr)
    back = read_idx(p)
    np.testing.assert_array_equal(back, arr)
    q = tmp_path / f"b.idx{suffix}"
    save_idx(q, back)
    assert p.read_bytes() == q.read_bytes()


def test_bundled_files_reserialize_identically(tmp_path, mnist_available):
    for name in ("t10k-labels-idx1-ubyte.gz", "t10k-images-idx3-ubyte.gz"):
        src = DATA_DIR / name
        out = tmp_path / name
        save_idx(out, read_idx(src))
        assert gzip.decompress(out.read_bytes()) == gzip.decompress(src.read_bytes())


def test_save_idx_rejects_floats(tmp_path):
    with pytest.raises(FormatError):
        save_idx(tmp_path / "x", np.zeros(3))


def test_load_mnist_subset(mnist_available):
    tr, te = load_mnist("train"), load_mnist("test")
    assert tr.X.shape == (4000, 784) and te.X.shape == (1000, 784)
    assert tr.X.min() >= 0 and tr.X.max() <= 1
    assert np.bincount(tr.y).tolist() == [400] * 10
    assert len(load_mnist("test", limit=10)) == 10


def test_blobs_spread_zero_and_determinism():
    a = synth_blobs(3, 5, 30, 0.0, seed=4)
    for c in range(3):
        rows = a.X[a.y == c]
        assert np.all(rows == rows[0])
    b = synth_blobs(3, 5, 30, 0.0, seed=4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = synth_blobs(3, 5, 30, 0.3, seed=4)
    assert c.X.min() >= 0 and c.X.max() <= 1


def test_blobs_linearly_separable():
    from shufflefl.nn import MlpModel, accuracy, train_local
    d = synth_blobs(5, 16, 500, 0.05, seed=2)
    m = MlpModel.init([16, 5], np.random.default_rng(0))
    m = train_local(m, d.X, d.y, 20, 32, 5e-2, np.random.default_rng(1))
    assert accuracy(m, d.X, d.y) > 0.95


def test_sequences_shape_determinism_and_frequencies():
    a = synth_sequences(4, 32, 3, 200, seed=9)
    b = synth_sequences(4, 32, 3, 200, seed=9)
    assert a.X.shape == (200, 32, 3) and len(a.steps) == 32
    assert np.array_equal(a.X, b.X)
    peaks = []
    for c in range(4):
        mean = a.X[a.y == c].mean(axis=(0, 2))
        spec = np.abs(np.fft.rfft(mean - mean.mean()))
        peaks.append(int(np.argmax(spec)))
    assert len(set(peaks)) == 4


def test_dirichlet_partition_is_exact(rng):
    d = synth_blobs(10, 4, 1000, 0.1, seed=0)
    parts = dirichlet_partition(d, 100, 0.5, seed=3)
    allidx = np.concatenate(parts)
    assert len(allidx) == 1000 and len(np.unique(allidx)) == 1000
    assert all(len(p) >= 1 for p in parts)
    single = dirichlet_partition(d, 1, 0.5, seed=3)
    assert np.array_equal(single[0], np.arange(1000))


def _skewed_share(parts, y):
    return np.mean([np.bincount(y[p], minlength=10).max() / len(p) > 0.5 for p in parts])


def test_dirichlet_skew_on_mnist(mnist_available):
    tr = load_mnist("train")
    got = np.mean([_skewed_share(dirichlet_partition(tr, 100, 0.5, seed=s), tr.y) for s in range(5)])
    # independent oracle: per-class Dir(0.5) proportions over 100 clients, balanced classes
    rng = np.random.default_rng(0)
    sims = []
    for _ in range(400):
        H = rng.dirichlet(np.full(100, 0.5), size=10).T
        sims.append(np.mean(H.max(axis=1) / H.sum(axis=1) > 0.5))
    lo, hi = np.percentile(sims, [1, 99])
    assert lo <= got <= hi
    # and far more skewed than an i.i.d. split, where no client has a majority class
    iid = dirichlet_partition(tr, 100, 1e4, seed=0)
    assert _skewed_share(iid, tr.y) == 0.0
    assert got > 0.05


def test_dirichlet_too_few_samples():
    d = synth_blobs(2, 2, 3, 0.1, seed=0)
    with pytest.raises(DegenerateInputError):
        dirichlet_partition(d, 4, 0.5, seed=0)


def test_dataset_invariants():
    with pytest.raises(Exception):
        Dataset(np.full((2, 2), 1.5), np.array([0, 1]), 2)
    with pytest.raises(Exception):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
