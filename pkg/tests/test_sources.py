import numpy as np
import pytest

from gridscene.sources import (
    load_cifar10,
    load_mnist_idx,
    resize_cell,
    synthesize_cifar_style,
    synthesize_mnist_style,
)


@pytest.fixture(scope="module")
def mnist_files(tmp_path_factory):
    base = tmp_path_factory.mktemp("mnist")
    paths = base / "images-idx3-ubyte", base / "labels-idx1-ubyte"
    synthesize_mnist_style(60, seed=3, images_path=paths[0], labels_path=paths[1])
    return paths


def test_mnist_round_trip_shapes(mnist_files):
    images = load_mnist_idx(*mnist_files)
    assert len(images) == 60
    assert images[0].pixels.shape == (28, 28, 1)
    assert images[0].pixels.dtype == np.float64
    assert 0.0 <= images[0].pixels.min() and images[0].pixels.max() <= 1.0


def test_mnist_labels_are_balanced(mnist_files):
    images = load_mnist_idx(*mnist_files)
    counts = np.bincount([s.label for s in images], minlength=10)
    assert (counts == 6).all()


def test_synthesis_is_deterministic(tmp_path):
    a = tmp_path / "a-img", tmp_path / "a-lab"
    b = tmp_path / "b-img", tmp_path / "b-lab"
    synthesize_mnist_style(20, seed=9, images_path=a[0], labels_path=a[1])
    synthesize_mnist_style(20, seed=9, images_path=b[0], labels_path=b[1])
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()
    synthesize_mnist_style(20, seed=10, images_path=b[0], labels_path=b[1])
    assert a[0].read_bytes() != b[0].read_bytes()


def test_idx_bad_magic_rejected(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    synthesize_mnist_style(10, seed=0, images_path=img, labels_path=lab)
    data = bytearray(img.read_bytes())
    data[3] = 0x99
    img.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="magic"):
        load_mnist_idx(img, lab)


def test_idx_truncation_rejected(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    synthesize_mnist_style(10, seed=0, images_path=img, labels_path=lab)
    img.write_bytes(img.read_bytes()[:-5])
    with pytest.raises(ValueError, match="bytes"):
        load_mnist_idx(img, lab)


def test_idx_count_mismatch_rejected(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    other = tmp_path / "lab2"
    synthesize_mnist_style(10, seed=0, images_path=img, labels_path=lab)
    synthesize_mnist_style(12, seed=0, images_path=tmp_path / "img2", labels_path=other)
    with pytest.raises(ValueError, match="count"):
        load_mnist_idx(img, other)


def test_cifar_round_trip(tmp_path):
    path = tmp_path / "batch.bin"
    synthesize_cifar_style(30, seed=4, path=path)
    images = load_cifar10([path])
    assert len(images) == 30
    assert images[0].pixels.shape == (32, 32, 3)
    counts = np.bincount([s.label for s in images], minlength=10)
    assert (counts == 3).all()


def test_cifar_size_validation(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(ValueError, match="multiple"):
        load_cifar10([path])


def test_resize_cell_preserves_constants():
    img = np.full((28, 28, 1), 0.6)
    out = resize_cell(img, 16)
    assert out.shape == (16, 16, 1)
    assert np.allclose(out, 0.6)


def test_resize_cell_integer_ratio_is_block_mean(rng):
    img = rng.random((32, 32, 3))
    out = resize_cell(img, 16)
    want = img.reshape(16, 2, 16, 2, 3).mean(axis=(1, 3))
    assert np.allclose(out, want)


def test_resize_cell_preserves_mean(rng):
    img = rng.random((28, 28, 1))
    out = resize_cell(img, 16)
    assert out.mean() == pytest.approx(img.mean(), rel=1e-12)


def test_resize_cell_rejects_upscaling():
    with pytest.raises(ValueError, match="area-average"):
        resize_cell(np.zeros((8, 8, 1)), 16)
