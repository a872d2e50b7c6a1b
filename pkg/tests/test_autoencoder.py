import numpy as np
import pytest

from gridscene import ops
from gridscene.autoencoder import Autoencoder, pretrain
from gridscene.gradcheck import TOLERANCE, check_composite
from gridscene.tensor import ShapeError, Tensor


def tiny_ae(seed=0, widths=(4, 8), bottleneck=6, size=16, channels=1):
    rng = np.random.default_rng(seed)
    return Autoencoder(size, size, channels, rng, widths=widths, bottleneck=bottleneck)


def blob_images(rng, count, size=16, channels=1):
    """Soft bright squares on dark backgrounds; cheap stand-ins for renders."""
    images = []
    for _ in range(count):
        img = np.zeros((size, size, channels))
        y, x = rng.integers(2, size - 6, 2)
        img[y : y + 4, x : x + 4, :] = rng.uniform(0.6, 1.0)
        img += rng.uniform(0.0, 0.03, img.shape)
        images.append(np.clip(img, 0.0, 1.0))
    return images


def test_encode_decode_shapes():
    ae = tiny_ae()
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (3, 1, 16, 16)))
    z = ae.encode(x)
    assert z.shape == (3, 6)
    y = ae.decode(z)
    assert y.shape == (3, 1, 16, 16)
    assert np.all(y.data > 0.0) and np.all(y.data < 1.0)


def test_shape_validation():
    ae = tiny_ae()
    with pytest.raises(ShapeError):
        ae.encode(Tensor(np.zeros((2, 1, 8, 8))))
    with pytest.raises(ShapeError):
        ae.decode(Tensor(np.zeros((2, 7))))
    with pytest.raises(ShapeError):
        Autoencoder(10, 16, 1, np.random.default_rng(0), widths=(4, 8))


def test_named_parameters_and_freeze():
    ae = tiny_ae()
    params = ae.named()
    # stem + 2*(down, enc_res) + to_code + from_code + 2*(up, dec_res) + out_conv
    assert len(params) == 2 * (1 + 4 + 1 + 1 + 4 + 1)
    assert "ae.stem.w" in params and "ae.out_conv.b" in params
    ae.set_frozen(True)
    assert not any(p.requires_grad for p in params.values())
    ae.set_frozen(False)
    assert all(p.requires_grad for p in params.values())


def test_reconstruction_gradients_match_finite_differences(rng):
    ae = Autoencoder(8, 8, 1, np.random.default_rng(3), widths=(2, 4), bottleneck=4)
    # zero-init biases sit exactly on relu kinks; nudge every param off them
    for p in ae.named().values():
        p.data += rng.normal(0, 0.01, p.shape)
    x = Tensor(rng.uniform(0.1, 0.9, (2, 1, 8, 8)))

    def loss_fn():
        return ops.mse(ae.decode(ae.encode(x)), x)

    worst = check_composite(loss_fn, ae.named(), rng, max_coords=120)
    assert worst < TOLERANCE


def test_feature_gradient_reaches_decoder_input(rng):
    ae = Autoencoder(8, 8, 1, np.random.default_rng(4), widths=(2, 4), bottleneck=4)
    ae.set_frozen(True)
    z = Tensor(rng.normal(0, 1, (1, 4)), requires_grad=True)
    target = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)))

    def loss_fn():
        return ops.mse(ae.decode(z), target)

    worst = check_composite(loss_fn, {"z": z}, rng, max_coords=4)
    assert worst < TOLERANCE


def test_pretrain_loss_decreases():
    rng = np.random.default_rng(11)
    images = blob_images(rng, 24)
    ae = tiny_ae(seed=5)
    curve = pretrain(ae, images, epochs=5, batch_size=8, lr=1e-3, seed=2)
    assert len(curve) == 5
    for before, after in zip(curve, curve[1:]):
        assert after < before
    assert curve[-1] < curve[0]


def test_pretrain_is_seeded():
    rng = np.random.default_rng(12)
    images = blob_images(rng, 12)
    curves = []
    for _ in range(2):
        ae = tiny_ae(seed=6)
        curves.append(pretrain(ae, images, epochs=2, batch_size=6, lr=1e-3, seed=3))
    assert curves[0] == curves[1]


def test_pretrain_helps_dark_reconstruction():
    rng = np.random.default_rng(13)
    images = blob_images(rng, 20) + [np.zeros((16, 16, 1)) for _ in range(4)]
    trained = tiny_ae(seed=7)
    untrained = tiny_ae(seed=7)
    pretrain(trained, images, epochs=8, batch_size=8, lr=2e-3, seed=4)
    black = Tensor(np.zeros((1, 1, 16, 16)))
    mse_trained = ops.mse(trained.decode(trained.encode(black)), black).item()
    mse_untrained = ops.mse(untrained.decode(untrained.encode(black)), black).item()
    assert mse_trained < mse_untrained


def test_encode_images_batches_consistently():
    ae = tiny_ae(seed=8)
    rng = np.random.default_rng(14)
    images = blob_images(rng, 5)
    whole = ae.encode_images(images, batch_size=8)
    chunked = ae.encode_images(images, batch_size=2)
    assert whole.shape == (5, 6)
    # batch size changes BLAS accumulation order, so only near-equality holds
    np.testing.assert_allclose(whole, chunked, atol=1e-12)


def test_pretrain_lr_decay_changes_trajectory_deterministically():
    rng = np.random.default_rng(15)
    images = blob_images(rng, 12)
    flat = pretrain(tiny_ae(seed=9), images, epochs=3, batch_size=6, lr=1e-3, seed=3)
    decayed = []
    for _ in range(2):
        ae = tiny_ae(seed=9)
        decayed.append(
            pretrain(ae, images, epochs=3, batch_size=6, lr=1e-3, lr_decay=0.5, seed=3)
        )
    # first epoch runs at the undecayed rate, later ones diverge from it
    assert decayed[0][0] == flat[0]
    assert decayed[0][1:] != flat[1:]
    assert decayed[0] == decayed[1]


def test_pretrain_aims_output_bias_at_corpus_brightness():
    rng = np.random.default_rng(16)
    images = blob_images(rng, 8)
    ae = tiny_ae(seed=10)
    pretrain(ae, images, epochs=0, batch_size=4, lr=1e-3, seed=1)
    mean = np.clip(np.mean([img.mean() for img in images]), 0.01, 0.99)
    want = np.log(mean / (1.0 - mean))
    assert np.allclose(ae.out_conv.b.data, want)
    # a bias the corpus already trained is left alone
    ae.out_conv.b.data = np.full_like(ae.out_conv.b.data, 0.5)
    pretrain(ae, images, epochs=0, batch_size=4, lr=1e-3, seed=1)
    assert (ae.out_conv.b.data == 0.5).all()
