"""Convolutional autoencoder whose bottleneck features serve as image tokens.

Encoder: stem conv, then one downsampling stage per width (4x4 stride-2
conv followed by a 3x3 residual conv), global average pool, linear to the
bottleneck.  Decoder mirrors it: linear from the bottleneck to the coarsest
feature map, then per stage a bilinear x2 upsample, a 3x3 transposed conv
changing width, and a 3x3 residual conv; a final conv plus sigmoid clamps
the output to (0, 1).  Spatial dims must be divisible by 2^stages.

The autoencoder is pretrained on every final AND intermediate grid image
(so partial renderings are well represented) and then frozen; the models in
`training` only differentiate through it.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Affine, Conv
from .optim import AdamState, adam_step, clip_global_norm
from .tensor import ContractError, NumericError, ShapeError, Tensor, Tape, backward


class Autoencoder:
    def __init__(
        self,
        height: int,
        width: int,
        channels: int,
        rng,
        widths=(32, 64, 128, 256),
        bottleneck: int = 256,
        dtype=np.float64,
    ):
        stages = len(widths)
        if height % (1 << stages) or width % (1 << stages):
            raise ShapeError(
                f"image {height}x{width} not divisible by 2^{stages} for {stages} stages"
            )
        self.height, self.width, self.channels = height, width, channels
        self.widths = tuple(widths)
        self.bottleneck = bottleneck
        self.dtype = dtype
        self.coarse = (height >> stages, width >> stages)

        self.stem = Conv(channels, widths[0], 3, 1, 1, rng, dtype)
        self.down = []
        self.enc_res = []
        c_prev = widths[0]
        for c in widths:
            self.down.append(Conv(c_prev, c, 4, 2, 1, rng, dtype))
            self.enc_res.append(Conv(c, c, 3, 1, 1, rng, dtype))
            c_prev = c
        self.to_code = Affine(widths[-1], bottleneck, rng, dtype)

        ch, cw = self.coarse
        self.from_code = Affine(bottleneck, widths[-1] * ch * cw, rng, dtype)
        self.up = []
        self.dec_res = []
        for i in reversed(range(stages)):
            c_in = widths[i]
            c_out = widths[i - 1] if i else widths[0]
            self.up.append(Conv(c_in, c_out, 3, 1, 1, rng, dtype, transposed=True))
            self.dec_res.append(Conv(c_out, c_out, 3, 1, 1, rng, dtype))
        self.out_conv = Conv(widths[0], channels, 3, 1, 1, rng, dtype)

    def encode(self, x: Tensor) -> Tensor:
        """(batch, C, H, W) images -> (batch, bottleneck) features."""
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.height, self.width):
            raise ShapeError(
                f"expected (batch, {self.channels}, {self.height}, {self.width}), got {x.shape}"
            )
        h = ops.relu(self.stem(x))
        for down, res in zip(self.down, self.enc_res):
            h = ops.relu(down(h))
            h = ops.relu(ops.add(h, res(h)))
        h = ops.avg_pool2d(h, (h.shape[2], h.shape[3]))
        h = ops.reshape(h, (h.shape[0], self.widths[-1]))
        return self.to_code(h)

    def decode(self, z: Tensor) -> Tensor:
        """(batch, bottleneck) features -> (batch, C, H, W) images in (0, 1)."""
        if z.ndim != 2 or z.shape[1] != self.bottleneck:
            raise ShapeError(f"expected (batch, {self.bottleneck}) features, got {z.shape}")
        ch, cw = self.coarse
        h = ops.relu(self.from_code(z))
        h = ops.reshape(h, (z.shape[0], self.widths[-1], ch, cw))
        for up, res in zip(self.up, self.dec_res):
            h = ops.upsample_bilinear2d(h, 2)
            h = ops.relu(up(h))
            h = ops.relu(ops.add(h, res(h)))
        return ops.sigmoid(self.out_conv(h))

    def named(self, prefix="ae") -> dict[str, Tensor]:
        out = self.stem.named(f"{prefix}.stem")
        for i, (down, res) in enumerate(zip(self.down, self.enc_res)):
            out.update(down.named(f"{prefix}.down{i}"))
            out.update(res.named(f"{prefix}.enc_res{i}"))
        out.update(self.to_code.named(f"{prefix}.to_code"))
        out.update(self.from_code.named(f"{prefix}.from_code"))
        for i, (up, res) in enumerate(zip(self.up, self.dec_res)):
            out.update(up.named(f"{prefix}.up{i}"))
            out.update(res.named(f"{prefix}.dec_res{i}"))
        out.update(self.out_conv.named(f"{prefix}.out_conv"))
        return out

    def set_frozen(self, frozen: bool = True):
        for p in self.named().values():
            p.requires_grad = not frozen
        return self

    def encode_images(self, images: list[np.ndarray], batch_size: int = 128) -> np.ndarray:
        """Convenience inference path: (H, W, C) image list -> feature rows."""
        feats = []
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            x = Tensor(np.stack([img.transpose(2, 0, 1) for img in chunk]), dtype=self.dtype)
            feats.append(self.encode(x).data)
        return np.concatenate(feats, axis=0)


def save_autoencoder(path, ae: Autoencoder, meta_extra: dict | None = None) -> None:
    meta = {
        "kind": "autoencoder",
        "height": ae.height,
        "width": ae.width,
        "channels": ae.channels,
        "widths": list(ae.widths),
        "bottleneck": ae.bottleneck,
        "dtype": np.dtype(ae.dtype).name,
    }
    meta.update(meta_extra or {})
    save_checkpoint(path, {k: v.data for k, v in ae.named().items()}, meta)


def load_autoencoder(path, frozen: bool = True) -> Autoencoder:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "autoencoder":
        raise ContractError(f"{path} holds a {meta.get('kind')!r} checkpoint, not an autoencoder")
    ae = Autoencoder(
        meta["height"],
        meta["width"],
        meta["channels"],
        np.random.default_rng(0),
        widths=tuple(meta["widths"]),
        bottleneck=meta["bottleneck"],
        dtype=np.dtype(meta["dtype"]),
    )
    for name, param in ae.named().items():
        param.data = tensors[name]
    return ae.set_frozen(frozen)


def pretrain(
    ae: Autoencoder,
    images: list[np.ndarray],
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    lr_decay: float = 1.0,
    seed: int = 0,
    log=None,
) -> list[float]:
    """Reconstruction training on (H, W, C) images; returns per-epoch MSE.

    lr decays by `lr_decay` each epoch; at a constant rate the loss tends to
    bounce around 1e-3 instead of settling.  Raises NumericError naming the
    epoch if the loss diverges.
    """
    if not images:
        raise ShapeError("pretrain needs a non-empty image list")
    params = ae.named()
    for p in params.values():
        p.requires_grad = True
    opt = AdamState(params, lr=lr)
    data = np.stack([img.transpose(2, 0, 1) for img in images]).astype(ae.dtype)
    if not ae.out_conv.b.data.any():
        # fresh model: start the output at the corpus mean intensity; dark
        # corpora otherwise drive the sigmoid into black saturation before
        # the features carry any signal
        mean = float(np.clip(data.mean(), 0.01, 0.99))
        ae.out_conv.b.data = np.full_like(ae.out_conv.b.data, np.log(mean / (1.0 - mean)))
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        opt.lr = lr * lr_decay**epoch
        order = rng.permutation(len(data))
        total, batches = 0.0, 0
        for start in range(0, len(data), batch_size):
            x = Tensor(data[order[start : start + batch_size]])
            try:
                with Tape() as tape:
                    for p in params.values():
                        tape.watch(p)
                    loss = ops.mse(ae.decode(ae.encode(x)), x)
                grads = backward(tape, loss)
            except NumericError as e:
                raise NumericError(f"pretraining diverged at epoch {epoch}: {e}") from e
            named_grads = {name: grads[p] for name, p in params.items()}
            clip_global_norm(named_grads, 1.0)
            adam_step(params, named_grads, opt)
            total += loss.item()
            batches += 1
        curve.append(total / batches)
        if log:
            log(f"ae epoch {epoch}: mse {curve[-1]:.6f}")
    return curve
