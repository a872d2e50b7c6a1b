"""End-to-end training of the graph-to-image models over frozen features.

Four variants share one training loop.  `full` is the generator of record:
GCN node features feed the transformer encoder, the causally masked decoder
is teacher-forced on autoencoder features of the ground-truth paste
sequence, and every decoder output is pushed through the frozen AE decoder
so the loss lives in pixel space, averaged over all supervised steps.
`gcn_only` and `gcn_encoder` are single-shot baselines (sum readout to one
feature, one decoded image); `no_ae` runs the full pipeline on flattened
pixel tokens instead of learned features.

The autoencoder never trains here: its parameters stay frozen, and the
feature tokens for teacher forcing are precomputed once per split.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .autoencoder import Autoencoder, load_autoencoder
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import load_classifier
from .config import TrainConfig, config_from_dict
from .gcn import GcnParams, gcn_forward, init_gcn_params
from .gridsets import load_manifest, load_split
from .layers import Affine
from .metrics import build_report, fid
from .optim import AdamState, adam_step, clip_global_norm
from .scenegraph import SceneGraph
from .tensor import ContractError, NumericError, Tensor, Tape, backward
from .transformer import Decoder, Encoder, generate

TRAIN_DTYPE = np.float32


def collect_grads(tape_grads: dict, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Re-key backward()'s tensor-keyed gradients by parameter name."""
    return {name: tape_grads[p] for name, p in params.items()}


def cast_autoencoder(ae: Autoencoder, dtype) -> Autoencoder:
    """In-place dtype cast so frozen-AE arithmetic matches the model's."""
    dtype = np.dtype(dtype)
    for p in ae.named().values():
        p.data = p.data.astype(dtype)
    ae.dtype = dtype
    return ae


@dataclass
class PreparedSplit:
    """Numpy-side view of a record split, ready for batching."""

    graphs: list[SceneGraph]
    targets: np.ndarray  # (records, steps, C, H, W)
    feats: np.ndarray | None  # (records, steps, bottleneck) frozen AE features
    sos: np.ndarray  # start token: black-image feature, or zeros for no_ae

    @property
    def count(self) -> int:
        return len(self.graphs)

    @property
    def steps(self) -> int:
        return self.targets.shape[1]


def prepare_split(records, ae: Autoencoder | None, config: TrainConfig, with_feats=True):
    if not records:
        raise ContractError("empty record split")
    targets = np.stack(
        [np.stack([img.transpose(2, 0, 1) for img in rec.targets()]) for rec in records]
    ).astype(TRAIN_DTYPE)
    graphs = [rec.graph for rec in records]
    if config.model_variant == "no_ae":
        return PreparedSplit(graphs, targets, None, np.zeros(config.pixel_width, TRAIN_DTYPE))
    if ae is None:
        raise ContractError(f"variant {config.model_variant} needs a pretrained autoencoder")
    black = Tensor(np.zeros((1, config.channels, ae.height, ae.width)), dtype=ae.dtype)
    sos = ae.encode(black).data[0].astype(TRAIN_DTYPE)
    feats = None
    if with_feats:
        flat = targets.reshape(-1, *targets.shape[2:])
        feats = ae.encode_images([img.transpose(1, 2, 0) for img in flat])
        feats = feats.reshape(*targets.shape[:2], -1).astype(TRAIN_DTYPE)
    return PreparedSplit(graphs, targets, feats, sos)


def _stack_graphs(gcn: GcnParams, graphs, idx) -> Tensor:
    rows = [gcn_forward(graphs[i], gcn) for i in idx]
    return ops.concat([ops.reshape(r, (1, *r.shape)) for r in rows], axis=0)


def _sum_nodes(x: Tensor) -> Tensor:
    """(batch, nodes, width) -> (batch, width) sum readout."""
    ones = Tensor(np.ones((x.shape[1], 1)), dtype=x.dtype)
    summed = ops.matmul(ops.transpose(x, (0, 2, 1)), ones)
    return ops.reshape(summed, (x.shape[0], x.shape[2]))


class FullModel:
    """GCN -> transformer encoder -> causal decoder -> frozen AE decoder."""

    variant = "full"
    stepwise = True

    def __init__(self, config: TrainConfig, ae: Autoencoder, num_labels: int, rng, dtype=TRAIN_DTYPE):
        self.config = config
        self.ae = ae
        self.dtype = dtype
        self.gcn = init_gcn_params(
            num_labels, rng, width=config.embed_width, layers=config.gcn_layers, dtype=dtype
        )
        self.encoder = Encoder(
            config.embed_width, config.d_model, config.heads, config.ffn_width,
            config.layers, rng, dtype,
        )
        self.decoder = Decoder(
            config.d_model, config.heads, config.ffn_width, config.layers, rng, dtype
        )

    def named(self) -> dict[str, Tensor]:
        return {**self.gcn.named(), **self.encoder.named(), **self.decoder.named()}

    def memory(self, graphs, idx) -> Tensor:
        return self.encoder(_stack_graphs(self.gcn, graphs, idx))

    def _decoder_inputs(self, prep: PreparedSplit, idx, start: int) -> np.ndarray:
        feats = prep.feats[idx]
        b, k, width = feats.shape
        first = (
            np.broadcast_to(prep.sos, (b, 1, width))
            if start == 0
            else feats[:, start - 1 : start]
        )
        return np.concatenate([first, feats[:, start : k - 1]], axis=1)

    def loss_on_batch(self, prep: PreparedSplit, idx, start: int = 0):
        """Teacher-forced pixel MSE averaged over the supervised window.

        With start = 0 the window covers all K steps; a positive start
        drops the first `start` steps and conditions on the ground-truth
        feature of step `start` instead of the black SOS, which is exactly
        the partial-rendering regime.
        """
        targets = prep.targets[idx]
        b, k = targets.shape[:2]
        if not 0 <= start < k:
            raise ContractError(f"window start {start} outside [0, {k})")
        window = k - start
        tokens = Tensor(self._decoder_inputs(prep, idx, start), dtype=self.dtype)
        out = self.decoder(tokens, self.memory(prep.graphs, idx))
        flat = ops.reshape(out, (b * window, out.shape[2]))
        decoded = self.ae.decode(flat)
        tgt = targets[:, start:].reshape(b * window, *targets.shape[2:])
        loss = ops.mse(decoded, Tensor(tgt, dtype=self.dtype))
        final_pred = decoded.data.reshape(b, window, *targets.shape[2:])[:, -1]
        final_mse = float(np.mean((final_pred - targets[:, -1]) ** 2))
        return loss, {"final_mse": final_mse, "steps": window}

    def rollout(self, prep: PreparedSplit, idx, steps=None) -> np.ndarray:
        memory = self.memory(prep.graphs, idx)
        sos = np.broadcast_to(prep.sos, (len(idx), prep.sos.size))
        return generate(self.decoder, memory, sos, steps or prep.steps)

    def step_images(self, prep: PreparedSplit, idx) -> np.ndarray:
        feats = self.rollout(prep, idx)
        b, k, width = feats.shape
        decoded = self.ae.decode(Tensor(feats.reshape(b * k, width), dtype=self.dtype))
        return decoded.data.reshape(b, k, *prep.targets.shape[2:])

    def final_images(self, prep: PreparedSplit, idx) -> np.ndarray:
        feats = self.rollout(prep, idx)
        return self.ae.decode(Tensor(feats[:, -1], dtype=self.dtype)).data


class _SingleShot:
    """Shared plumbing for the one-image baselines."""

    stepwise = False

    def loss_on_batch(self, prep: PreparedSplit, idx, start: int = 0):
        predicted = self._predict(prep, idx)
        finals = prep.targets[idx][:, -1]
        loss = ops.mse(predicted, Tensor(finals, dtype=self.dtype))
        return loss, {"final_mse": loss.item(), "steps": 1}

    def final_images(self, prep: PreparedSplit, idx) -> np.ndarray:
        return self._predict(prep, idx).data


class GcnOnlyModel(_SingleShot):
    """GCN -> sum readout -> linear -> frozen AE decoder, single shot."""

    variant = "gcn_only"

    def __init__(self, config: TrainConfig, ae: Autoencoder, num_labels: int, rng, dtype=TRAIN_DTYPE):
        self.config = config
        self.ae = ae
        self.dtype = dtype
        self.gcn = init_gcn_params(
            num_labels, rng, width=config.embed_width, layers=config.gcn_layers, dtype=dtype
        )
        self.readout = Affine(config.embed_width, config.bottleneck, rng, dtype)

    def named(self):
        return {**self.gcn.named(), **self.readout.named("readout")}

    def _predict(self, prep, idx) -> Tensor:
        pooled = _sum_nodes(_stack_graphs(self.gcn, prep.graphs, idx))
        return self.ae.decode(self.readout(pooled))


class GcnEncoderModel(_SingleShot):
    """GCN -> transformer encoder -> sum readout -> linear -> AE decoder."""

    variant = "gcn_encoder"

    def __init__(self, config: TrainConfig, ae: Autoencoder, num_labels: int, rng, dtype=TRAIN_DTYPE):
        self.config = config
        self.ae = ae
        self.dtype = dtype
        self.gcn = init_gcn_params(
            num_labels, rng, width=config.embed_width, layers=config.gcn_layers, dtype=dtype
        )
        self.encoder = Encoder(
            config.embed_width, config.d_model, config.heads, config.ffn_width,
            config.layers, rng, dtype,
        )
        self.readout = Affine(config.d_model, config.bottleneck, rng, dtype)

    def named(self):
        return {**self.gcn.named(), **self.encoder.named(), **self.readout.named("readout")}

    def _predict(self, prep, idx) -> Tensor:
        encoded = self.encoder(_stack_graphs(self.gcn, prep.graphs, idx))
        return self.ae.decode(self.readout(_sum_nodes(encoded)))


class NoAeModel:
    """Full pipeline on flattened pixel tokens; no autoencoder anywhere."""

    variant = "no_ae"
    stepwise = True

    def __init__(self, config: TrainConfig, ae, num_labels: int, rng, dtype=TRAIN_DTYPE):
        if ae is not None:
            raise ContractError("no_ae variant does not take an autoencoder")
        self.config = config
        self.ae = None
        self.dtype = dtype
        self.gcn = init_gcn_params(
            num_labels, rng, width=config.embed_width, layers=config.gcn_layers, dtype=dtype
        )
        self.encoder = Encoder(
            config.embed_width, config.d_model, config.heads, config.ffn_width,
            config.layers, rng, dtype,
        )
        self.decoder = Decoder(
            config.d_model, config.heads, config.ffn_width, config.layers, rng, dtype
        )

    def named(self):
        return {**self.gcn.named(), **self.encoder.named(), **self.decoder.named()}

    def memory(self, graphs, idx) -> Tensor:
        return self.encoder(_stack_graphs(self.gcn, graphs, idx))

    def loss_on_batch(self, prep: PreparedSplit, idx, start: int = 0):
        targets = prep.targets[idx]
        b, k = targets.shape[:2]
        if not 0 <= start < k:
            raise ContractError(f"window start {start} outside [0, {k})")
        window = k - start
        pixels = targets.reshape(b, k, -1)
        first = (
            np.broadcast_to(prep.sos, (b, 1, pixels.shape[2]))
            if start == 0
            else pixels[:, start - 1 : start]
        )
        tokens = Tensor(
            np.concatenate([first, pixels[:, start : k - 1]], axis=1), dtype=self.dtype
        )
        out = self.decoder(tokens, self.memory(prep.graphs, idx))
        loss = ops.mse(out, Tensor(pixels[:, start:], dtype=self.dtype))
        final_mse = float(np.mean((out.data[:, -1] - pixels[:, -1]) ** 2))
        return loss, {"final_mse": final_mse, "steps": window}

    def rollout(self, prep: PreparedSplit, idx, steps=None) -> np.ndarray:
        memory = self.memory(prep.graphs, idx)
        sos = np.broadcast_to(prep.sos, (len(idx), prep.sos.size))
        return generate(self.decoder, memory, sos, steps or prep.steps)

    def step_images(self, prep: PreparedSplit, idx) -> np.ndarray:
        out = self.rollout(prep, idx)
        images = out.reshape(len(idx), prep.steps, *prep.targets.shape[2:])
        return np.clip(images, 0.0, 1.0)

    def final_images(self, prep: PreparedSplit, idx) -> np.ndarray:
        return self.step_images(prep, idx)[:, -1]


_MODELS = {m.variant: m for m in (FullModel, GcnOnlyModel, GcnEncoderModel, NoAeModel)}


def assemble_model(config: TrainConfig, ae, num_labels: int, rng, dtype=TRAIN_DTYPE):
    config.validate()
    cls = _MODELS[config.model_variant]
    if config.model_variant == "no_ae":
        return cls(config, None, num_labels, rng, dtype)
    if ae is None:
        raise ContractError(f"variant {config.model_variant} needs a pretrained autoencoder")
    return cls(config, cast_autoencoder(ae, dtype), num_labels, rng, dtype)


def warm_start_outputs(model, prep: PreparedSplit) -> None:
    """Point the output affine at the target-token statistics.

    A fresh stack emits roughly unit-scale tokens while well-fitting feature
    tokens run several times larger, so on a short budget Adam spends most of
    its steps growing the last layer-norm gain instead of fitting anything;
    a mid-scale start also sits inside the constant-dark attractor of the
    pixel loss. Destandardizing the output layer against the training
    targets removes both. Applies to fresh models only; resumed runs carry
    trained output layers.
    """
    if model.variant in ("full", "no_ae"):
        if model.variant == "full":
            tokens = prep.feats.reshape(-1, prep.feats.shape[2])
        else:
            tokens = prep.targets.reshape(prep.targets.shape[0] * prep.targets.shape[1], -1)
        head = model.decoder.layers[-1].ln3
        head.bias.data = tokens.mean(axis=0).astype(head.bias.data.dtype)
        # dims that never vary (border pixels) would zero the gain and stop
        # gradient flow through them for good
        head.gain.data = np.maximum(tokens.std(axis=0), 1e-2).astype(head.gain.data.dtype)
    else:
        finals = [img.transpose(1, 2, 0) for img in prep.targets[:, -1]]
        mean = model.ae.encode_images(finals).mean(axis=0)
        model.readout.b.data = mean.astype(model.readout.b.data.dtype)


def save_model_checkpoint(
    path, model, num_labels: int, epoch: int, best_val: float,
    curve: list, opt: AdamState | None = None, rng=None,
) -> None:
    tensors = {f"param.{k}": v.data for k, v in model.named().items()}
    meta = {
        "kind": "model",
        "config": dataclasses.asdict(model.config),
        "num_labels": num_labels,
        "epoch": epoch,
        "best_val": best_val,
        "curve": curve,
        "ae_meta": None,
    }
    if model.ae is not None:
        ae = model.ae
        tensors.update({f"frozen.{k}": v.data for k, v in ae.named().items()})
        meta["ae_meta"] = {
            "height": ae.height, "width": ae.width, "channels": ae.channels,
            "widths": list(ae.widths), "bottleneck": ae.bottleneck,
            "dtype": np.dtype(ae.dtype).name,
        }
    if opt is not None:
        tensors.update({f"adam_m.{k}": v for k, v in opt.m.items()})
        tensors.update({f"adam_v.{k}": v for k, v in opt.v.items()})
        meta["adam"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "step_count": opt.step_count,
        }
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    save_checkpoint(path, tensors, meta)


@dataclass
class ModelBundle:
    model: object
    config: TrainConfig
    num_labels: int
    epoch: int
    best_val: float
    curve: list
    opt: AdamState | None
    rng_state: dict | None


def load_model_checkpoint(path) -> ModelBundle:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise ContractError(f"{path} holds a {meta.get('kind')!r} checkpoint, not a model")
    config = config_from_dict(TrainConfig, meta["config"])
    ae = None
    if meta["ae_meta"] is not None:
        am = meta["ae_meta"]
        ae = Autoencoder(
            am["height"], am["width"], am["channels"], np.random.default_rng(0),
            widths=tuple(am["widths"]), bottleneck=am["bottleneck"],
            dtype=np.dtype(am["dtype"]),
        )
        for name, param in ae.named().items():
            param.data = tensors[f"frozen.{name}"]
        ae.set_frozen(True)
    dtype = np.dtype(tensors["param.gcn.node_emb"].dtype)
    model = assemble_model(config, ae, meta["num_labels"], np.random.default_rng(0), dtype)
    for name, param in model.named().items():
        param.data = tensors[f"param.{name}"]
    opt = None
    if "adam" in meta:
        params = model.named()
        opt = AdamState(params, lr=meta["adam"]["lr"])
        opt.beta1, opt.beta2 = meta["adam"]["beta1"], meta["adam"]["beta2"]
        opt.eps = meta["adam"]["eps"]
        opt.step_count = meta["adam"]["step_count"]
        for name in params:
            opt.m[name] = tensors[f"adam_m.{name}"]
            opt.v[name] = tensors[f"adam_v.{name}"]
    return ModelBundle(
        model, config, meta["num_labels"], meta["epoch"], meta["best_val"],
        meta.get("curve", []), opt, meta.get("rng_state"),
    )


@dataclass
class TrainResult:
    last_path: Path
    best_path: Path
    curve: list  # [epoch, train_mse, train_final_mse, val_mse] rows
    best_val: float
    steps_run: int


def _check_manifest(config: TrainConfig, manifest: dict):
    for key in ("rows", "cols", "cell", "channels", "source"):
        if manifest[key] != getattr(config, key):
            raise ContractError(
                f"dataset {key}={manifest[key]!r} does not match config {getattr(config, key)!r}"
            )


def _validation_mse(model, prep: PreparedSplit, batch_size: int) -> float:
    """Autoregressive final-image MSE over a split; no teacher forcing."""
    total, count = 0.0, 0
    for start in range(0, prep.count, batch_size):
        idx = np.arange(start, min(start + batch_size, prep.count))
        finals = model.final_images(prep, idx)
        total += float(np.sum((finals - prep.targets[idx][:, -1]) ** 2))
        count += finals.size
    return total / count


def curve_csv(curve: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "train_mse", "val_mse"])
    writer.writerows([row[0], row[1], row[3]] for row in curve)
    return buf.getvalue()


def train_model(config: TrainConfig, resume=None, log=None) -> TrainResult:
    config.validate()
    manifest = load_manifest(config.dataset_dir)
    _check_manifest(config, manifest)
    num_labels = manifest["num_labels"]
    out_dir = Path(config.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    if resume is None:
        ae = None
        if config.model_variant != "no_ae":
            if not config.ae_path:
                raise ContractError(f"variant {config.model_variant} needs ae_path set")
            ae = load_autoencoder(config.ae_path)
        model = assemble_model(config, ae, num_labels, rng)
        opt = AdamState(model.named(), lr=config.learning_rate)
        first_epoch, best_val, curve = 0, float("inf"), []
    else:
        bundle = load_model_checkpoint(resume)
        # budget and output location may change across resumes; nothing else may
        budget = {"epochs", "max_steps", "target_final_mse", "out_dir"}
        old, new = dataclasses.asdict(bundle.config), dataclasses.asdict(config)
        changed = sorted(
            k for k in new if k not in budget and old[k] != new[k]
        )
        if changed:
            raise ContractError(f"resume config changes non-budget fields {changed}")
        if bundle.opt is None or bundle.rng_state is None:
            raise ContractError(f"{resume} lacks optimizer/rng state; cannot resume from it")
        model, opt = bundle.model, bundle.opt
        model.config = config
        rng.bit_generator.state = bundle.rng_state
        first_epoch, best_val, curve = bundle.epoch, bundle.best_val, bundle.curve

    train_recs = load_split(config.dataset_dir, manifest, "train")
    val_recs = load_split(config.dataset_dir, manifest, "val")
    # teacher forcing needs per-step features only for the full variant
    train_prep = prepare_split(
        train_recs, model.ae, config, with_feats=config.model_variant == "full"
    )
    if resume is None:
        warm_start_outputs(model, train_prep)
    val_prep = prepare_split(val_recs, model.ae, config, with_feats=False)

    params = model.named()
    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"
    steps_run = opt.step_count
    k = train_prep.steps

    for epoch in range(first_epoch, config.epochs):
        if config.max_steps and steps_run >= config.max_steps:
            break
        order = rng.permutation(train_prep.count)
        epoch_loss, epoch_final, batches = 0.0, 0.0, 0
        for batch_start in range(0, train_prep.count, config.batch_size):
            if config.max_steps and steps_run >= config.max_steps:
                break
            idx = order[batch_start : batch_start + config.batch_size]
            window_start = int(rng.integers(0, k)) if config.random_prefix else 0
            try:
                with Tape() as tape:
                    for p in params.values():
                        tape.watch(p)
                    loss, stats = model.loss_on_batch(train_prep, idx, window_start)
                grads = collect_grads(backward(tape, loss), params)
                norm = clip_global_norm(grads, 1.0)
                if norm > 1.0 and log:
                    log(f"epoch {epoch}: clipped gradient norm {norm:.2f}")
                adam_step(params, grads, opt)
            except NumericError as e:
                raise NumericError(
                    f"training diverged at epoch {epoch}, step {steps_run}: {e}"
                ) from e
            epoch_loss += loss.item()
            epoch_final += stats["final_mse"]
            batches += 1
            steps_run += 1
        if not batches:
            break
        val_mse = _validation_mse(model, val_prep, config.batch_size)
        row = [epoch, epoch_loss / batches, epoch_final / batches, val_mse]
        curve.append(row)
        if log:
            log(f"epoch {epoch}: train {row[1]:.6f} final {row[2]:.6f} val {val_mse:.6f}")
        if val_mse < best_val:
            best_val = val_mse
            save_model_checkpoint(best_path, model, num_labels, epoch + 1, best_val, curve)
        save_model_checkpoint(
            last_path, model, num_labels, epoch + 1, best_val, curve, opt=opt, rng=rng
        )
        if config.target_final_mse and row[2] < config.target_final_mse:
            break

    if not last_path.exists():  # epochs == 0: still emit a loadable model
        save_model_checkpoint(
            last_path, model, num_labels, first_epoch, best_val, curve, opt=opt, rng=rng
        )
    if not best_path.exists():
        save_model_checkpoint(best_path, model, num_labels, first_epoch, best_val, curve)
    (out_dir / "loss_curve.csv").write_text(curve_csv(curve))
    return TrainResult(last_path, best_path, curve, best_val, steps_run)


def _to_hwc(images: np.ndarray) -> list[np.ndarray]:
    return [img.transpose(1, 2, 0).astype(float) for img in images]


def evaluate_checkpoint(
    ckpt_path, split: str = "test", classifier_path=None, dataset_dir=None, batch_size: int = 64
):
    """Autoregressive generation for every record of a split, full metric table."""
    bundle = load_model_checkpoint(ckpt_path)
    model, config = bundle.model, bundle.config
    data_dir = dataset_dir or config.dataset_dir
    manifest = load_manifest(data_dir)
    _check_manifest(config, manifest)
    records = load_split(data_dir, manifest, split)
    prep = prepare_split(records, model.ae, config, with_feats=False)

    generated = []
    for start in range(0, prep.count, batch_size):
        idx = np.arange(start, min(start + batch_size, prep.count))
        generated.extend(_to_hwc(model.final_images(prep, idx)))
    truths = [rec.final.astype(float) for rec in records]

    classifier = load_classifier(classifier_path) if classifier_path else None
    report = build_report(
        list(zip(generated, truths)),
        config={
            "checkpoint": str(ckpt_path),
            "dataset": str(data_dir),
            "split": split,
            "variant": config.model_variant,
            "records": len(records),
        },
        classifier=classifier,
        graphs=[rec.graph for rec in records] if classifier else None,
        rows=config.rows,
        cols=config.cols,
    )
    if model.ae is not None:
        # encoder features, not an external network: values comparable only
        # across runs of this toolkit
        report.aggregate["fid"] = fid(
            model.ae.encode_images(generated), model.ae.encode_images(truths)
        )
        report.config["fid_features"] = "frozen autoencoder encoder"
    else:
        report.config["fid_features"] = "skipped: no autoencoder in this checkpoint"
    return report


def generate_from_graph(ckpt_path, graph: SceneGraph, partial=None, filled: int = 0):
    """Step images for one graph, optionally resuming a partial rendering.

    Returns (list of (H, W, C) float images, trace dict).  The number of
    generation steps is node_count - filled; `partial` is the canvas the
    filled cells already occupy and stands in for the black SOS image.
    """
    bundle = load_model_checkpoint(ckpt_path)
    model, config = bundle.model, bundle.config
    if filled < 0:
        raise ContractError(f"filled cell count must be >= 0, got {filled}")
    if filled and partial is None:
        raise ContractError("filled > 0 needs a partial rendering to start from")
    steps = graph.node_count - filled
    if steps < 1:
        raise ContractError(
            f"{filled} filled cells leave no steps for a {graph.node_count}-node graph"
        )
    shape = (config.rows * config.cell, config.cols * config.cell, config.channels)
    if partial is not None and partial.shape != shape:
        raise ContractError(f"partial rendering shape {partial.shape} != grid shape {shape}")

    if not model.stepwise:
        if partial is not None:
            raise ContractError(
                f"variant {model.variant} generates single-shot finals; "
                "partial renderings need the full or no_ae variant"
            )
        dummy = np.zeros((1, 1, shape[2], shape[0], shape[1]), TRAIN_DTYPE)
        prep = PreparedSplit([graph], dummy, None, np.zeros(1, TRAIN_DTYPE))
        images = _to_hwc(model.final_images(prep, np.array([0])))
    else:
        start = partial if partial is not None else np.zeros(shape)
        if model.ae is not None:
            token = model.ae.encode(
                Tensor(start.transpose(2, 0, 1)[None], dtype=model.ae.dtype)
            ).data[0].astype(model.dtype)
        else:
            token = start.transpose(2, 0, 1).reshape(-1).astype(model.dtype)
        memory = model.memory([graph], [0])
        feats = generate(model.decoder, memory, token[None], steps)
        if model.ae is not None:
            decoded = model.ae.decode(Tensor(feats[0], dtype=model.ae.dtype)).data
        else:
            decoded = np.clip(feats[0], 0.0, 1.0).reshape(steps, shape[2], shape[0], shape[1])
        images = _to_hwc(decoded)
    trace = {
        "variant": model.variant,
        "node_count": graph.node_count,
        "filled": filled,
        "steps": len(images),
        "partial_start": partial is not None,
    }
    return images, trace


def run_ablation(base: TrainConfig, out_dir, log=None) -> list[dict]:
    """Desk-scale sweep: the four model variants, then attention depth and
    head counts varied one axis at a time around the base setting.

    Each run trains under the same seed and budget, then scores the test
    split autoregressively.  Returns the combined rows; `ablation_csv`
    renders them.
    """
    out_dir = Path(out_dir)
    rows: list[dict] = []

    def one_run(tag: str, cfg: TrainConfig) -> dict:
        cfg = dataclasses.replace(cfg, out_dir=str(out_dir / tag))
        cfg.validate()
        if log:
            log(f"[{tag}] training {cfg.model_variant} layers={cfg.layers} heads={cfg.heads}")
        result = train_model(cfg, log=log)
        report = evaluate_checkpoint(result.best_path, split="test")
        agg = report.aggregate
        row = {
            "run": tag,
            "variant": cfg.model_variant,
            "layers": cfg.layers,
            "heads": cfg.heads,
            "steps": result.steps_run,
            "val_mse": result.curve[-1][3] if result.curve else float("nan"),
            "mse": agg["mse"],
            "ssim": agg["ssim"],
            "ms_ssim": agg["ms_ssim"],
            "fid": agg.get("fid", float("nan")),
        }
        if log:
            log(f"[{tag}] ssim {row['ssim']:.4f} mse {row['mse']:.6f}")
        return row

    variant_rows = {}
    for variant in ("gcn_only", "gcn_encoder", "full", "no_ae"):
        cfg = dataclasses.replace(base, model_variant=variant)
        if variant == "no_ae":
            cfg = dataclasses.replace(cfg, d_model=cfg.pixel_width, ae_path="")
        variant_rows[variant] = one_run(f"variant_{variant}", cfg)
        rows.append(variant_rows[variant])

    # depth and head sweeps run the full variant, reusing the base run
    sweep_base = dataclasses.replace(base, model_variant="full")
    sweep_cache = {(base.layers, base.heads): variant_rows["full"]}
    for axis, values in (("layers", (2, 4, 8)), ("heads", (2, 4, 8))):
        for value in values:
            key = (value, base.heads) if axis == "layers" else (base.layers, value)
            if key not in sweep_cache:
                sweep_cache[key] = one_run(
                    f"sweep_{axis}{value}", dataclasses.replace(sweep_base, **{axis: value})
                )
            row = dict(sweep_cache[key])
            row["run"] = f"sweep_{axis}{value}"
            rows.append(row)
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf,
        fieldnames=[
            "run", "variant", "layers", "heads", "steps",
            "val_mse", "mse", "ssim", "ms_ssim", "fid",
        ],
    )
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
