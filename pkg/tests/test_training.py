import dataclasses

import numpy as np
import pytest

from gridscene.autoencoder import Autoencoder, save_autoencoder
from gridscene.config import TrainConfig
from gridscene.gridsets import build_grid_dataset, load_manifest, load_split
from gridscene.scenegraph import SceneGraph
from gridscene.sources import load_mnist_idx, synthesize_mnist_style
from gridscene.tensor import ContractError, Tensor
from gridscene.training import (
    FullModel,
    GcnOnlyModel,
    _sum_nodes,
    ablation_csv,
    assemble_model,
    evaluate_checkpoint,
    generate_from_graph,
    load_model_checkpoint,
    prepare_split,
    run_ablation,
    save_model_checkpoint,
    train_model,
)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny dataset (2x2 grid of 8px cells) plus a frozen random autoencoder."""
    base = tmp_path_factory.mktemp("train_ws")
    synthesize_mnist_style(40, seed=21, images_path=base / "img", labels_path=base / "lab")
    sources = load_mnist_idx(base / "img", base / "lab")
    build_grid_dataset(
        sources, 2, 2, count=12, seed=9, out_dir=base / "data",
        source_name="mnist", cell=8,
    )
    ae = Autoencoder(16, 16, 1, np.random.default_rng(4), widths=(8, 16), bottleneck=32)
    save_autoencoder(base / "ae.ckpt", ae)
    return base


def tiny_config(workspace, **overrides) -> TrainConfig:
    cfg = TrainConfig(
        model_variant="full",
        source="mnist",
        rows=2,
        cols=2,
        cell=8,
        channels=1,
        epochs=2,
        batch_size=4,
        learning_rate=1e-3,
        seed=5,
        layers=1,
        heads=2,
        d_model=32,
        ffn_width=32,
        embed_width=8,
        gcn_layers=2,
        bottleneck=32,
        dataset_dir=str(workspace / "data"),
        ae_path=str(workspace / "ae.ckpt"),
    )
    return dataclasses.replace(cfg, **overrides)


@pytest.fixture(scope="module")
def prepared(workspace):
    cfg = tiny_config(workspace)
    manifest = load_manifest(cfg.dataset_dir)
    records = load_split(cfg.dataset_dir, manifest, "train")
    model = assemble_model(
        cfg,
        __load_ae(workspace),
        manifest["num_labels"],
        np.random.default_rng(cfg.seed),
    )
    prep = prepare_split(records, model.ae, cfg)
    return model, prep, records


def __load_ae(workspace):
    from gridscene.autoencoder import load_autoencoder

    return load_autoencoder(workspace / "ae.ckpt")


def test_loss_nonnegative_and_supervised_step_count(prepared):
    model, prep, _ = prepared
    loss, stats = model.loss_on_batch(prep, np.arange(4))
    assert loss.item() >= 0.0
    # one supervised step per grid cell: every intermediate plus the final
    assert stats["steps"] == prep.steps == 4


def test_untrained_loss_matches_constant_predictor(prepared):
    # an untrained sigmoid decoder emits images hovering around mid-gray,
    # so the loss should land near the analytic MSE of a 0.5 predictor
    model, prep, _ = prepared
    loss, _ = model.loss_on_batch(prep, np.arange(prep.count))
    energy = float(np.mean((prep.targets - 0.5) ** 2))
    assert abs(loss.item() - energy) < 0.15


def test_window_start_bounds(prepared):
    model, prep, _ = prepared
    loss, stats = model.loss_on_batch(prep, np.arange(4), start=2)
    assert stats["steps"] == 2
    with pytest.raises(ContractError):
        model.loss_on_batch(prep, np.arange(4), start=4)


def test_sum_readout_node_permutation_invariant(workspace):
    x = np.random.default_rng(0).normal(size=(3, 5, 7))
    a = _sum_nodes(Tensor(x)).data
    b = _sum_nodes(Tensor(x[:, ::-1])).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    cfg = tiny_config(workspace, model_variant="gcn_only")
    model = assemble_model(cfg, __load_ae(workspace), 10, np.random.default_rng(3))
    g1 = SceneGraph(((0, 3), (1, 7)), ((0, "left_of", 1),))
    g2 = SceneGraph(((0, 7), (1, 3)), ((1, "left_of", 0),))
    p1 = model._predict(_fake_prep([g1]), [0]).data
    p2 = model._predict(_fake_prep([g2]), [0]).data
    np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-5)


def _fake_prep(graphs, sos_width=1):
    from gridscene.training import PreparedSplit

    dummy = np.zeros((len(graphs), 1, 1, 16, 16), np.float32)
    return PreparedSplit(graphs, dummy, None, np.zeros(sos_width, np.float32))


def test_gcn_only_is_a_strict_submodel(workspace):
    full = assemble_model(tiny_config(workspace), __load_ae(workspace), 10, np.random.default_rng(0))
    small = assemble_model(
        tiny_config(workspace, model_variant="gcn_only"),
        __load_ae(workspace), 10, np.random.default_rng(0),
    )
    count = lambda m: sum(p.data.size for p in m.named().values())
    assert count(small) < count(full)


def test_variant_width_rules(workspace):
    with pytest.raises(ContractError):
        assemble_model(
            tiny_config(workspace, model_variant="no_ae"),  # wrong d_model
            None, 10, np.random.default_rng(0),
        )
    with pytest.raises(ContractError):
        assemble_model(tiny_config(workspace), None, 10, np.random.default_rng(0))
    no_ae = assemble_model(
        tiny_config(workspace, model_variant="no_ae", d_model=256),
        None, 10, np.random.default_rng(0),
    )
    assert no_ae.decoder.d_model == 256  # flattened 16x16 pixels


def test_train_returns_decreasing_loss_and_artifacts(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=3, out_dir=str(tmp_path / "run"))
    result = train_model(cfg)
    assert len(result.curve) == 3
    assert result.curve[-1][1] < result.curve[0][1]
    assert result.last_path.exists() and result.best_path.exists()
    csv_text = (tmp_path / "run" / "loss_curve.csv").read_text()
    assert csv_text.splitlines()[0] == "epoch,train_mse,val_mse"
    assert len(csv_text.splitlines()) == 4


def test_same_seed_same_run_same_checkpoint_bytes(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=1, out_dir=str(tmp_path / "det"))
    first = train_model(cfg)
    bytes_one = first.last_path.read_bytes()
    curve_one = [list(r) for r in first.curve]
    second = train_model(cfg)
    assert [list(r) for r in second.curve] == curve_one
    assert second.last_path.read_bytes() == bytes_one


def test_frozen_ae_survives_training_bitwise(workspace, tmp_path):
    ae = __load_ae(workspace)
    before = {k: p.data.astype(np.float32) for k, p in ae.named().items()}
    cfg = tiny_config(workspace, epochs=2, out_dir=str(tmp_path / "frz"))
    result = train_model(cfg)
    bundle = load_model_checkpoint(result.last_path)
    for name, param in bundle.model.ae.named().items():
        assert np.array_equal(param.data, before[name]), name


def test_model_checkpoint_round_trip(prepared, tmp_path):
    model, prep, _ = prepared
    path = tmp_path / "m.ckpt"
    save_model_checkpoint(path, model, 10, epoch=0, best_val=float("inf"), curve=[])
    bundle = load_model_checkpoint(path)
    assert bundle.config == model.config
    want, _ = model.loss_on_batch(prep, np.arange(4))
    got, _ = bundle.model.loss_on_batch(prep, np.arange(4))
    assert want.item() == got.item()
    second = tmp_path / "m2.ckpt"
    save_model_checkpoint(second, bundle.model, 10, epoch=0, best_val=float("inf"), curve=[])
    assert path.read_bytes() == second.read_bytes()


def test_resume_reproduces_uninterrupted_run_bitwise(workspace, tmp_path):
    out = tmp_path / "resume"
    cfg = tiny_config(workspace, epochs=2, out_dir=str(out))
    uninterrupted = train_model(cfg).last_path.read_bytes()
    for stale in out.iterdir():
        stale.unlink()
    train_model(dataclasses.replace(cfg, epochs=1))
    resumed = train_model(cfg, resume=out / "last.ckpt").last_path.read_bytes()
    assert resumed == uninterrupted


def test_resume_rejects_incompatible_config(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=1, out_dir=str(tmp_path / "rr"))
    result = train_model(cfg)
    with pytest.raises(ContractError, match="d_model"):
        train_model(
            dataclasses.replace(cfg, d_model=64, bottleneck=64), resume=result.last_path
        )
    with pytest.raises(ContractError, match="optimizer"):
        train_model(cfg, resume=result.best_path)


def test_epochs_zero_still_writes_a_loadable_checkpoint(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=0, out_dir=str(tmp_path / "zero"))
    result = train_model(cfg)
    assert result.curve == []
    bundle = load_model_checkpoint(result.last_path)
    prep = _fake_prep([SceneGraph(((0, 1), (1, 2)), ())], sos_width=32)
    assert bundle.model.final_images(prep, [0]).shape == (1, 1, 16, 16)


def test_evaluate_reports_all_table_columns(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=1, out_dir=str(tmp_path / "ev"))
    result = train_model(cfg)
    report = evaluate_checkpoint(result.last_path, split="test")
    for column in ("mse", "ssim", "ms_ssim", "fid"):
        assert column in report.aggregate
    assert report.config["variant"] == "full"
    assert len(report.per_record) == 3


def test_generate_from_blank_and_partial(workspace, tmp_path):
    cfg = tiny_config(workspace, epochs=1, out_dir=str(tmp_path / "gen"))
    result = train_model(cfg)
    manifest = load_manifest(cfg.dataset_dir)
    rec = load_split(cfg.dataset_dir, manifest, "test")[0]

    images, trace = generate_from_graph(result.last_path, rec.graph)
    assert len(images) == 4 and images[0].shape == (16, 16, 1)
    assert trace["steps"] == 4 and not trace["partial_start"]

    partial = rec.intermediates[1]  # two cells already pasted
    images, trace = generate_from_graph(result.last_path, rec.graph, partial, filled=2)
    assert len(images) == 2 and trace["filled"] == 2

    with pytest.raises(ContractError, match="no steps"):
        generate_from_graph(result.last_path, rec.graph, partial, filled=4)
    with pytest.raises(ContractError, match="needs a partial"):
        generate_from_graph(result.last_path, rec.graph, filled=1)


def test_single_shot_variants_reject_partials(workspace, tmp_path):
    cfg = tiny_config(
        workspace, model_variant="gcn_only", epochs=0, out_dir=str(tmp_path / "ss")
    )
    result = train_model(cfg)
    manifest = load_manifest(cfg.dataset_dir)
    rec = load_split(cfg.dataset_dir, manifest, "test")[0]
    images, trace = generate_from_graph(result.last_path, rec.graph)
    assert len(images) == 1 and trace["variant"] == "gcn_only"
    with pytest.raises(ContractError, match="single-shot"):
        generate_from_graph(result.last_path, rec.graph, rec.intermediates[0], filled=1)


def test_ablation_emits_four_variant_and_six_sweep_rows(workspace, tmp_path):
    base = tiny_config(workspace, epochs=1, layers=2, out_dir="")
    rows = run_ablation(base, tmp_path / "abl")
    assert [r["run"] for r in rows[:4]] == [
        "variant_gcn_only", "variant_gcn_encoder", "variant_full", "variant_no_ae",
    ]
    sweep = rows[4:]
    assert [r["run"] for r in sweep] == [
        "sweep_layers2", "sweep_layers4", "sweep_layers8",
        "sweep_heads2", "sweep_heads4", "sweep_heads8",
    ]
    # sweep cells matching the base geometry reuse the full-variant run
    base_row = next(r for r in rows if r["run"] == "variant_full")
    assert next(r for r in sweep if r["run"] == "sweep_layers2")["ssim"] == base_row["ssim"]
    assert next(r for r in sweep if r["run"] == "sweep_heads2")["ssim"] == base_row["ssim"]
    text = ablation_csv(rows)
    assert text.splitlines()[0].startswith("run,variant,layers,heads")
    assert len(text.splitlines()) == 11
