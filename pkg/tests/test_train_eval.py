import csv
import dataclasses
import json

import numpy as np
import pytest
import torch

from mvweak.base_model import BaseOutputs, build_base_model
from mvweak.config import TrainConfig, scaled_downstream_config, scaled_model_config
from mvweak.errors import ConfigError, DataError
from mvweak.train_eval import (
    TABLE_COLUMNS,
    base_total_loss,
    binary_cross_entropy,
    evaluate_downstream,
    extract_embeddings,
    load_embeddings,
    run_ablation_matrix,
    task_targets,
    train_base,
    train_downstream,
    write_history,
    write_metrics,
    write_table_csv,
)
from mvweak.weak_latent_loss import weak_label_latent_loss

FAST = TrainConfig(epochs=3, batch_size=4)


def random_outputs(seed=0, K=4):
    g = torch.Generator().manual_seed(seed)
    rho = torch.nn.functional.normalize(torch.randn(K, 2, 8, 16, generator=g), dim=-1)
    frames = torch.rand(K, 8, 3, generator=g)
    return BaseOutputs(rho, frames, frames.mean(1), torch.randn(K, 8, 16, generator=g))


def test_task_targets():
    labels = np.array([[[1, 0, 0], [0, 0, 0], [0, 1, 1]]], dtype=np.float32)
    assert task_targets(labels, "detection")[0, :, 0].tolist() == [1, 0, 1]
    assert task_targets(labels, "recognition") is labels
    with pytest.raises(ConfigError):
        task_targets(labels, "segmentation")


def test_bce_clamps():
    assert torch.isfinite(binary_cross_entropy(torch.tensor([0.0, 1.0]), torch.tensor([1.0, 0.0])))
    perfect = binary_cross_entropy(torch.tensor([1.0, 0.0]), torch.tensor([1.0, 0.0]))
    assert 0 < perfect.item() < 2e-7


def test_total_loss_is_documented_sum():
    out = random_outputs()
    bags = torch.tensor([[1, 0, 1], [0, 1, 1], [1, 1, 0], [0, 0, 1]], dtype=torch.float32)
    total, bce, per_view = base_total_loss(out, bags, 0.7)
    expected = binary_cross_entropy(out.bag_pred, bags) + 0.7 * sum(
        weak_label_latent_loss(out.rho[:, s], bags) for s in range(2))
    torch.testing.assert_close(total, expected)
    assert len(per_view) == 2


def test_total_loss_linear_in_weight():
    out = random_outputs(1)
    bags = torch.tensor([[1, 0, 1], [0, 1, 1], [1, 1, 0], [0, 0, 1]], dtype=torch.float32)
    L = {w: base_total_loss(out, bags, w)[0].item() for w in (0.0, 1.0, 2.5)}
    assert L[0.0] == pytest.approx(binary_cross_entropy(out.bag_pred, bags).item())
    assert L[2.5] - L[0.0] == pytest.approx(2.5 * (L[1.0] - L[0.0]), abs=1e-6)


def test_degenerate_perfect_batch_has_near_zero_loss():
    out = random_outputs()
    bags = torch.ones(4, 3)
    out = out._replace(bag_pred=torch.ones(4, 3))
    total, _, per_view = base_total_loss(out, bags)
    assert total.item() < 1e-6 and all(v.item() == 0 for v in per_view)


def test_train_base_is_deterministic(tiny_arrays):
    train, _ = tiny_arrays
    _, h1 = train_base(train, scaled_model_config(), FAST)
    _, h2 = train_base(train, scaled_model_config(), FAST)
    assert h1 == h2
    assert set(h1[0]) == {"epoch", "total", "bce", "latent_per_view"}
    assert len(h1[0]["latent_per_view"]) == 2


def test_zero_latent_weight_still_logs_latents(tiny_arrays):
    train, _ = tiny_arrays
    _, hist = train_base(train, scaled_model_config(), dataclasses.replace(FAST, latent_weight=0.0))
    for rec in hist:
        assert rec["total"] == pytest.approx(rec["bce"], abs=1e-6)


def test_train_base_loss_decreases(tiny_arrays):
    train, _ = tiny_arrays
    _, hist = train_base(train, scaled_model_config(), TrainConfig(epochs=30, batch_size=4))
    assert hist[-1]["total"] < hist[0]["total"]


def test_tiny_learning_rate_leaves_parameters(tiny_arrays):
    train, _ = tiny_arrays
    model, _ = train_base(train, scaled_model_config(), TrainConfig(epochs=1, batch_size=4, lr=1e-30))
    fresh = build_base_model(scaled_model_config(), 0)
    for a, b in zip(model.parameters(), fresh.parameters()):
        assert torch.equal(a, b)


def test_embeddings_roundtrip_and_unit_norm(tiny_arrays, tmp_path):
    train, _ = tiny_arrays
    model, _ = train_base(train, scaled_model_config(), FAST)
    store = extract_embeddings(model, train, tmp_path / "emb")
    again = extract_embeddings(model, train)
    for sid in train.ids:
        assert store[sid].shape == (2, 8, 16)
        assert store[sid].tobytes() == again[sid].tobytes()
        np.testing.assert_allclose(np.linalg.norm(store[sid], axis=-1), 1.0, atol=1e-5)
    stacked = load_embeddings(tmp_path / "emb", train, scaled_downstream_config())
    assert stacked.shape == (len(train), 2, 8, 16)
    with pytest.raises(ConfigError):
        load_embeddings(tmp_path / "emb", train, scaled_downstream_config(d_model=8, num_heads=2))


@pytest.mark.parametrize("task,n_out", [("detection", 1), ("recognition", 3)])
def test_train_and_evaluate_downstream(tiny_arrays, task, n_out):
    train, test = tiny_arrays
    cfg = scaled_downstream_config(num_task_classes=n_out, use_latents=False)
    model, hist = train_downstream(train, None, cfg, TrainConfig(epochs=20, batch_size=4), task)
    assert hist[-1]["total"] < hist[0]["total"]
    report = evaluate_downstream(model, test, None, task)
    assert report.task == task and 0.0 <= report.accuracy <= 1.0


def test_downstream_errors(tiny_arrays):
    train, _ = tiny_arrays
    with pytest.raises(DataError):
        train_downstream(train, None, scaled_downstream_config(), FAST, "detection")
    with pytest.raises(ConfigError):
        train_downstream(train, None, scaled_downstream_config(use_latents=False), FAST, "recognition")
    model, _ = train_downstream(train, None, scaled_downstream_config(num_task_classes=3, use_latents=False),
                                dataclasses.replace(FAST, epochs=1), "recognition")
    with pytest.raises(ConfigError):
        evaluate_downstream(model, train, None, "detection")


def test_history_and_metrics_files(tmp_path, tiny_arrays):
    write_history(tmp_path / "h.jsonl", [{"epoch": 0, "total": 1.0, "bce": 1.0, "latent_per_view": [0.0]}])
    assert json.loads((tmp_path / "h.jsonl").read_text().splitlines()[0])["epoch"] == 0
    train, test = tiny_arrays
    model, _ = train_downstream(train, None, scaled_downstream_config(use_latents=False),
                                dataclasses.replace(FAST, epochs=1), "detection")
    write_metrics(tmp_path / "m.json", evaluate_downstream(model, test, None, "detection"))
    data = json.loads((tmp_path / "m.json").read_text())
    assert {"accuracy", "mean_ap", "macro_f1", "per_class", "task"} <= set(data)


def test_ablation_table_layout(tiny_arrays, tmp_path):
    train, test = tiny_arrays
    one = TrainConfig(epochs=1, batch_size=4)
    rows, raw = run_ablation_matrix(train, test, scaled_model_config(), scaled_downstream_config(), one, one,
                                    seeds=(0,))
    assert [r["Algo."] for r in rows] == ["Proposed", "Ablation-A", "Ablation-B", "Ablation-C", "Ablation-D"]
    assert rows[4]["Latent Space"] == "single" and rows[4]["PTB opera."] == "mean"
    write_table_csv(tmp_path / "t.csv", rows)
    with open(tmp_path / "t.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == TABLE_COLUMNS and len(table) == 6
    rows2, _ = run_ablation_matrix(train, test, scaled_model_config(), scaled_downstream_config(), one, one,
                                   seeds=(0,))
    assert rows == rows2
