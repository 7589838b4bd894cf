# Copyright 2026 The signreg Authors
# SPDX-License-Identifier: Apache-2.0
import math
import os
import subprocess

import numpy as np
import pytest

import signreg


def small_mlp(inputs, classes, hidden=8, seed=0):
    spec = signreg.ModelSpec()
    spec.arch = "small-mlp"
    spec.input_shape = [inputs]
    spec.num_classes = classes
    spec.hidden = [hidden]
    spec.init_seed = seed
    return signreg.build_model(spec)


def test_model_predicts_batches():
    model = small_mlp(4, 3)
    logits, sigma = model.predict(np.zeros((5, 4)))
    assert logits.shape == (5, 3)
    assert sigma is None
    assert len(model.checksum()) == 16


def test_cross_entropy_uniform_logits():
    loss = signreg.cross_entropy(np.zeros((2, 4)), np.eye(4)[[0, 3]])
    assert loss == pytest.approx(math.log(4.0), rel=1e-14)


def test_aleatoric_loss_matches_cross_entropy_for_tiny_sigma():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(3, 4))
    ce = signreg.cross_entropy(f, np.eye(4)[[0, 1, 2]])
    al = signreg.aleatoric_loss(f, np.full((3, 4), 1e-12), [0, 1, 2], mc_samples=5)
    assert abs(al - ce) < 1e-9


def test_sign_transform_returns_decomposition():
    model = small_mlp(6, 2)
    x = np.linspace(-1.0, 1.0, 6)
    out, delta, norms = signreg.sign_transform(model, x, k=3, step_scale=0.1)
    np.testing.assert_allclose(out, x + delta, atol=1e-12)
    assert len(norms) == 3
    jac = signreg.summed_jacobian(model, x[None, :])
    first, _, _ = signreg.sign_transform(model, x, k=1, step_scale=1.0)
    np.testing.assert_allclose(first, x + jac[0], atol=1e-12)


def test_mixup_and_beta():
    a, b = np.ones(3), np.zeros(3)
    img, lab = signreg.mixup(a, np.array([1.0, 0.0]), b, np.array([0.0, 1.0]), 0.25)
    np.testing.assert_allclose(img, 0.25)
    np.testing.assert_allclose(lab, [0.25, 0.75])
    draws = np.array(signreg.beta_samples(0.2, 0.2, 20000, seed=1))
    assert abs(draws.mean() - 0.5) < 0.02


def test_corruption_and_errors():
    img = np.full((3, 4, 4), 200.0)
    out = signreg.corrupt(img, "pixel-off:5", seed=2)
    assert int((out[0] == 0).sum()) == 5
    with pytest.raises(signreg.SignregError):
        signreg.corrupt(img, "blur:3")


def test_train_and_evaluate_blobs():
    data = signreg.synthetic_blobs(3, 30, [1, 6, 6], 10.0, seed=1)
    tx, ty = data["train"]
    vx, vy = data["val"]
    mean, std = tx.mean(), tx.std()
    norm = lambda a: (a - mean) / std
    spec = signreg.ModelSpec()
    spec.arch = "small-mlp"
    spec.input_shape = [1, 6, 6]
    spec.num_classes = 3
    spec.hidden = [16]
    model, val_acc = signreg.train(signreg.build_model(spec), norm(tx), ty, norm(vx), vy,
                                   epochs=4, batch_size=16)
    assert len(val_acc) == 4
    report = signreg.evaluate(model, norm(vx), vy)
    assert 0.0 <= report["mean_accuracy"] <= 1.0
    assert len(report["per_class"]) == 3


def test_checkpoint_round_trip(tmp_path):
    model = small_mlp(4, 2, seed=3)
    path = tmp_path / "m.ckpt"
    signreg.save_checkpoint(str(path), model, '{"role": "test"}')
    back, meta = signreg.load_checkpoint(str(path))
    assert back.checksum() == model.checksum()
    assert "test" in meta


def test_projection_variances():
    rows = [[3.0 * math.cos(i), 0.1 * math.sin(3 * i), 0.0] for i in range(50)]
    coords, variance = signreg.project_rows(rows, [0] * 50)
    assert len(coords) == 50
    assert variance[0] >= variance[1] >= 0.0


@pytest.mark.skipif("SIGNREG_TOOL" not in os.environ, reason="command-line tool not built")
def test_cli_exit_codes(tmp_path):
    tool = os.environ["SIGNREG_TOOL"]
    assert subprocess.run([tool, "repro", "nonsense"], capture_output=True).returncode == 1
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nbogus = 1\n")
    res = subprocess.run([tool, "train", str(cfg)], capture_output=True, text=True)
    assert res.returncode == 1
    assert "train.bogus" in res.stderr
