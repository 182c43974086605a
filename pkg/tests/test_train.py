import math

import numpy as np
import pytest

from udrmixer.imageio import DatasetError, read_png, to_uint8, write_png
from udrmixer.metrics import psnr, ssim
from udrmixer.model import init_params, l1_loss, toy_config, udr_mixer_forward
from udrmixer.rainsynth import RainConfig, procedural_background, synthesize_dataset
from udrmixer.tensor import ShapeError, Tensor
from udrmixer.train import (
    AdamHyper,
    CheckpointError,
    OptimState,
    PatchSpec,
    TrainConfig,
    Trainer,
    adam_step,
    apply_patch_spec,
    axis_weights,
    evaluate_dirs,
    evaluate_model,
    forward_image,
    load_checkpoint,
    params_from_checkpoint,
    read_log,
    sample_patch,
    save_checkpoint,
    tiled_inference,
    to_batch,
    train,
)

TINY = toy_config(width=8, blocks=(1, 1, 1), r=2)


# -- Adam ------------------------------------------------------------------

def scalar_param(v=0.0):
    return {"p": Tensor(np.array([v]), requires_grad=True)}


def test_adam_zero_gradient_keeps_params():
    params = scalar_param(1.5)
    adam_step(params, {"p": np.zeros(1)}, OptimState(), AdamHyper(lr=0.1))
    assert params["p"].data[0] == 1.5


def test_adam_first_step_closed_form():
    params = scalar_param()
    adam_step(params, {"p": np.ones(1)}, OptimState(), AdamHyper(lr=0.1))
    assert abs(params["p"].data[0] - (-0.1 / (1 + 1e-8))) <= 1e-15


def test_adam_three_hand_steps():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    grads = [0.3, -1.2, 0.7]
    # hand recurrence in plain floats
    p, m, v = 2.0, 0.0, 0.0
    expected = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        expected.append(p)
    params, state = scalar_param(2.0), OptimState()
    for g, want in zip(grads, expected):
        state = adam_step(params, {"p": np.array([g])}, state, AdamHyper(lr, b1, b2, eps))
        assert abs(params["p"].data[0] - want) <= 1e-10
    assert state.t == 3


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(scalar_param(), {"p": np.ones(2)}, OptimState(), AdamHyper())


# -- patches ---------------------------------------------------------------

def test_patch_bounds_and_shared_window():
    rng = np.random.default_rng(0)
    a = rng.random((50, 70, 3))
    for _ in range(1000):
        pa, pb, spec = sample_patch(a, a + 1, 16, rng, return_spec=True)
        assert 0 <= spec.y <= 34 and 0 <= spec.x <= 54
        assert pa.shape == (16, 16, 3)
        np.testing.assert_array_equal(pb, pa + 1)


def test_patch_flip_involution():
    img = np.random.default_rng(1).random((20, 20, 3))
    spec = PatchSpec(0, 0, 20, True, True)
    assert np.array_equal(apply_patch_spec(apply_patch_spec(img, spec), spec), img)


def test_patch_marker_tracking():
    rng = np.random.default_rng(2)
    for _ in range(200):
        rain, gt = np.zeros((40, 40, 3)), np.zeros((40, 40, 3))
        rain[25, 13] = gt[25, 13] = 1.0
        pa, pb, s = sample_patch(rain, gt, 24, rng, return_spec=True)
        ya, xa = np.argwhere(pa[..., 0] == 1.0).T if pa.any() else ([], [])
        yb, xb = np.argwhere(pb[..., 0] == 1.0).T if pb.any() else ([], [])
        assert list(ya) == list(yb) and list(xa) == list(xb)
        if pa.any():
            ey, ex = 25 - s.y, 13 - s.x
            ey = 23 - ey if s.flip_v else ey
            ex = 23 - ex if s.flip_h else ex
            assert (ya[0], xa[0]) == (ey, ex)


def test_patch_too_large():
    with pytest.raises(ValueError):
        sample_patch(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)), 16, np.random.default_rng())


# -- checkpoints -----------------------------------------------------------

def _trainer(seed=0, n=3, size=32, **kw):
    rng = np.random.default_rng(100)
    rain = [rng.random((size, size, 3)).astype(np.float32) for _ in range(n)]
    gt = [np.clip(r * 0.8, 0, 1) for r in rain]
    cfg = TrainConfig(batch_size=2, patch_size=16, lr=1e-3, seed=seed, epochs=100, **kw)
    return Trainer(TINY, cfg, rain, gt, rain[:1], gt[:1])


def test_checkpoint_round_trip_bit_exact(tmp_path):
    tr = _trainer()
    for _ in range(2):
        tr.train_step()
    ck = tr.checkpoint()
    ck.params["extra_int"] = np.arange(6, dtype=np.int64).reshape(2, 3)
    path = tmp_path / "a.udrm"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.model_config == ck.model_config and back.meta == ck.meta
    for group in ("params", "adam_m", "adam_v"):
        a, b = getattr(ck, group), getattr(back, group)
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k])
    with pytest.raises(CheckpointError, match="unknown"):
        params_from_checkpoint(back)


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "a.udrm"
    save_checkpoint(path, _trainer().checkpoint())
    raw = path.read_bytes()
    (tmp_path / "magic.udrm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.udrm")
    (tmp_path / "ver.udrm").write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ver.udrm")
    (tmp_path / "trunc.udrm").write_bytes(raw[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "trunc.udrm")


def test_checkpoint_model_mismatch(tmp_path):
    ck = _trainer().checkpoint()
    with pytest.raises(CheckpointError):
        params_from_checkpoint(ck, toy_config(width=16, blocks=(1, 1, 1), r=2))


# -- trainer ---------------------------------------------------------------

def test_losses_finite_and_reproducible():
    t1, t2 = _trainer(), _trainer()
    la = [t1.train_step().loss for _ in range(10)]
    lb = [t2.train_step().loss for _ in range(10)]
    assert all(math.isfinite(v) for v in la)
    assert la == lb


def test_resume_splices_bit_exactly(tmp_path):
    ref = _trainer()
    ref_losses = [ref.train_step().loss for _ in range(5)]
    part = _trainer()
    losses = [part.train_step().loss for _ in range(2)]
    save_checkpoint(tmp_path / "k.udrm", part.checkpoint())
    resumed = _trainer()
    resumed.restore(load_checkpoint(tmp_path / "k.udrm"))
    losses += [resumed.train_step().loss for _ in range(3)]
    assert losses == ref_losses
    for k, p in ref.params.items():
        assert np.array_equal(p.data, resumed.params[k].data)


def test_trainer_errors():
    with pytest.raises(ValueError, match="smaller"):
        _trainer(size=12)
    with pytest.raises(ValueError, match="divisible"):
        Trainer(TINY, TrainConfig(patch_size=18), [np.zeros((32, 32, 3))], [np.zeros((32, 32, 3))])
    with pytest.raises(ValueError, match="empty"):
        Trainer(TINY, TrainConfig(patch_size=16), [], [])


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    bgs = [procedural_background(32, 32, seed=i) for i in range(4)]
    synthesize_dataset(bgs, root, 4, RainConfig(base_width=64, density=0.01, seed=3))
    return root


def test_train_writes_log_and_recomputable_losses(tmp_path, tiny_dataset):
    cfg = TrainConfig(batch_size=2, patch_size=16, lr=1e-3, epochs=3, checkpoint_every=2,
                      val_every=2, val_count=1)
    out = tmp_path / "run"
    train(TINY, cfg, tiny_dataset, out)
    rows = read_log(out / "log.csv")
    assert list(rows[0].keys()) == ["step", "epoch", "loss", "lr", "val_psnr"]
    assert len(rows) == 6  # 3 training pairs, batch 2, 3 epochs
    assert rows[1]["val_psnr"] != "" and rows[0]["val_psnr"] == ""
    assert (out / "final.udrm").exists() and (out / "ckpt_000002.udrm").exists()
    # recompute the loss of step 3 from the step-2 checkpoint and the logged batch
    params = params_from_checkpoint(load_checkpoint(out / "ckpt_000002.udrm"))
    lines = [l.split(",") for l in (out / "batches.csv").read_text().splitlines()[1:]]
    rain, gt = [], []
    for step, pid, y, x, fh, fv in lines:
        if step == "3":
            spec = PatchSpec(int(y), int(x), 16, fh == "1", fv == "1")
            rain.append(apply_patch_spec(read_png(tiny_dataset / "rain" / f"{pid}.png"), spec))
            gt.append(apply_patch_spec(read_png(tiny_dataset / "gt" / f"{pid}.png"), spec))
    loss = l1_loss(udr_mixer_forward(Tensor(to_batch(rain)), params, TINY), Tensor(to_batch(gt)))
    assert float(loss.data) == float(rows[2]["loss"])


def test_train_resume_matches_uninterrupted(tmp_path, tiny_dataset):
    cfg = TrainConfig(batch_size=2, patch_size=16, lr=1e-3, epochs=2, checkpoint_every=1)
    train(TINY, cfg, tiny_dataset, tmp_path / "full")
    train(TINY, cfg.replace(max_steps=3), tiny_dataset, tmp_path / "part")
    train(TINY, cfg, tiny_dataset, tmp_path / "part", resume=tmp_path / "part" / "ckpt_000003.udrm")
    a = read_log(tmp_path / "full" / "log.csv")
    b = read_log(tmp_path / "part" / "log.csv")
    assert a == b


def test_resume_from_older_checkpoint_rewrites_later_rows(tmp_path, tiny_dataset):
    cfg = TrainConfig(batch_size=2, patch_size=16, lr=1e-3, epochs=2, checkpoint_every=1)
    train(TINY, cfg, tiny_dataset, tmp_path / "full")
    train(TINY, cfg, tiny_dataset, tmp_path / "full", resume=tmp_path / "full" / "ckpt_000002.udrm")
    rows = read_log(tmp_path / "full" / "log.csv")
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4]
    steps = [l.split(",")[0] for l in (tmp_path / "full" / "batches.csv").read_text().splitlines()[1:]]
    assert steps == sorted(steps, key=int) and len(steps) == 8


def test_train_empty_dataset(tmp_path):
    (tmp_path / "rain").mkdir()
    (tmp_path / "gt").mkdir()
    with pytest.raises(DatasetError, match="empty"):
        train(TINY, TrainConfig(patch_size=16), tmp_path, tmp_path / "o")


# -- inference -------------------------------------------------------------

@pytest.mark.parametrize("length,tile,overlap", [(100, 32, 8), (64, 32, 0), (33, 32, 15), (200, 64, 31)])
def test_blend_weights_partition_of_unity(length, tile, overlap):
    total = np.zeros(length)
    for s, w in axis_weights(length, tile, overlap):
        total[s: s + len(w)] += w
    assert np.max(np.abs(total - 1.0)) <= 1e-6
    wy = axis_weights(length, tile, overlap)
    field = np.zeros((length, length))
    for y0, ay in wy:
        for x0, ax in wy:
            field[y0: y0 + len(ay), x0: x0 + len(ax)] += np.outer(ay, ax)
    assert np.max(np.abs(field - 1.0)) <= 1e-6


def test_small_image_tiled_equals_direct():
    params = init_params(TINY)
    img = np.random.default_rng(3).random((24, 28, 3)).astype(np.float32)
    assert np.array_equal(tiled_inference(params, TINY, img, 32, 8), forward_image(params, TINY, img))


def test_tiled_output_is_blend_of_tile_predictions():
    params = init_params(TINY)
    img = procedural_background(32, 56, seed=1)
    out = tiled_inference(params, TINY, img, 32, 8)
    assert out.shape == img.shape
    left = forward_image(params, TINY, img[:, :32])
    right = forward_image(params, TINY, img[:, 24:])
    assert np.array_equal(out[:, :24], left[:, :24])
    assert np.array_equal(out[:, 32:], right[:, 8:])
    lo = np.minimum(left[:, 24:], right[:, :8]) - 1e-6
    hi = np.maximum(left[:, 24:], right[:, :8]) + 1e-6
    assert np.all((out[:, 24:32] >= lo) & (out[:, 24:32] <= hi))


def test_tiling_argument_errors():
    params = init_params(TINY)
    img = np.zeros((64, 64, 3), np.float32)
    for tile, overlap in [(30, 4), (32, 16), (32, -1), (0, 0)]:
        with pytest.raises(ValueError):
            tiled_inference(params, TINY, img, tile, overlap)


# -- evaluation ------------------------------------------------------------

def test_evaluate_identity_and_consistency(tiny_dataset):
    rep = evaluate_dirs(tiny_dataset / "rain", tiny_dataset / "gt")
    for rec in rep.records:
        a = to_uint8(read_png(tiny_dataset / "rain" / f"{rec.id}.png"))
        b = to_uint8(read_png(tiny_dataset / "gt" / f"{rec.id}.png"))
        assert rec.psnr == psnr(a, b) and rec.ssim == ssim(a, b)
    m = rep.mean()
    assert abs(m.psnr - np.mean([r.psnr for r in rep.records])) <= 1e-9
    self_rep = evaluate_dirs(tiny_dataset / "gt", tiny_dataset / "gt")
    assert self_rep.mean().psnr == 100.0 and abs(self_rep.mean().ssim - 1) <= 1e-12


def test_evaluate_model_matches_written_predictions(tmp_path, tiny_dataset):
    params = init_params(TINY)
    rep = evaluate_model(params, TINY, tiny_dataset)
    for rec in rep.records:
        pred = forward_image(params, TINY, read_png(tiny_dataset / "rain" / f"{rec.id}.png"))
        write_png(tmp_path / f"{rec.id}.png", pred)
    assert evaluate_dirs(tmp_path, tiny_dataset / "gt").records == rep.records


def test_evaluate_unpaired(tmp_path, tiny_dataset):
    pred = tmp_path / "pred"
    pred.mkdir()
    write_png(pred / "00000.png", np.zeros((32, 32, 3)))
    write_png(pred / "99999.png", np.zeros((32, 32, 3)))
    with pytest.raises(DatasetError, match="00001") as exc:
        evaluate_dirs(pred, tiny_dataset / "gt")
    assert "99999" in str(exc.value)
