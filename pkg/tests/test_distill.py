"""Distillation loss, teachers, and the oracle-equals-supervision property."""

import numpy as np
import pytest

from vdslim import clipio
from vdslim import config as cfg
from vdslim import distill as ds
from vdslim import network as net
from vdslim import noise, synth

from conftest import philox


def _loss_parts(alpha, seed=400, eps=1e-4):
    rng = philox(seed)
    s = rng.uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    t = rng.uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    g = rng.uniform(0, 1, size=(2, 3, 8, 8)).astype(np.float32)
    total, lt, lg = ds.distill_loss(s, t, g, alpha, eps)
    return float(total.data), float(lt.data), float(lg.data)


def test_distill_loss_collapses_at_alpha_extremes():
    total, lt, lg = _loss_parts(1.0)
    assert total == lt
    total, lt, lg = _loss_parts(0.0)
    assert total == lg


def test_distill_loss_is_affine_in_alpha():
    for alpha in (0.25, 0.5, 0.9):
        total, lt, lg = _loss_parts(alpha)
        assert total == pytest.approx(alpha * lt + (1 - alpha) * lg, rel=1e-6)


def test_distill_loss_validation():
    x = np.zeros((1, 3, 4, 4), dtype=np.float32)
    y = np.zeros((1, 3, 4, 5), dtype=np.float32)
    with pytest.raises(ValueError, match="alpha"):
        ds.distill_loss(x, x, x, -0.1, 1e-4)
    with pytest.raises(ValueError, match="alpha"):
        ds.distill_loss(x, x, x, 1.1, 1e-4)
    with pytest.raises(ValueError, match="shapes"):
        ds.distill_loss(x, y, x, 0.5, 1e-4)


def test_oracle_teacher_hands_back_ground_truth():
    clip = np.zeros((5, 8, 8, 3), dtype=np.float32)
    gt = philox(401).uniform(0, 1, size=(8, 8, 3)).astype(np.float32)
    out = ds.OracleTeacher().denoise(clip, ground_truth=gt)
    assert np.array_equal(out, gt)
    with pytest.raises(ValueError):
        ds.OracleTeacher().denoise(clip)


def test_network_teacher_runs_and_keeps_weights(mini16_spec):
    teacher_model = net.build(mini16_spec, seed=402)
    before = {k: t.data.copy() for k, t in teacher_model.weights.items()}
    teacher = ds.NetworkTeacher(teacher_model)
    clip = synth.smooth_clips(1, 16, 16, seed=403)[0]
    out = teacher.denoise(clip)
    assert out.shape == (16, 16, 3)

    student = net.build(mini16_spec, seed=404)
    clips = synth.smooth_clips(4, 16, 16, seed=405)
    batch_fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=406)
    cfg_ = ds.DistillConfig(total_steps=2, batch_size=2)
    ds.train_distill(student, teacher, batch_fn, cfg_)
    for k, w in teacher_model.weights.items():
        assert np.array_equal(w.data, before[k])


def test_file_teacher(tmp_path):
    frame = philox(407).uniform(0, 1, size=(8, 8, 3)).astype(np.float32)
    clipio.write_clip(frame[None], tmp_path / "clip7.pdvd")
    teacher = ds.FileTeacher(tmp_path)
    clip = np.zeros((5, 8, 8, 3), dtype=np.float32)
    assert np.array_equal(teacher.denoise(clip, clip_id="clip7"), frame)
    with pytest.raises(KeyError):
        teacher.denoise(clip, clip_id="missing")
    with pytest.raises(ValueError):
        teacher.denoise(clip)
    with pytest.raises(FileNotFoundError):
        ds.FileTeacher(tmp_path / "nope")
    clipio.write_clip(np.zeros((2, 8, 8, 3), dtype=np.float32),
                      tmp_path / "two.pdvd")
    with pytest.raises(ValueError, match="frames"):
        teacher.denoise(clip, clip_id="two")


def test_teacher_batch_stacks_nchw():
    rng = philox(408)
    noisy = rng.uniform(0, 1, size=(3, 5, 8, 8, 3)).astype(np.float32)
    gt = rng.uniform(0, 1, size=(3, 8, 8, 3)).astype(np.float32)
    out = ds.teacher_batch(ds.OracleTeacher(), noisy, gt)
    assert out.shape == (3, 3, 8, 8)
    assert np.array_equal(out, gt.transpose(0, 3, 1, 2))


def test_teacher_batch_rejects_bad_teacher_shape():
    class Bad(ds.Teacher):
        def denoise(self, clip, clip_id=None, ground_truth=None):
            return np.zeros((4, 4, 3), dtype=np.float32)

    noisy = np.zeros((1, 5, 8, 8, 3), dtype=np.float32)
    gt = np.zeros((1, 8, 8, 3), dtype=np.float32)
    with pytest.raises(ValueError, match="shape"):
        ds.teacher_batch(Bad(), noisy, gt)


def test_corrupting_batch_fn_reproducible():
    clips = synth.smooth_clips(6, 16, 16, seed=410)
    fn1 = ds.corrupting_batch_fn(clips, 3, noise.ParamRanges(), seed=411)
    fn2 = ds.corrupting_batch_fn(clips, 3, noise.ParamRanges(), seed=411)
    n1, c1, i1 = fn1(5)
    n2, c2, i2 = fn2(5)
    assert np.array_equal(n1, n2) and np.array_equal(c1, c2) and i1 == i2
    n3, _, _ = fn1(6)
    assert not np.array_equal(n1, n3)


def test_corrupting_batch_fn_clean_is_center_frame():
    clips = synth.smooth_clips(6, 16, 16, seed=412)
    fn = ds.corrupting_batch_fn(clips, 4, noise.ParamRanges(), seed=413)
    noisy, clean, ids = fn(0)
    assert noisy.shape == (4, 5, 16, 16, 3)
    assert clean.shape == (4, 16, 16, 3)
    for bi, i in enumerate(ids):
        assert np.array_equal(clean[bi], clips[i, 2])
        assert not np.array_equal(noisy[bi], clips[i])


def test_corrupting_batch_fn_validation():
    clips = synth.smooth_clips(2, 16, 16, seed=414)
    with pytest.raises(ValueError, match="batch_size"):
        ds.corrupting_batch_fn(clips, 0, noise.ParamRanges(), seed=0)
    with pytest.raises(ValueError, match="shape"):
        ds.corrupting_batch_fn(clips[:, :4], 1, noise.ParamRanges(), seed=0)
    with pytest.raises(ValueError, match="at least one"):
        ds.corrupting_batch_fn(clips[:0], 1, noise.ParamRanges(), seed=0)


def test_train_distill_history(mini16_spec):
    student = net.build(mini16_spec, seed=420)
    clips = synth.smooth_clips(4, 16, 16, seed=421)
    batch_fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=422)
    cfg_ = ds.DistillConfig(alpha=0.7, total_steps=3, batch_size=2)
    history = ds.train_distill(student, ds.OracleTeacher(), batch_fn, cfg_)
    assert [r.step for r in history] == [0, 1, 2]
    for r in history:
        assert np.isfinite(r.loss_total)
        assert r.loss_total == pytest.approx(
            0.7 * r.loss_teacher + 0.3 * r.loss_gt, rel=1e-6)
    text = ds.history_to_csv(history)
    assert text.splitlines()[0] == "step,loss_total,loss_teacher,loss_gt"
    assert text.endswith("\n")


def test_student_with_noise_map_input_rejected():
    spec = net.resolve_spec("mini16_map")
    student = net.build(spec, seed=423)
    clips = synth.smooth_clips(2, 16, 16, seed=424)
    batch_fn = ds.corrupting_batch_fn(clips, 1, noise.ParamRanges(), seed=425)
    with pytest.raises(ValueError, match="noise map"):
        ds.train_distill(student, ds.OracleTeacher(), batch_fn,
                         ds.DistillConfig(total_steps=1, batch_size=1))


def test_oracle_distillation_matches_supervision_bitwise(mini16_spec):
    # with the teacher handing back the ground truth and alpha = 0.5 the
    # two loss branches are equal, and 0.5*a + 0.5*a is exactly a in floats,
    # so the whole trajectory must coincide with plain supervision
    clips = synth.smooth_clips(4, 16, 16, seed=430)
    cfg_ = ds.DistillConfig(alpha=0.5, total_steps=8, batch_size=2)

    s_distill = net.build(mini16_spec, seed=431)
    batch_fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=432)
    hist_d = ds.train_distill(s_distill, ds.OracleTeacher(), batch_fn, cfg_)

    s_control = net.build(mini16_spec, seed=431)
    batch_fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=432)
    hist_s = ds.train_supervised(s_control, batch_fn, cfg_)

    for k in s_distill.weights:
        assert np.array_equal(s_distill.weights[k].data,
                              s_control.weights[k].data), k
    for rd, rs in zip(hist_d, hist_s):
        assert rd.loss_total == rs.loss_total
        assert rd.loss_teacher == rd.loss_gt


def test_alpha_zero_makes_teacher_irrelevant(mini16_spec):
    class Wrecked(ds.Teacher):
        def denoise(self, clip, clip_id=None, ground_truth=None):
            return np.asarray(ground_truth) + 5.0

    clips = synth.smooth_clips(4, 16, 16, seed=440)
    cfg_ = ds.DistillConfig(alpha=0.0, total_steps=4, batch_size=2)

    s1 = net.build(mini16_spec, seed=441)
    fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=442)
    ds.train_distill(s1, Wrecked(), fn, cfg_)

    s2 = net.build(mini16_spec, seed=441)
    fn = ds.corrupting_batch_fn(clips, 2, noise.ParamRanges(), seed=442)
    ds.train_supervised(s2, fn, cfg_)

    for k in s1.weights:
        assert np.array_equal(s1.weights[k].data, s2.weights[k].data), k


def test_distill_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        ds.DistillConfig(alpha=1.5).validate()
    with pytest.raises(ValueError, match="lr"):
        ds.DistillConfig(lr=0).validate()
    with pytest.raises(ValueError, match="total_steps"):
        ds.DistillConfig(total_steps=0).validate()
    with pytest.raises(ValueError, match="batch_size"):
        ds.DistillConfig(batch_size=0).validate()
    with pytest.raises(ValueError, match="eps"):
        ds.DistillConfig(eps=0).validate()


def test_distill_config_file_round_trip(tmp_path):
    p = tmp_path / "d.cfg"
    p.write_text("alpha = 0.25\nlr = 5e-4\nbatch_size = 8\n"
                 "total_steps = 100\nteacher = oracle\n")
    got = ds.load_distill_config(p)
    assert got.alpha == 0.25
    assert got.lr == 5e-4
    assert got.batch_size == 8
    assert got.total_steps == 100
    assert got.teacher == "oracle"
    p.write_text("alpha = 0.25\nbogus = 1\n")
    with pytest.raises(cfg.ConfigError, match="bogus"):
        ds.load_distill_config(p)


def test_bundled_distill_config_loads():
    import os

    import vdslim

    path = os.path.join(os.path.dirname(vdslim.__file__), "specs",
                        "distill_default.cfg")
    got = ds.load_distill_config(path)
    assert got.alpha == 0.5
