"""Binary clip/model round trips, error taxonomy, and dataset loading."""

import os
import struct

import numpy as np
import pytest

from vdslim import clipio
from vdslim import network as net

from conftest import philox


def test_format_constants():
    assert clipio.FORMAT_VERSION == 1
    assert clipio.CLIP_MAGIC == b"PDVD"
    assert clipio.MODEL_MAGIC == b"PDWT"
    for err in (clipio.BadMagicError, clipio.TruncatedPayloadError,
                clipio.HeaderMismatchError, clipio.OutOfRangeError):
        assert issubclass(err, clipio.ClipFormatError)
        assert issubclass(err, ValueError)


def test_clip_round_trip_bit_exact(tmp_path):
    clip = philox(500).uniform(0, 1, size=(3, 11, 7, 3)).astype(np.float32)
    p = tmp_path / "c.pdvd"
    clipio.write_clip(clip, p)
    back = clipio.read_clip(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, clip)


def test_clip_round_trip_single_channel(tmp_path):
    clip = philox(501).uniform(0, 1, size=(2, 6, 5, 1)).astype(np.float32)
    p = tmp_path / "g.pdvd"
    clipio.write_clip(clip, p)
    assert np.array_equal(clipio.read_clip(p), clip)


def test_write_clip_validation(tmp_path):
    p = tmp_path / "bad.pdvd"
    with pytest.raises(ValueError, match="shape"):
        clipio.write_clip(np.zeros((4, 4, 3), dtype=np.float32), p)
    with pytest.raises(clipio.OutOfRangeError):
        clipio.write_clip(np.full((1, 4, 4, 3), 1.5, dtype=np.float32), p)
    with pytest.raises(clipio.OutOfRangeError):
        clipio.write_clip(np.full((1, 4, 4, 3), np.nan, dtype=np.float32), p)


def _valid_clip_bytes():
    clip = philox(502).uniform(0, 1, size=(2, 4, 5, 3)).astype(np.float32)
    payload = np.ascontiguousarray(clip.transpose(0, 3, 1, 2)).tobytes()
    head = clipio.CLIP_MAGIC + struct.pack("<IIIII", 1, 2, 4, 5, 3)
    return head + payload


def test_read_clip_error_taxonomy(tmp_path):
    p = tmp_path / "x.pdvd"
    blob = _valid_clip_bytes()

    p.write_bytes(b"")
    with pytest.raises(clipio.BadMagicError):
        clipio.read_clip(p)
    p.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(clipio.BadMagicError):
        clipio.read_clip(p)
    p.write_bytes(blob[:20])
    with pytest.raises(clipio.TruncatedPayloadError, match="header"):
        clipio.read_clip(p)
    p.write_bytes(clipio.CLIP_MAGIC + struct.pack("<IIIII", 9, 2, 4, 5, 3) + blob[24:])
    with pytest.raises(clipio.HeaderMismatchError, match="version"):
        clipio.read_clip(p)
    p.write_bytes(clipio.CLIP_MAGIC + struct.pack("<IIIII", 1, 2, 0, 5, 3) + blob[24:])
    with pytest.raises(clipio.HeaderMismatchError, match="zero"):
        clipio.read_clip(p)
    p.write_bytes(blob[:-4])
    with pytest.raises(clipio.TruncatedPayloadError, match="payload"):
        clipio.read_clip(p)
    p.write_bytes(blob + b"\x00\x00\x00\x00")
    with pytest.raises(clipio.HeaderMismatchError, match="claims"):
        clipio.read_clip(p)
    bad = bytearray(blob)
    bad[24:28] = struct.pack("<f", 7.0)
    p.write_bytes(bytes(bad))
    with pytest.raises(clipio.OutOfRangeError):
        clipio.read_clip(p)


def test_model_round_trip_bit_exact(tmp_path, mini16_spec):
    model = net.build(mini16_spec, seed=510)
    p = tmp_path / "m.pdwt"
    clipio.write_model(model, p)
    back = clipio.read_model(mini16_spec, p)
    assert set(back.weights) == set(model.weights)
    for k in model.weights:
        assert np.array_equal(back.weights[k].data, model.weights[k].data), k
        assert back.weights[k].requires_grad
    # a reloaded model computes the same function, bit for bit
    clip = philox(511).uniform(0, 1, size=(1, 5, 8, 8, 3)).astype(np.float32)
    a = net.forward_cascade(model, net.clip_to_frames(clip))
    b = net.forward_cascade(back, net.clip_to_frames(clip))
    assert np.array_equal(a.data, b.data)


def _pdwt_record(name, arr):
    e = name.encode("utf-8")
    out = struct.pack("<H", len(e)) + e + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return out + np.ascontiguousarray(arr).astype("<f4").tobytes()


def test_read_model_error_taxonomy(tmp_path):
    p = tmp_path / "x.pdwt"
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)

    p.write_bytes(b"WXYZ")
    with pytest.raises(clipio.BadMagicError):
        clipio.read_model_arrays(p)
    p.write_bytes(clipio.MODEL_MAGIC + struct.pack("<I", 1))
    with pytest.raises(clipio.TruncatedPayloadError):
        clipio.read_model_arrays(p)
    p.write_bytes(clipio.MODEL_MAGIC + struct.pack("<II", 3, 0))
    with pytest.raises(clipio.HeaderMismatchError, match="version"):
        clipio.read_model_arrays(p)

    good = clipio.MODEL_MAGIC + struct.pack("<II", 1, 1) + _pdwt_record("a", arr)
    p.write_bytes(good[:-5])
    with pytest.raises(clipio.TruncatedPayloadError, match="ends inside"):
        clipio.read_model_arrays(p)
    p.write_bytes(good + b"zz")
    with pytest.raises(clipio.HeaderMismatchError, match="trailing"):
        clipio.read_model_arrays(p)
    dup = (clipio.MODEL_MAGIC + struct.pack("<II", 1, 2)
           + _pdwt_record("a", arr) + _pdwt_record("a", arr))
    p.write_bytes(dup)
    with pytest.raises(clipio.HeaderMismatchError, match="duplicate"):
        clipio.read_model_arrays(p)

    p.write_bytes(good)
    got = clipio.read_model_arrays(p)
    assert np.array_equal(got["a"], arr)


def test_attach_weights_name_checks(tmp_path, mini16_spec):
    model = net.build(mini16_spec, seed=512)
    p = tmp_path / "m.pdwt"
    clipio.write_model(model, p)
    arrays = clipio.read_model_arrays(p)

    short = dict(arrays)
    del short["stage1.enc0_a.bias"]
    with pytest.raises(ValueError, match="missing"):
        clipio.attach_weights(mini16_spec, short)

    extra = dict(arrays)
    extra["stage1.ghost.weight"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(ValueError, match="lacks"):
        clipio.attach_weights(mini16_spec, extra)


def test_clip_reader_rejects_model_file(tmp_path, mini16_spec):
    p = tmp_path / "m.pdwt"
    clipio.write_model(net.build(mini16_spec, seed=513), p)
    with pytest.raises(clipio.BadMagicError):
        clipio.read_clip(p)


def test_frame_image_round_trip_is_exact_on_255ths(tmp_path):
    u8 = philox(520).integers(0, 256, size=(9, 13, 3)).astype(np.uint8)
    frame = u8.astype(np.float32) / 255.0
    p = tmp_path / "f.png"
    clipio.write_frame_image(p, frame)
    back = clipio._read_frame_image(p)
    assert np.array_equal(back, frame)


def test_frame_image_clamps_and_validates(tmp_path):
    p = tmp_path / "f.png"
    clipio.write_frame_image(p, np.full((4, 4, 3), 9.0, dtype=np.float32))
    assert np.array_equal(clipio._read_frame_image(p),
                          np.ones((4, 4, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="shape"):
        clipio.write_frame_image(p, np.zeros((4, 4), dtype=np.float32))


def _write_clip_dir(root, name, n_frames, h, w, seed, start=0):
    d = os.path.join(root, name)
    os.makedirs(d, exist_ok=True)
    rng = philox(seed)
    for i in range(n_frames):
        u8 = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
        clipio.write_frame_image(os.path.join(d, f"{start + i}.png"),
                                 u8.astype(np.float32) / 255.0)
    return d


def test_load_dataset_window_count_and_shape(tmp_path):
    _write_clip_dir(tmp_path, "a", 6, 12, 10, seed=530)
    _write_clip_dir(tmp_path, "b", 3, 12, 10, seed=531)
    with pytest.warns(UserWarning, match="skipping clip 'b'"):
        got = clipio.load_dataset(tmp_path, patch_size=8, stride=4, seed=1)
    # clip a: 2 five-frame windows, y in {0, 4}, x in {0} -> 4 patches
    assert got.shape == (4, 5, 8, 8, 3)
    assert got.dtype == np.float32
    assert got.min() >= 0.0 and got.max() <= 1.0


def test_load_dataset_shuffle_is_seeded(tmp_path):
    _write_clip_dir(tmp_path, "a", 8, 16, 16, seed=532)
    one = clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=7)
    two = clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=7)
    other = clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=8)
    assert np.array_equal(one, two)
    assert not np.array_equal(one, other)
    # same multiset of patches either way
    assert np.array_equal(np.sort(one.ravel()), np.sort(other.ravel()))


def test_load_dataset_error_cases(tmp_path):
    with pytest.raises(ValueError, match="no clip subfolders"):
        clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=0)

    _write_clip_dir(tmp_path, "gappy", 3, 8, 8, seed=533)
    _write_clip_dir(tmp_path, "gappy", 2, 8, 8, seed=534, start=4)
    with pytest.raises(ValueError, match="gaps"):
        clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=0)


def test_load_dataset_rejects_unnumbered_and_unequal(tmp_path):
    d = _write_clip_dir(tmp_path, "a", 5, 8, 8, seed=535)
    clipio.write_frame_image(os.path.join(d, "cover.png"),
                             np.zeros((8, 8, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="not numbered"):
        clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=0)
    os.remove(os.path.join(d, "cover.png"))

    clipio.write_frame_image(os.path.join(d, "5.png"),
                             np.zeros((6, 8, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="shape"):
        clipio.load_dataset(tmp_path, patch_size=8, stride=8, seed=0)


def test_load_dataset_small_frames_and_params(tmp_path):
    _write_clip_dir(tmp_path, "tiny", 5, 4, 4, seed=536)
    with pytest.warns(UserWarning, match="smaller than"):
        with pytest.raises(ValueError, match="no usable"):
            clipio.load_dataset(tmp_path, patch_size=16, stride=8, seed=0)
    with pytest.raises(ValueError, match="positive"):
        clipio.load_dataset(tmp_path, patch_size=0, stride=8, seed=0)
