"""Binary clip/model formats and image-folder dataset ingestion.

Clip files (PDVD): magic "PDVD", u32 version 1, u32 T H W C, then T*C*H*W
float32 little-endian values in [0, 1], frame-major then channel-major then
row-major.  Model files (PDWT): magic "PDWT", u32 version 1, u32 record
count, then per tensor a u16 name length, the UTF-8 name, a u8 rank, u32
dims, and the float32 data.  Both round-trip bit-exactly; a custom format
avoids the lossy nondeterminism a video codec would smuggle in.
"""

from __future__ import annotations

import os
import struct
import warnings

import numpy as np
from PIL import Image

from .network import Model, NetworkSpec
from .tensor import Tensor

CLIP_MAGIC = b"PDVD"
MODEL_MAGIC = b"PDWT"
FORMAT_VERSION = 1


class ClipFormatError(ValueError):
    """Base for malformed clip/model files."""


class BadMagicError(ClipFormatError):
    pass


class TruncatedPayloadError(ClipFormatError):
    pass


class HeaderMismatchError(ClipFormatError):
    pass


class OutOfRangeError(ClipFormatError):
    pass


def _check_clip_values(clip: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(clip)):
        raise OutOfRangeError(f"{where}: clip contains non-finite values")
    lo = float(clip.min(initial=0.0))
    hi = float(clip.max(initial=0.0))
    if lo < 0.0 or hi > 1.0:
        raise OutOfRangeError(f"{where}: values outside [0, 1] (min {lo}, max {hi})")


def write_clip(clip: np.ndarray, path) -> None:
    """Write a (T, H, W, C) float array in [0, 1] as a PDVD file."""
    arr = np.asarray(clip, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"clip must have shape (T, H, W, C), got {arr.shape}")
    _check_clip_values(arr, str(path))
    t, h, w, c = arr.shape
    payload = np.ascontiguousarray(arr.transpose(0, 3, 1, 2)).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<IIIII", FORMAT_VERSION, t, h, w, c))
        fh.write(payload)


def read_clip(path) -> np.ndarray:
    """Read a PDVD file back to a (T, H, W, C) float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CLIP_MAGIC:
        raise BadMagicError(f"{path}: not a PDVD clip file")
    if len(blob) < 24:
        raise TruncatedPayloadError(f"{path}: header cut short")
    version, t, h, w, c = struct.unpack("<IIIII", blob[4:24])
    if version != FORMAT_VERSION:
        raise HeaderMismatchError(f"{path}: unsupported version {version}")
    if min(t, h, w, c) == 0:
        raise HeaderMismatchError(f"{path}: zero dimension in header {(t, h, w, c)}")
    expected = t * c * h * w * 4
    got = len(blob) - 24
    if got < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {got} bytes, header needs {expected}"
        )
    if got > expected:
        raise HeaderMismatchError(
            f"{path}: header claims {expected} payload bytes but file has {got}"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=24)
    arr = flat.reshape(t, c, h, w).transpose(0, 2, 3, 1)
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    _check_clip_values(arr, str(path))
    return arr


def write_model(model: Model, path) -> None:
    """Write every tensor as a named PDWT record, in spec order."""
    records = []
    for block in model.spec.blocks:
        for layer in block.layers:
            for kind in ("weight", "bias"):
                name = f"{block.name}.{layer.name}.{kind}"
                records.append((name, model.weights[name].data))
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(records)))
        for name, arr in records:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f4").tobytes())


def read_model_arrays(path) -> dict[str, np.ndarray]:
    """Read a PDWT file to a name -> float32 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a PDWT model file")
    if len(blob) < 12:
        raise TruncatedPayloadError(f"{path}: header cut short")
    version, count = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise HeaderMismatchError(f"{path}: unsupported version {version}")
    pos = 12
    arrays: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedPayloadError(f"{path}: file ends inside {what}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "record name length"))
        name = take(name_len, "record name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "record rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "record dims"))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = take(4 * size, f"data of {name!r}")
        if name in arrays:
            raise HeaderMismatchError(f"{path}: duplicate tensor {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    if pos != len(blob):
        raise HeaderMismatchError(f"{path}: {len(blob) - pos} trailing bytes")
    return arrays


def attach_weights(spec: NetworkSpec, arrays: dict[str, np.ndarray]) -> Model:
    """Bind loaded arrays to a spec; names must match the spec exactly."""
    expected = set()
    for block in spec.blocks:
        for layer in block.layers:
            expected.add(f"{block.name}.{layer.name}.weight")
            expected.add(f"{block.name}.{layer.name}.bias")
    missing = expected - set(arrays)
    extra = set(arrays) - expected
    if missing:
        raise ValueError(f"model file is missing tensors: {sorted(missing)}")
    if extra:
        raise ValueError(f"model file has tensors the spec lacks: {sorted(extra)}")
    weights = {
        name: Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)
        for name, arr in arrays.items()
    }
    return Model(spec, weights)


def read_model(spec: NetworkSpec, path) -> Model:
    return attach_weights(spec, read_model_arrays(path))


def write_frame_image(path, frame: np.ndarray) -> None:
    """Save a (H, W, 3) float frame in [0, 1] as an 8-bit RGB image."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"frame must have shape (H, W, 3), got {arr.shape}")
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def _read_frame_image(path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def _clip_frames(clip_dir: str) -> list[str]:
    entries = []
    for fname in os.listdir(clip_dir):
        stem, ext = os.path.splitext(fname)
        if ext.lower() not in (".png", ".bmp", ".tif", ".tiff"):
            continue
        try:
            number = int(stem)
        except ValueError:
            raise ValueError(
                f"{clip_dir}: frame file {fname!r} is not numbered"
            ) from None
        entries.append((number, fname))
    entries.sort()
    numbers = [n for n, _ in entries]
    if numbers and numbers != list(range(numbers[0], numbers[0] + len(numbers))):
        raise ValueError(f"{clip_dir}: frame numbering has gaps: {numbers}")
    return [os.path.join(clip_dir, fname) for _, fname in entries]


def load_dataset(directory, patch_size: int, stride: int, seed: int) -> np.ndarray:
    """Load clip folders into shuffled clean 5-frame patches.

    Every subfolder of ``directory`` is one clip of numbered frame images.
    Patches are all (clip, start frame, y, x) windows of 5 consecutive
    frames cropped to patch_size at stride offsets, enumerated in canonical
    order and then shuffled by the seed.  Returns (N, 5, patch, patch, 3)
    float32 in [0, 1].  Clips shorter than 5 frames are skipped with a
    warning; frames of unequal size within a clip are an error.
    """
    if patch_size < 1 or stride < 1:
        raise ValueError("patch_size and stride must be positive")
    clip_names = sorted(
        d for d in os.listdir(directory)
        if os.path.isdir(os.path.join(directory, d))
    )
    if not clip_names:
        raise ValueError(f"{directory}: no clip subfolders found")
    patches = []
    for clip_name in clip_names:
        clip_dir = os.path.join(directory, clip_name)
        paths = _clip_frames(clip_dir)
        if len(paths) < 5:
            warnings.warn(
                f"skipping clip {clip_name!r}: only {len(paths)} frames (need 5)",
                stacklevel=2,
            )
            continue
        frames = [_read_frame_image(p) for p in paths]
        shape = frames[0].shape
        for p, f in zip(paths, frames):
            if f.shape != shape:
                raise ValueError(
                    f"{clip_name}: frame {os.path.basename(p)} has shape "
                    f"{f.shape[:2]}, clip started with {shape[:2]}"
                )
        video = np.stack(frames)
        h, w = shape[:2]
        if h < patch_size or w < patch_size:
            warnings.warn(
                f"skipping clip {clip_name!r}: frames {h}x{w} smaller than "
                f"patch {patch_size}",
                stacklevel=2,
            )
            continue
        for t0 in range(0, len(frames) - 4):
            window = video[t0:t0 + 5]
            for y in range(0, h - patch_size + 1, stride):
                for x in range(0, w - patch_size + 1, stride):
                    patches.append(window[:, y:y + patch_size, x:x + patch_size])
    if not patches:
        raise ValueError(f"{directory}: no usable 5-frame patches")
    stacked = np.ascontiguousarray(np.stack(patches), dtype=np.float32)
    order = np.random.Generator(np.random.Philox(key=seed)).permutation(len(stacked))
    return stacked[order]
