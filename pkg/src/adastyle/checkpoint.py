"""Binary checkpoint format for model parameters.

Layout (all integers little-endian):

    magic "ADRL1" (5 bytes)
    u32 array count
    per array:
        u32 name length, name (utf-8)
        u8 precision tag (1 = float32, 2 = float64)
        u8 rank
        u32 * rank  shape
        raw little-endian values

Round trips are byte-exact; array order is preserved.  The architecture
config rides along as a reserved float64 array named ``config/arch`` so a
checkpoint alone is enough to rebuild the model.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ADAIN_MODES, STRUCTURAL_MODES, ArchConfig, TranslationModel
from .layers import RECTIFIER_KINDS

MAGIC = b"ADRL1"

_TAG_OF_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DTYPE_OF_TAG = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

CONFIG_KEY = "config/arch"


def save_arrays(path, arrays):
    """Write an ordered mapping of name -> float array."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            tag = _TAG_OF_DTYPE.get(arr.dtype)
            if tag is None:
                raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", tag, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_arrays(path):
    """Read a checkpoint back into an ordered dict of name -> array."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {data[:5]!r}")
    off = 5
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if tag not in _DTYPE_OF_TAG:
            raise ValueError(f"unknown precision tag {tag} for array {name!r}")
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        dt = _DTYPE_OF_TAG[tag]
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(data, dtype=dt, count=n, offset=off).reshape(shape)
        off += n * dt.itemsize
        out[name] = arr.astype(dt.newbyteorder("="))
    return out


def _encode_config(cfg: ArchConfig) -> np.ndarray:
    return np.array([
        cfg.image_size,
        cfg.base_channels,
        cfg.down_blocks,
        cfg.translator_blocks,
        cfg.style_dim,
        cfg.latent_dim,
        cfg.num_domains,
        RECTIFIER_KINDS.index(cfg.activation),
        cfg.fixed_slope,
        ADAIN_MODES.index(cfg.adain_mode),
        STRUCTURAL_MODES.index(cfg.structural_mode),
    ], dtype=np.float64)


def _decode_config(vec) -> ArchConfig:
    if len(vec) != 11:
        raise ValueError(f"bad config record of length {len(vec)}")
    return ArchConfig(
        image_size=int(vec[0]),
        base_channels=int(vec[1]),
        down_blocks=int(vec[2]),
        translator_blocks=int(vec[3]),
        style_dim=int(vec[4]),
        latent_dim=int(vec[5]),
        num_domains=int(vec[6]),
        activation=RECTIFIER_KINDS[int(vec[7])],
        fixed_slope=float(vec[8]),
        adain_mode=ADAIN_MODES[int(vec[9])],
        structural_mode=STRUCTURAL_MODES[int(vec[10])],
    )


def save_model(path, model: TranslationModel):
    arrays = {CONFIG_KEY: _encode_config(model.cfg)}
    for name, p in model.named_params():
        arrays[name] = p.value
    save_arrays(path, arrays)


def load_model(path) -> TranslationModel:
    arrays = load_arrays(path)
    if CONFIG_KEY not in arrays:
        raise ValueError("checkpoint has no config record")
    cfg = _decode_config(arrays.pop(CONFIG_KEY))
    first = next(iter(arrays.values()))
    model = TranslationModel(cfg, seed=0, dtype=first.dtype.type)
    expected = dict(model.named_params())
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ValueError(f"checkpoint/model parameter mismatch: missing {missing[:3]}, "
                         f"unexpected {extra[:3]}")
    for name, p in expected.items():
        arr = arrays[name]
        if arr.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, "
                             f"model {p.value.shape}")
        p.value[...] = arr
    return model
