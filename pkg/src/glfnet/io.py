"""Binary tensor files, checkpoints and ``key = value`` config files.

Tensor file (all integers little-endian)::

    offset  size      field
    0       4         magic b"GLFT"
    4       2         version (u16, currently 1)
    6       1         dtype code (u8): 0 = f64, 1 = f32, 2 = u8
    7       1         rank (u8)
    8       4*rank    dims (u32 each)
    ...     prod*sz   row-major payload

Checkpoint file::

    0       4         magic b"GLFC"
    4       2         version (u16, currently 1)
    6       4         header length H (u32)
    10      H         UTF-8 ``key = value`` model config
    10+H    4         entry count N (u32)
    then N entries of:
            2         name length L (u16)
            L         UTF-8 parameter name
            8         blob length (u64)
            ...       tensor file bytes (format above)
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from ._tree import named_tensors, replace_tensors
from .autodiff import Tensor, parameter
from .errors import ConfigError, FormatError
from .network import ModelConfig, build_model
from .training import TrainConfig

TENSOR_MAGIC = b"GLFT"
CHECKPOINT_MAGIC = b"GLFC"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("u1")}
DTYPE_CODES = {"f64": 0, "f32": 1, "u8": 2}


def atomic_write(path, data):
    """Write bytes to ``path`` via a temp file in the same dir and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(array, dtype="f64"):
    if isinstance(array, Tensor):
        array = array.data
    array = np.asarray(array)
    try:
        code = DTYPE_CODES[dtype]
    except KeyError:
        raise FormatError(f"unknown dtype {dtype!r}") from None
    if array.ndim > 255:
        raise FormatError("rank above 255 is not representable")
    header = TENSOR_MAGIC + struct.pack("<HBB", VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode_tensor(buf, offset=0):
    """Parse one tensor starting at ``offset``; returns ``(ndarray, end)``."""
    view = memoryview(buf)
    if len(view) - offset < 8:
        raise FormatError("truncated tensor header", offset)
    magic = bytes(view[offset : offset + 4])
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}", offset)
    version, code, rank = struct.unpack_from("<HBB", view, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset + 4)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset + 6)
    pos = offset + 8
    if len(view) - pos < 4 * rank:
        raise FormatError("truncated dims", pos)
    dims = struct.unpack_from(f"<{rank}I", view, pos)
    pos += 4 * rank
    dtype = DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    available = len(view) - pos
    if available < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {available}", pos)
    arr = np.frombuffer(view[pos : pos + expected], dtype=dtype).reshape(dims).copy()
    return arr, pos + expected


def write_tensor(path, tensor, dtype="f64"):
    atomic_write(path, encode_tensor(tensor, dtype))


def read_array(path):
    """Raw ndarray (original dtype) from a tensor file; trailing bytes rejected."""
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", end)
    return arr


def read_tensor(path):
    return Tensor(read_array(path).astype(np.float64))


# -- key = value text ---------------------------------------------------------

def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(mapping):
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def load_config(path):
    """Read one config file into ``(ModelConfig, TrainConfig)``."""
    with open(path, encoding="utf-8") as fh:
        mapping = parse_kv(fh.read())
    return ModelConfig.from_mapping(mapping), TrainConfig.from_mapping(mapping)


# -- checkpoints ----------------------------------------------------------------

def encode_checkpoint(cfg, params):
    header = format_kv(cfg.to_mapping()).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    tensors = named_tensors(params)
    parts.append(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        blob = encode_tensor(t)
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(blob)) + blob)
    return b"".join(parts)


def save_checkpoint(path, cfg, params):
    atomic_write(path, encode_checkpoint(cfg, params))


def decode_checkpoint(buf):
    view = memoryview(buf)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(view[:4])!r}", 0)
    if len(view) < 10:
        raise FormatError("truncated checkpoint header", 4)
    version, hlen = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 10
    if len(view) < pos + hlen + 4:
        raise FormatError("truncated checkpoint config", pos)
    cfg = ModelConfig.from_mapping(parse_kv(bytes(view[pos : pos + hlen]).decode("utf-8")))
    pos += hlen
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    loaded = {}
    for _ in range(count):
        if len(view) < pos + 2:
            raise FormatError("truncated entry name length", pos)
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        if len(view) < pos + 8:
            raise FormatError("truncated entry length", pos)
        (blen,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        if len(view) < pos + blen:
            raise FormatError(f"truncated tensor {name!r}", pos)
        arr, end = decode_tensor(view[: pos + blen], pos)
        loaded[name] = arr
        pos = end
    template = build_model(cfg, seed=0)
    expected = named_tensors(template)
    if set(expected) != set(loaded):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise FormatError(f"checkpoint tensors do not match config (missing {missing[:3]}, extra {extra[:3]})")
    mapping = {}
    for name, t in expected.items():
        if loaded[name].shape != t.shape:
            raise FormatError(f"tensor {name!r} has shape {loaded[name].shape}, expected {t.shape}")
        mapping[name] = parameter(loaded[name])
    return cfg, replace_tensors(template, mapping)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
