'''
The "ADST1" binary container.

layout (little-endian):
    magic   b"ADST1"
    header  version: u32, n_frames: u64, dim: u64
    payload

version 1 holds one row-major float32 matrix of n_frames x dim.
version 2 holds named weight blocks; n_frames is the block count and dim is 0.
Each block is {name_len: u32, name: utf-8, ndim: u32, shape: u64 * ndim, float32 payload}.
'''
from __future__ import annotations
import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np
import torch

from .errors import DatasetIOError, DatasetValidationError

MAGIC = b"ADST1"
MATRIX_VERSION = 1
BLOCK_VERSION = 2
_HEADER = struct.Struct("<IQQ")


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DatasetIOError("cannot read container ({})".format(e.strerror), path) from e

def _write_bytes(path: str, data: bytes) -> None:
    try:
        dirname = os.path.dirname(os.path.abspath(path))
        os.makedirs(dirname, exist_ok=True)
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise DatasetIOError("cannot write container ({})".format(e.strerror), path) from e

def _parse_header(data: bytes, path: str):
    if len(data) < len(MAGIC) + _HEADER.size or data[:len(MAGIC)] != MAGIC:
        raise DatasetIOError("not an ADST1 container", path)
    return _HEADER.unpack_from(data, len(MAGIC))


def save_matrix(path: str, matrix: np.ndarray) -> None:
    '''
    write a 2-D matrix (n_frames x dim) as float32.
    '''
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DatasetValidationError("an ADST1 matrix must be 2-D, got shape {}".format(matrix.shape))
    header = MAGIC + _HEADER.pack(MATRIX_VERSION, matrix.shape[0], matrix.shape[1])
    _write_bytes(path, header + np.ascontiguousarray(matrix, dtype="<f4").tobytes())

def load_matrix(path: str) -> np.ndarray:
    data = _read_bytes(path)
    version, n_frames, dim = _parse_header(data, path)
    if version != MATRIX_VERSION:
        raise DatasetIOError("container version {} is not a matrix".format(version), path)
    offset = len(MAGIC) + _HEADER.size
    expected = n_frames * dim * 4
    if len(data) - offset != expected:
        raise DatasetIOError("truncated payload ({} of {} bytes)".format(len(data) - offset, expected), path)
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(n_frames, dim).astype(np.float64)


def save_blocks(path: str, blocks: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, _HEADER.pack(BLOCK_VERSION, len(blocks), 0)]
    for name, value in blocks.items():
        value = np.asarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack("<{}Q".format(value.ndim), *value.shape))
        parts.append(np.ascontiguousarray(value).tobytes())
    _write_bytes(path, b"".join(parts))

def load_blocks(path: str) -> Dict[str, np.ndarray]:
    data = _read_bytes(path)
    version, n_blocks, _ = _parse_header(data, path)
    if version != BLOCK_VERSION:
        raise DatasetIOError("container version {} holds no weight blocks".format(version), path)
    offset = len(MAGIC) + _HEADER.size
    blocks = OrderedDict()
    try:
        for _ in range(n_blocks):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from("<{}Q".format(ndim), data, offset)
            offset += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if offset + 4 * count > len(data):
                raise struct.error("payload of block '{}' is truncated".format(name))
            blocks[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
            offset += 4 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise DatasetIOError("corrupt weight block ({})".format(e), path) from e
    return blocks


def save_modules(path: str, modules: Mapping[str, torch.nn.Module]) -> None:
    '''
    checkpoint several modules into one container; block names are "<module_name>.<parameter name>".
    '''
    blocks = OrderedDict()
    for module_name, module in modules.items():
        for key, value in module.state_dict().items():
            if value.is_floating_point():
                blocks[module_name + "." + key] = value.detach().cpu().numpy()
    save_blocks(path, blocks)

def load_modules(path: str, modules: Mapping[str, torch.nn.Module]) -> None:
    blocks = load_blocks(path)
    for module_name, module in modules.items():
        state = module.state_dict()
        prefix = module_name + "."
        for key, value in state.items():
            if not value.is_floating_point():
                continue
            if prefix + key not in blocks:
                raise DatasetValidationError("checkpoint {} has no block '{}'".format(path, prefix + key))
            block = blocks[prefix + key]
            if tuple(block.shape) != tuple(value.shape):
                raise DatasetValidationError("block '{}' has shape {}, the module expects {}".format(
                    prefix + key, tuple(block.shape), tuple(value.shape)))
            state[key] = torch.as_tensor(block, dtype=value.dtype, device=value.device)
        module.load_state_dict(state)
