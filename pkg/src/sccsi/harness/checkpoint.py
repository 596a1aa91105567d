"""Binary checkpoint for :class:`~sccsi.unfolded.UnfoldedModel`.

Layout (all integers unsigned 32-bit, all reals float64, little-endian)::

    magic        7 bytes  b"SCCSIM1"
    version      u32      FORMAT_VERSION
    N, M         u32, u32
    n_subnets    u32
    rho, e_u, sigma2   f64 x 3
    meta_len     u32
    meta         meta_len bytes, UTF-8 JSON of train_meta (sorted keys)
    tensors      f64 blocks, per subnet in cascade order:
                 w1, b1, w2, b2,
                 bn_in: gamma, beta, running_mean, running_var, momentum, eps
                 bn_hidden: same six entries
    crc32        u32 over every preceding byte

Matrices are row-major.  The spreading matrix is rebuilt from (N, M).
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..datagen import walsh_matrix
from ..link import LinkConfig
from ..nn import BatchNormState, SubnetParams
from ..unfolded import UnfoldedModel

MAGIC = b"SCCSIM1"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<7sIIII3dI")
_CRC = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _subnet_shapes(n_in: int, hidden: int, n_out: int):
    bn = lambda f: [(f,), (f,), (f,), (f,), (), ()]  # noqa: E731
    return [(hidden, n_in), (hidden,), (n_out, hidden), (n_out,)] + bn(n_in) + bn(hidden)


def _layout(n: int, m: int, n_subnets: int):
    shapes = []
    for j in range(n_subnets):
        size = n if j % 2 == 0 else m
        shapes.append(_subnet_shapes(2 * size, 16 * size, 2 * size))
    return shapes


def _flatten(net: SubnetParams):
    out = [net.w1, net.b1, net.w2, net.b2]
    for bn in (net.bn_in, net.bn_hidden):
        out += [bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                np.float64(bn.momentum), np.float64(bn.eps)]
    return out


def _unflatten(arrays) -> SubnetParams:
    w1, b1, w2, b2 = arrays[:4]
    bns = []
    for k in (4, 10):
        g, b, rm, rv, mom, eps = arrays[k:k + 6]
        bns.append(BatchNormState(g, b, rm, rv, momentum=float(mom), eps=float(eps)))
    return SubnetParams(w1=w1, b1=b1, w2=w2, b2=b2, bn_in=bns[0], bn_hidden=bns[1])


def dumps(model: UnfoldedModel) -> bytes:
    link = model.link
    meta = json.dumps(model.train_meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, link.n_bs, link.m_frame, len(model.subnets),
                        link.rho, link.e_u, link.sigma2, len(meta)), meta]
    for net in model.subnets:
        for arr in _flatten(net):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def loads(raw: bytes) -> UnfoldedModel:
    if len(raw) < _HEAD.size + _CRC.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, n, m, n_sub, rho, e_u, sigma2, meta_len = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a model checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    body, (crc,) = raw[:-_CRC.size], _CRC.unpack(raw[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch; checkpoint is corrupted")
    layout = _layout(n, m, n_sub)
    n_values = sum(int(np.prod(s)) for net in layout for s in net)
    pos = _HEAD.size + meta_len
    if len(body) - pos != 8 * n_values:
        raise CheckpointError(f"tensor block holds {len(body) - pos} bytes, "
                              f"header (N={n}, M={m}, subnets={n_sub}) implies {8 * n_values}")
    try:
        meta = json.loads(body[_HEAD.size:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata block: {exc}") from None
    flat = np.frombuffer(body, dtype="<f8", offset=pos).astype(float)
    subnets, k = [], 0
    for shapes in layout:
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape))
            chunk = flat[k:k + size]
            arrays.append(chunk.reshape(shape).copy() if shape else chunk[0])
            k += size
        subnets.append(_unflatten(arrays))
    try:
        link = LinkConfig(n, m, rho, e_u, sigma2)
        return UnfoldedModel(subnets=subnets, link=link,
                             p_lifted=walsh_matrix(m, n).p_lifted, train_meta=meta)
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint: {exc}") from None


def save_model(model: UnfoldedModel, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model))
    return path


def load_model(path) -> UnfoldedModel:
    return loads(Path(path).read_bytes())
