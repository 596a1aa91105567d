"""Spreading codes, channel draws and training/testing datasets.

Random streams
--------------
Datasets are produced in shards of :func:`shard_size` frames.  Shard ``k`` of
a dataset with seed ``s`` draws from ``SeedSequence(s, spawn_key=(0, k))``,
so any shard can be regenerated on its own.  Evaluation streams live under
spawn key 1 (see :mod:`sccsi.harness.experiment`) and never overlap with
training data.

Within a batch the draw order is: bits, CSI ``h``, uplink channel ``g``,
noise.  With a batch of one frame this is exactly the order used by
:func:`gen_frame`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from .link import (Frame, LinkConfig, RealSample, SpreadingMatrix, coarse_estimate,
                   complex_normal, complex_to_real_stack, qpsk_modulate, snr_to_sigma2,
                   spread_superimpose, uplink_transmit)

DATASET_STREAM = 0
EVAL_STREAM = 1


def walsh_matrix(m: int, n: int) -> SpreadingMatrix:
    """First ``n`` columns of the Sylvester-ordered Hadamard matrix of order ``m``."""
    if m < 1 or m & (m - 1):
        raise ValueError(f"Walsh order must be a power of two, got {m}")
    if not (1 <= n <= m):
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    return SpreadingMatrix.from_matrix(hadamard(m, dtype=np.int64)[:, :n])


def gen_channel(n: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """CN(0, I/n) vector(s), shape ``(n,)`` or ``(count, n)``."""
    if n < 1:
        raise ValueError("channel length must be >= 1")
    shape = (n,) if count is None else (count, n)
    return complex_normal(rng, shape, 1.0 / n)


def gen_bits(count_bits: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    shape = (count_bits,) if count is None else (count, count_bits)
    return rng.integers(0, 2, size=shape, dtype=np.int8)


def gen_frame(cfg: LinkConfig, p: SpreadingMatrix, rng: np.random.Generator):
    """Draw one frame and its real-valued network sample."""
    return gen_batch(None, cfg, p, rng)


def gen_batch(count: int | None, cfg: LinkConfig, p: SpreadingMatrix,
              rng: np.random.Generator) -> tuple[Frame, RealSample]:
    """Draw ``count`` frames at once; every field gains a leading batch axis.

    ``count=None`` drops the batch axis (a single frame).
    """
    n, m = cfg.n_bs, cfg.m_frame
    bits = gen_bits(2 * m, rng, count)
    d = qpsk_modulate(bits)
    h = gen_channel(n, rng, count)
    g = gen_channel(n, rng, count)
    x = spread_superimpose(h, d, p, cfg)
    r = uplink_transmit(x, g, cfg.sigma2, rng)
    x_hat = coarse_estimate(r, g)
    frame = Frame(h=h, g=g, bits=bits, d=d, x=x, r=r)
    sample = RealSample(x_tilde=complex_to_real_stack(x_hat),
                        h_label=complex_to_real_stack(h),
                        d_label=complex_to_real_stack(d))
    return frame, sample


def shard_size(cfg: LinkConfig) -> int:
    """Frames per generation shard: about 4M complex noise entries per shard."""
    return max(1, (1 << 22) // (cfg.n_bs * cfg.m_frame))


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class Dataset:
    """Real-valued samples stacked row-wise, with their provenance."""

    x_tilde: np.ndarray
    h_label: np.ndarray
    d_label: np.ndarray
    link: LinkConfig
    snr_db: float
    seed: int

    @property
    def count(self) -> int:
        return self.x_tilde.shape[0]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i) -> RealSample:
        return RealSample(self.x_tilde[i], self.h_label[i], self.d_label[i])


def gen_dataset(count: int, cfg: LinkConfig, snr_db: float, seed: int) -> Dataset:
    """``count`` independent frames at ``snr_db``; a pure function of its arguments.

    ``cfg.sigma2`` is ignored; the noise variance follows from ``snr_db``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    link = cfg.with_(sigma2=snr_to_sigma2(snr_db, cfg.e_u))
    p = walsh_matrix(link.m_frame, link.n_bs)
    size = shard_size(link)
    xs, hs, ds = [], [], []
    for k, start in enumerate(range(0, count, size)):
        rng = stream_rng(seed, DATASET_STREAM, k)
        _, s = gen_batch(min(size, count - start), link, p, rng)
        xs.append(s.x_tilde)
        hs.append(s.h_label)
        ds.append(s.d_label)
    return Dataset(np.concatenate(xs), np.concatenate(hs), np.concatenate(ds),
                   link=link, snr_db=float(snr_db), seed=int(seed))


DATASET_MAGIC = b"SCCSI1"
# magic, N, M, rho, e_u, snr_db, count, seed
_DATASET_HEADER = struct.Struct("<6sIIdddQQ")


def write_dataset(ds: Dataset, path) -> Path:
    """Write the flat binary container plus a ``.manifest.json`` sidecar."""
    path = Path(path)
    link = ds.link
    header = _DATASET_HEADER.pack(DATASET_MAGIC, link.n_bs, link.m_frame, link.rho,
                                  link.e_u, ds.snr_db, ds.count, ds.seed)
    body = np.concatenate([ds.x_tilde, ds.h_label, ds.d_label], axis=1)
    with open(path, "wb") as f:
        f.write(header)
        f.write(body.astype("<f8").tobytes())
    manifest = {
        "format": "SCCSI1", "n": link.n_bs, "m": link.m_frame, "rho": link.rho,
        "e_u": link.e_u, "snr_db": ds.snr_db, "count": ds.count, "seed": ds.seed,
        "sample_layout": ["x_tilde[2M]", "h_label[2N]", "d_label[2M]"],
        "dtype": "float64 little-endian",
    }
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise ValueError("dataset file is truncated")
    magic, n, m, rho, e_u, snr_db, count, seed = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"not a dataset file (magic {magic!r})")
    width = 2 * m + 2 * n + 2 * m
    body = np.frombuffer(raw, dtype="<f8", offset=_DATASET_HEADER.size)
    if body.size != count * width:
        raise ValueError(f"dataset body holds {body.size} values, header implies {count * width}")
    body = body.reshape(count, width).astype(float)
    link = LinkConfig(n, m, rho, e_u, snr_to_sigma2(snr_db, e_u))
    return Dataset(body[:, :2 * m].copy(), body[:, 2 * m:2 * m + 2 * n].copy(),
                   body[:, 2 * m + 2 * n:].copy(), link=link, snr_db=snr_db, seed=seed)
