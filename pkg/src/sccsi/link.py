"""Complex-baseband model of CSI feedback by superimposed coding.

A user spreads its downlink CSI ``h`` (1 x N) with a Walsh matrix ``P``
(M x N), superimposes it on its own QPSK payload ``d`` (1 x M) and sends the
frame over a single-antenna-to-N-antenna uplink ``g``.  The base station sees
``r = g x + noise`` (N x M).

All functions accept leading batch axes, so a stack of frames can be pushed
through in one call.  Row vectors are stored as 1-D arrays of shape ``(..., L)``
and column vectors ``g`` as ``(..., N)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularityError(ValueError):
    """A normalising quantity (channel norm, MMSE denominator) is zero."""


@dataclass(frozen=True)
class LinkConfig:
    """Physical-layer parameters shared by every stage of the simulator.

    Parameters
    ----------
    n_bs : int
        Number of BS antennas, i.e. the CSI length ``N``.
    m_frame : int
        Frame (payload) length ``M``; must be a power of two.
    rho : float
        Power proportional coefficient: share of ``e_u`` spent on the CSI.
    e_u : float
        Per-user transmit power.
    sigma2 : float
        Variance of each complex noise entry.
    """

    n_bs: int
    m_frame: int
    rho: float = 0.2
    e_u: float = 1.0
    sigma2: float = 0.0

    def __post_init__(self):
        n, m = self.n_bs, self.m_frame
        if not (1 <= n <= m):
            raise ValueError(f"need 1 <= N <= M, got N={n}, M={m}")
        if m & (m - 1):
            raise ValueError(f"M must be a power of two, got {m}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.e_u > 0:
            raise ValueError(f"e_u must be positive, got {self.e_u}")
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be non-negative, got {self.sigma2}")

    @property
    def csi_gain(self) -> float:
        """Amplitude on the spread CSI, sqrt(rho E / N)."""
        return float(np.sqrt(self.rho * self.e_u / self.n_bs))

    @property
    def data_gain(self) -> float:
        """Amplitude on the payload, sqrt((1 - rho) E)."""
        return float(np.sqrt((1.0 - self.rho) * self.e_u))

    def with_(self, **changes) -> "LinkConfig":
        fields = dict(n_bs=self.n_bs, m_frame=self.m_frame, rho=self.rho,
                      e_u=self.e_u, sigma2=self.sigma2)
        fields.update(changes)
        return LinkConfig(**fields)


@dataclass(frozen=True)
class SpreadingMatrix:
    """Walsh spreading matrix ``p`` (M x N, entries +-1) and its real lift.

    ``p_lifted`` is ``blockdiag(p, p)`` so that stacking ``[Re, Im]`` commutes
    with spreading: ``c2r(h @ p.T) == p_lifted @ c2r(h)``.
    """

    p: np.ndarray
    p_lifted: np.ndarray

    @classmethod
    def from_matrix(cls, p) -> "SpreadingMatrix":
        p = np.asarray(p, dtype=np.int64)
        if p.ndim != 2:
            raise ValueError("spreading matrix must be 2-D")
        m, n = p.shape
        lifted = np.zeros((2 * m, 2 * n), dtype=np.int64)
        lifted[:m, :n] = p
        lifted[m:, n:] = p
        p.setflags(write=False)
        lifted.setflags(write=False)
        return cls(p=p, p_lifted=lifted)

    @property
    def m(self) -> int:
        return self.p.shape[0]

    @property
    def n(self) -> int:
        return self.p.shape[1]


@dataclass
class Frame:
    """One transmission: CSI, uplink channel, bits, payload, composed and received signals."""

    h: np.ndarray
    g: np.ndarray
    bits: np.ndarray
    d: np.ndarray
    x: np.ndarray
    r: np.ndarray


@dataclass
class RealSample:
    """Network-facing view of a frame: input ``x_tilde`` and labels."""

    x_tilde: np.ndarray
    h_label: np.ndarray
    d_label: np.ndarray


def _check_last(name, arr, size):
    if arr.shape[-1] != size:
        raise ValueError(f"{name} has trailing size {arr.shape[-1]}, expected {size}")


def spread_superimpose(h, d, p: SpreadingMatrix, cfg: LinkConfig) -> np.ndarray:
    """Compose the transmitted frame ``sqrt(rho E/N) h P^T + sqrt((1-rho) E) d``."""
    h = np.asarray(h, dtype=complex)
    d = np.asarray(d, dtype=complex)
    _check_last("h", h, cfg.n_bs)
    _check_last("d", d, cfg.m_frame)
    if p.p.shape != (cfg.m_frame, cfg.n_bs):
        raise ValueError(f"P has shape {p.p.shape}, expected {(cfg.m_frame, cfg.n_bs)}")
    return cfg.csi_gain * (h @ p.p.T) + cfg.data_gain * d


def complex_normal(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    """Circular complex Gaussian samples with ``E|z|^2 = var``.

    The real part is drawn before the imaginary part; batch generators rely
    on this order to reproduce per-frame draws.
    """
    scale = np.sqrt(var / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def uplink_transmit(x, g, sigma2: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Received block ``r = g x + noise`` with shape ``(..., N, M)``."""
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be non-negative, got {sigma2}")
    x = np.asarray(x, dtype=complex)
    g = np.asarray(g, dtype=complex)
    r = g[..., :, None] * x[..., None, :]
    if sigma2 > 0:
        if rng is None:
            raise ValueError("an rng is required when sigma2 > 0")
        r = r + complex_normal(rng, r.shape, sigma2)
    return r


def _norm2(g: np.ndarray) -> np.ndarray:
    n2 = np.sum(np.abs(g) ** 2, axis=-1)
    if np.any(n2 == 0):
        raise SingularityError("uplink channel vector has zero norm")
    return n2


def coarse_estimate(r, g) -> np.ndarray:
    """Remove the uplink channel with its pseudo-inverse ``g^H / ||g||^2``."""
    r = np.asarray(r, dtype=complex)
    g = np.asarray(g, dtype=complex)
    n2 = _norm2(g)
    return np.einsum("...n,...nm->...m", g.conj(), r) / n2[..., None]


def complex_to_real_stack(v) -> np.ndarray:
    """``[Re(v), Im(v)]`` along the last axis."""
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1).astype(float)


def real_to_complex(w) -> np.ndarray:
    """Inverse of :func:`complex_to_real_stack`."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] % 2:
        raise ValueError(f"stacked length must be even, got {w.shape[-1]}")
    half = w.shape[-1] // 2
    return w[..., :half] + 1j * w[..., half:]


def snr_to_sigma2(snr_db: float, e_u: float = 1.0) -> float:
    """Noise variance for ``SNR = 10 log10(E / sigma^2)``."""
    if not e_u > 0:
        raise ValueError(f"e_u must be positive, got {e_u}")
    return e_u * 10.0 ** (-snr_db / 10.0)


def nmse_per_sample(h_true, h_est) -> np.ndarray:
    h_true = np.asarray(h_true)
    h_est = np.asarray(h_est)
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_est.shape}")
    den = np.sum(np.abs(h_true) ** 2, axis=-1)
    if np.any(den == 0):
        raise SingularityError("zero-norm truth vector in NMSE")
    return np.sum(np.abs(h_true - h_est) ** 2, axis=-1) / den


def nmse(h_true, h_est) -> float:
    """Sample mean of ``||h - h_est||^2 / ||h||^2`` over the leading axes."""
    return float(np.mean(nmse_per_sample(h_true, h_est)))


# Gray mapping: the first bit of a pair sets the sign of the imaginary part,
# the second bit the sign of the real part.
_QPSK_SCALE = 1.0 / np.sqrt(2.0)


def qpsk_modulate(bits) -> np.ndarray:
    """Map bit pairs to unit-energy QPSK symbols.

    ``00 -> (1+j)/sqrt2``, ``01 -> (-1+j)/sqrt2``, ``11 -> (-1-j)/sqrt2``,
    ``10 -> (1-j)/sqrt2``.  Pairs are taken along the last axis.
    """
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape[-1] % 2:
        raise ValueError("bit count must be even")
    b0 = bits[..., 0::2]
    b1 = bits[..., 1::2]
    return _QPSK_SCALE * ((1 - 2 * b1) + 1j * (1 - 2 * b0))


def qpsk_demodulate(d_soft) -> np.ndarray:
    """Per-quadrant hard decision, inverse of :func:`qpsk_modulate`."""
    d_soft = np.asarray(d_soft)
    out = np.empty(d_soft.shape[:-1] + (2 * d_soft.shape[-1],), dtype=np.int8)
    out[..., 0::2] = d_soft.imag < 0
    out[..., 1::2] = d_soft.real < 0
    return out


def bit_errors(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def ber(a, b) -> float:
    """Fraction of differing bits."""
    a = np.asarray(a)
    return bit_errors(a, b) / a.size
