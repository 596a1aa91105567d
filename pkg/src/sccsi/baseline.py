"""Iterative MMSE estimate-and-cancel receiver (the SC baseline).

Each iteration despreads the residual, forms a scalar-MMSE CSI estimate,
cancels the CSI contribution, detects the payload with a scalar MMSE filter
and cancels that too.  The receiver is given the true uplink channel and
noise variance.

Every step broadcasts over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .link import LinkConfig, SingularityError, SpreadingMatrix

DEFAULT_ITERS = 3


@dataclass
class BaselineResult:
    h_est: np.ndarray
    d_est: np.ndarray
    residual: np.ndarray
    iterations_run: int


def _norm2(g) -> np.ndarray:
    n2 = np.sum(np.abs(g) ** 2, axis=-1)
    if np.any(n2 == 0):
        raise SingularityError("uplink channel vector has zero norm")
    return n2


def _ghr(g, r) -> np.ndarray:
    # g^H r for (..., N) and (..., N, K) -> (..., K)
    return np.einsum("...n,...nk->...k", np.conj(g), r)


def despread(r_k, p: SpreadingMatrix) -> np.ndarray:
    """``Z = r_k P / M``, shape ``(..., N, N)``."""
    return np.asarray(r_k) @ p.p / p.m


def csi_coefficient(g_norm2, cfg: LinkConfig):
    """Scalar that multiplies ``g^H Z`` in the MMSE CSI estimate."""
    n, m, rho, e = cfg.n_bs, cfg.m_frame, cfg.rho, cfg.e_u
    den = (n + (m - n) * rho) * e * g_norm2 + n * cfg.sigma2
    if np.any(den == 0):
        raise SingularityError("MMSE CSI denominator is zero")
    return m * np.sqrt(rho * e * n) / den


def data_coefficient(g_norm2, cfg: LinkConfig):
    """Scalar that multiplies ``g^H r_k`` in the MMSE payload detector."""
    a = (1.0 - cfg.rho) * cfg.e_u
    den = a * g_norm2 + cfg.sigma2
    if np.any(den == 0):
        raise SingularityError("MMSE payload denominator is zero (rho=1 and sigma2=0)")
    return np.sqrt(a) / den


def mmse_csi_estimate(z, g, cfg: LinkConfig) -> np.ndarray:
    """MMSE estimate of the downlink CSI from the despread block ``z``."""
    c = csi_coefficient(_norm2(g), cfg)
    return np.asarray(c)[..., None] * _ghr(g, z)


def cancel_csi(r_k, g, h_breve, p: SpreadingMatrix, cfg: LinkConfig) -> np.ndarray:
    """Subtract ``sqrt(rho E/N) g h_breve P^T`` from the residual."""
    spread = np.asarray(h_breve) @ p.p.T
    return r_k - cfg.csi_gain * np.asarray(g)[..., :, None] * spread[..., None, :]


def mmse_ulus_detect(r_k, g, cfg: LinkConfig) -> np.ndarray:
    """Soft MMSE estimate of the payload symbols."""
    c = data_coefficient(_norm2(g), cfg)
    return np.asarray(c)[..., None] * _ghr(g, r_k)


def cancel_ulus(r_k, g, d_breve, cfg: LinkConfig) -> np.ndarray:
    """Subtract ``sqrt((1-rho) E) g d_breve`` from the residual."""
    return r_k - cfg.data_gain * np.asarray(g)[..., :, None] * np.asarray(d_breve)[..., None, :]


def run_baseline(r, g, p: SpreadingMatrix, cfg: LinkConfig,
                 iters: int = DEFAULT_ITERS) -> BaselineResult:
    """Run ``iters`` estimate-and-cancel iterations on received block(s) ``r``.

    Parameters
    ----------
    r : array, shape (..., N, M)
        Received blocks.
    g : array, shape (..., N)
        Known uplink channels.
    p : SpreadingMatrix
    cfg : LinkConfig
        Must carry the true noise variance.
    iters : int
        Number of full iterations (CSI step + payload step).

    Returns
    -------
    BaselineResult
        Estimates from the last iteration; ``d_est`` holds soft values.

    Notes
    -----
    Each cancellation is applied to the original block ``r``: the CSI step of
    iteration ``k`` sees ``r`` minus the payload estimate of iteration
    ``k - 1``, and the payload step sees ``r`` minus the CSI estimate of
    iteration ``k``.  For ``iters=1`` this is the plain step sequence.

    When ``(1 - rho) E == 0`` no payload power is transmitted, so the payload
    detector is skipped and ``d_est`` is zero instead of dividing 0 by 0.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    r = np.asarray(r, dtype=complex)
    g = np.asarray(g, dtype=complex)
    _norm2(g)
    no_payload = cfg.data_gain == 0.0

    d_est = np.zeros(r.shape[:-2] + (cfg.m_frame,), dtype=complex)
    h_est = residual = None
    for _ in range(iters):
        r_k = cancel_ulus(r, g, d_est, cfg)
        h_est = mmse_csi_estimate(despread(r_k, p), g, cfg)
        r_k = cancel_csi(r, g, h_est, p, cfg)
        if not no_payload:
            d_est = mmse_ulus_detect(r_k, g, cfg)
        residual = cancel_ulus(r_k, g, d_est, cfg)
    return BaselineResult(h_est=h_est, d_est=d_est, residual=residual, iterations_run=iters)
