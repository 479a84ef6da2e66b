"""Downlink channel model: estimated/true channel pairs, RZF precoding and rates.

Channels are stored row-wise, ``h[..., k, :]`` being the L-dimensional channel
of device ``k``.  Beamformers are stored column-wise, ``v[..., :, k]`` being the
unit-norm precoder of device ``k``.  All functions broadcast over leading batch
dimensions.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ChannelPair:
    """Ground-truth and estimated channels of one (or a batch of) network draw."""

    h_true: np.ndarray
    h_est: np.ndarray
    sigma_h_sq: float

    def __post_init__(self):
        if self.h_true.shape != self.h_est.shape:
            raise ValueError("h_true and h_est must have identical shapes")

    @property
    def h_err(self):
        return self.h_true - self.h_est


@dataclass
class BeamformingMatrix:
    v: np.ndarray
    alpha: float


@dataclass
class RateInputs:
    """Bandwidth (Hz), receiver noise power (mW) and per-device transmit power (mW)."""

    bandwidth_hz: float
    noise_power_mw: float
    p_tx_mw: np.ndarray

    @classmethod
    def from_psd(cls, bandwidth_hz, noise_psd_mw_per_hz, p_tx_mw):
        return cls(bandwidth_hz, noise_psd_mw_per_hz * bandwidth_hz, np.asarray(p_tx_mw))


def complex_normal(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    z = rng.standard_normal(tuple(shape) + (2,)).view(np.complex128)[..., 0]
    z *= np.sqrt(variance / 2.0)
    return z


def sample_channel_pair(n_antennas, n_devices, sigma_h_sq, rng, batch=()):
    """Draw ``h = h_est + h_err`` with unit-variance Rayleigh ``h``.

    The estimate and the error are independent with variances ``1 - sigma_h_sq``
    and ``sigma_h_sq``, which makes ``h_est`` the MMSE estimate of ``h``.

    Parameters
    ----------
    n_antennas, n_devices : int
        L and K.
    sigma_h_sq : float
        Estimation error variance, in [0, 1].
    rng : numpy.random.Generator
    batch : tuple of int, optional
        Leading batch shape.

    Returns
    -------
    ChannelPair
        With arrays of shape ``batch + (K, L)``.
    """
    if not 0.0 <= sigma_h_sq <= 1.0:
        raise ValueError(f"sigma_h_sq must lie in [0, 1], got {sigma_h_sq}")
    if n_antennas < 1 or n_devices < 1:
        raise ValueError("need at least one antenna and one device")
    shape = tuple(batch) + (n_devices, n_antennas)
    h_est = complex_normal(rng, shape, 1.0 - sigma_h_sq)
    if sigma_h_sq > 0:
        h_err = complex_normal(rng, shape, sigma_h_sq)
    else:
        h_err = np.zeros(shape, dtype=complex)
    return ChannelPair(h_true=h_est + h_err, h_est=h_est, sigma_h_sq=sigma_h_sq)


def rzf_beamformers(h_est, alpha):
    """Column-normalised regularised zero-forcing precoders.

    With ``H = h_est^T`` (L x K, channels as columns) this evaluates
    ``V = H (H^H H + alpha I_K)^{-1}`` and scales every column to unit norm.
    A column that is identically zero (all-zero estimate) is left at zero.
    """
    if alpha <= 0:
        raise ValueError("RZF regulariser alpha must be positive")
    h_est = np.asarray(h_est)
    H = np.swapaxes(h_est, -1, -2)  # (..., L, K)
    K = H.shape[-1]
    gram = np.conj(h_est) @ H + alpha * np.eye(K)  # (..., K, K)
    # V = H gram^{-1}  <=>  gram^T V^T = H^T
    v = np.swapaxes(np.linalg.solve(np.swapaxes(gram, -1, -2), h_est), -1, -2)
    norms = np.linalg.norm(v, axis=-2, keepdims=True)
    v = np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)
    return BeamformingMatrix(v=v, alpha=alpha)


def effective_gains(channels, v):
    """Complex ``h_k^H v_j`` as a ``(..., K, K)`` array indexed ``[k, j]``."""
    return np.conj(channels) @ v


def sinr_terms(gain_sq, p_tx, noise_power):
    """Return (signal, interference-plus-noise) per device.

    ``gain_sq[..., k, j] = |h_k^H v_j|^2``.
    """
    signal = np.diagonal(gain_sq, axis1=-2, axis2=-1) * p_tx
    total = np.einsum("...kj,...j->...k", gain_sq, p_tx) + noise_power
    return signal, total - signal


def achievable_rates(channels, v, inputs):
    """Per-device achievable rate in bit/s.

    ``r_k = W log2(1 + |h_k^H v_k|^2 p_k / (sum_{j != k} |h_k^H v_j|^2 p_j + sigma^2))``

    Parameters
    ----------
    channels : (..., K, L) complex array
        Channels the signal actually travels through.
    v : BeamformingMatrix or (..., L, K) complex array
    inputs : RateInputs
    """
    if isinstance(v, BeamformingMatrix):
        v = v.v
    p = np.asarray(inputs.p_tx_mw, dtype=float)
    if np.any(p < 0):
        raise ValueError("transmit powers must be non-negative")
    gain_sq = np.abs(effective_gains(channels, v)) ** 2
    signal, interference = sinr_terms(gain_sq, p, inputs.noise_power_mw)
    return inputs.bandwidth_hz * np.log2(1.0 + signal / interference)
