"""System parameters and batched network realizations."""

from dataclasses import asdict, dataclass, replace

import numpy as np

from .channel import RateInputs, rzf_beamformers, sample_channel_pair
from .compute import CpuModel, sample_task_profile


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Physical scenario.  Defaults are the full-size single-cell setup."""

    n_antennas: int = 8
    n_devices: int = 6
    p_max_dbm: float = 38.0
    bandwidth_hz: float = 1e6
    noise_psd_dbm_hz: float = -75.0
    f_max: float = 4.6e9
    d_in_bits: float = 5e4
    d_out_bits: float = 7.5e4
    rzf_alpha: float = 0.2
    tau: float = 1e-28
    mu: float = 3.0
    gamma_shape: float = 2.0
    gamma_scale: float = 200.0
    sigma_h_sq: float = 0.05
    sigma_w_sq: float = 6400.0

    @property
    def p_max_mw(self):
        return float(dbm_to_mw(self.p_max_dbm))

    @property
    def noise_power_mw(self):
        return float(dbm_to_mw(self.noise_psd_dbm_hz)) * self.bandwidth_hz

    @property
    def cpu(self):
        return CpuModel(tau=self.tau, mu=self.mu, f_max=self.f_max)

    def rate_inputs(self, p_tx_mw):
        return RateInputs(self.bandwidth_hz, self.noise_power_mw, p_tx_mw)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass
class NetworkRealization:
    """A batch of B network draws; arrays carry a leading batch axis.

    ``v`` holds the RZF precoders built from ``h_est`` (shape ``(B, L, K)``).
    """

    h_true: np.ndarray
    h_est: np.ndarray
    omega_true: np.ndarray
    omega_est: np.ndarray
    v: np.ndarray

    def __len__(self):
        return self.h_est.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return NetworkRealization(self.h_true[idx], self.h_est[idx], self.omega_true[idx],
                                  self.omega_est[idx], self.v[idx])

    @classmethod
    def from_estimates(cls, h_est, omega_est, alpha, h_true=None, omega_true=None):
        """Wrap given estimates (e.g. a hand-built instance) into a realization batch."""
        def batched(a, dtype, ndim):
            a = np.asarray(a, dtype=dtype)
            return a[None] if a.ndim == ndim - 1 else a

        h_est = batched(h_est, complex, 3)
        omega_est = batched(omega_est, float, 2)
        h_true = h_est.copy() if h_true is None else batched(h_true, complex, 3)
        omega_true = omega_est.copy() if omega_true is None else batched(omega_true, float, 2)
        v = rzf_beamformers(h_est, alpha).v
        return cls(h_true, h_est, omega_true, omega_est, v)


def sample_realizations(params, n, rng):
    """Draw ``n`` independent network realizations under ``params``."""
    ch = sample_channel_pair(params.n_antennas, params.n_devices, params.sigma_h_sq, rng, batch=(n,))
    tasks = sample_task_profile(params.n_devices, params.gamma_shape, params.gamma_scale,
                                params.sigma_w_sq, rng, batch=(n,))
    v = rzf_beamformers(ch.h_est, params.rzf_alpha).v
    return NetworkRealization(ch.h_true, ch.h_est, tasks.omega_true, tasks.omega_est, v)
