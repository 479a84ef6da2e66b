"""Edge computing model: task intensities, CPU power law and per-device delay."""

from dataclasses import dataclass

import numpy as np

OMEGA_FLOOR = 1.0  # cycles/bit; lower clamp on sampled intensities


@dataclass
class TaskProfile:
    omega_true: np.ndarray
    omega_est: np.ndarray
    d_in: np.ndarray
    d_out: np.ndarray
    sigma_w_sq: float
    n_clamped_true: int = 0
    n_clamped_est: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.d_in) <= 0) or np.any(np.asarray(self.d_out) <= 0):
            raise ValueError("task data sizes must be positive")


@dataclass(frozen=True)
class CpuModel:
    """CPU power law ``p = tau * F**mu`` with ``tau`` in SI units (W s^mu)."""

    tau: float = 1e-28
    mu: float = 3.0
    f_max: float = 4.6e9

    def __post_init__(self):
        if self.tau <= 0 or self.mu <= 1 or self.f_max <= 0:
            raise ValueError("CpuModel needs tau > 0, mu > 1, f_max > 0")

    @property
    def tau_mw(self):
        return 1e3 * self.tau


def sample_task_profile(n_devices, gamma_shape, gamma_scale, sigma_w_sq, rng,
                        d_in=5e4, d_out=7.5e4, batch=()):
    """Draw ground-truth intensities from Gamma(shape, scale) and their estimates.

    The estimate is ``omega_true - err`` with ``err ~ N(0, sigma_w_sq)``.  Both
    arrays are clamped from below at ``OMEGA_FLOOR``; the number of clamped
    entries is recorded on the returned profile.
    """
    if gamma_shape <= 0 or gamma_scale <= 0:
        raise ValueError("Gamma shape and scale must be positive")
    if sigma_w_sq < 0:
        raise ValueError("sigma_w_sq must be non-negative")
    shape = tuple(batch) + (n_devices,)
    omega = rng.gamma(gamma_shape, gamma_scale, size=shape)
    if sigma_w_sq > 0:
        err = rng.normal(0.0, np.sqrt(sigma_w_sq), size=shape)
    else:
        err = np.zeros(shape)
    omega_est = omega - err
    return TaskProfile(
        omega_true=np.maximum(omega, OMEGA_FLOOR),
        omega_est=np.maximum(omega_est, OMEGA_FLOOR),
        d_in=np.broadcast_to(np.asarray(d_in, dtype=float), shape).copy(),
        d_out=np.broadcast_to(np.asarray(d_out, dtype=float), shape).copy(),
        sigma_w_sq=sigma_w_sq,
        n_clamped_true=int(np.count_nonzero(omega < OMEGA_FLOOR)),
        n_clamped_est=int(np.count_nonzero(omega_est < OMEGA_FLOOR)),
    )


def compute_power_from_cycles(total_cycles, cpu):
    """Computing power in mW needed to run ``total_cycles`` cycles/s."""
    return cpu.tau_mw * np.asarray(total_cycles, dtype=float) ** cpu.mu


def cycles_from_compute_power(p_co_mw, cpu):
    """Cycles/s affordable with ``p_co_mw`` mW; inverse of the power law."""
    return (np.asarray(p_co_mw, dtype=float) / cpu.tau_mw) ** (1.0 / cpu.mu)


def delay_components(omega, d_in, d_out, f_co, rates):
    """Return ``(computation, communication)`` delays in seconds.

    A zero cycle share or zero rate yields an infinite delay for that device.
    """
    with np.errstate(divide="ignore"):
        comp = omega * d_in / f_co
        comm = d_out / rates
    return comp, comm


def total_delays(omega_true, d_in, d_out, f_co, rates):
    """``t_k = omega_k D_in_k / f_k + D_out_k / r_k`` in seconds."""
    comp, comm = delay_components(omega_true, d_in, d_out, f_co, rates)
    return comp + comm
