"""Uncertainty injection and the empirical quantile of the worst-case delay.

For every network realization N error samples are drawn, the allocation is
evaluated on each perturbed state, and the ``ceil(gamma N)``-th largest
worst-case delay is used as the robust objective.  Its gradient is routed
through the selected sample and, within it, through the device attaining the
maximum delay.
"""

import math
from dataclasses import dataclass

import numpy as np

from .allocator import map_to_allocation, map_to_allocation_backward
from .channel import complex_normal, effective_gains, sinr_terms
from .compute import OMEGA_FLOOR, delay_components

MODES = ("joint", "comm-only", "comp-only", "none")

# scheme names used in reports -> injection mode
SCHEMES = {
    "joint-ui": "joint",
    "comm-ui": "comm-only",
    "comp-ui": "comp-only",
    "regular-dnn": "none",
}


@dataclass
class UncertaintyBatch:
    """Injected errors, shaped ``batch + (N, K, L)`` and ``batch + (N, K)``."""

    h_err: np.ndarray
    w_err: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown uncertainty mode {self.mode!r}")

    @property
    def n_samples(self):
        return self.w_err.shape[-2]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return UncertaintyBatch(self.h_err[idx], self.w_err[idx], self.mode)


@dataclass
class RobustDelayResult:
    """Quantile statistics; all fields carry the realization batch shape."""

    t_gamma: np.ndarray
    t_all: np.ndarray
    selected_sample: np.ndarray
    argmax_device: np.ndarray = None


def sample_uncertainty_batch(n_samples, n_devices, n_antennas, sigma_h_sq, sigma_w_sq, mode, rng,
                             batch=()):
    """Draw N channel and intensity error samples, zeroing the ones ``mode`` ignores."""
    if mode not in MODES:
        raise ValueError(f"unknown uncertainty mode {mode!r}")
    if n_samples < 1:
        raise ValueError("need at least one uncertainty sample")
    if sigma_h_sq < 0 or sigma_w_sq < 0:
        raise ValueError("error variances must be non-negative")
    hshape = tuple(batch) + (n_samples, n_devices, n_antennas)
    wshape = tuple(batch) + (n_samples, n_devices)
    if mode in ("joint", "comm-only") and sigma_h_sq > 0:
        h_err = complex_normal(rng, hshape, sigma_h_sq)
    else:
        h_err = np.zeros(hshape, dtype=complex)
    if mode in ("joint", "comp-only") and sigma_w_sq > 0:
        w_err = rng.normal(0.0, np.sqrt(sigma_w_sq), size=wshape)
    else:
        w_err = np.zeros(wshape)
    return UncertaintyBatch(h_err, w_err, mode)


def delay_terms(alloc, h_est, v, omega_est, batch, params):
    """Per-sample, per-device delay pieces for a fixed allocation.

    Returns a dict with ``comp``, ``comm``, ``rates`` and ``omega`` of shape
    ``(..., N, K)`` and ``gain_sq`` of shape ``(..., N, K, K)``.  The precoders
    ``v`` stay those built from the estimates.
    """
    h = np.asarray(h_est)[..., None, :, :] + batch.h_err
    omega = np.maximum(np.asarray(omega_est)[..., None, :] + batch.w_err, OMEGA_FLOOR)
    gain_sq = np.abs(effective_gains(h, np.asarray(v)[..., None, :, :])) ** 2
    p_tx = alloc.p_tx[..., None, :]
    signal, interference = sinr_terms(gain_sq, p_tx, params.noise_power_mw)
    rates = params.bandwidth_hz * np.log2(1.0 + signal / interference)
    comp, comm = delay_components(omega, params.d_in_bits, params.d_out_bits,
                                  alloc.f_co[..., None, :], rates)
    return dict(comp=comp, comm=comm, rates=rates, omega=omega, gain_sq=gain_sq)


def worst_case_delays(alloc, h_est, v, omega_est, batch, params):
    """``max_k t_k`` for each of the N injected samples, shape ``(..., N)``."""
    terms = delay_terms(alloc, h_est, v, omega_est, batch, params)
    return (terms["comp"] + terms["comm"]).max(axis=-1)


def quantile_rank(n_samples, gamma):
    """1-based descending rank ``ceil(gamma N)`` of the quantile sample."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    rank = math.ceil(gamma * n_samples - 1e-9)
    if rank < 1:
        raise ValueError("gamma * N must be at least 1")
    return rank


def empirical_quantile(t_all, gamma):
    """The ``ceil(gamma N)``-th largest entry along the last axis.

    Ties are broken by sample index (lower index ranks higher), so the
    selected sample is deterministic.
    """
    t_all = np.asarray(t_all, dtype=float)
    rank = quantile_rank(t_all.shape[-1], gamma)
    order = np.argsort(-t_all, axis=-1, kind="stable")
    selected = order[..., rank - 1]
    t_gamma = np.take_along_axis(t_all, selected[..., None], axis=-1)[..., 0]
    return RobustDelayResult(t_gamma=t_gamma, t_all=t_all, selected_sample=selected)


def robust_delay(alloc, realization, batch, params, gamma):
    """Quantile result plus the worst-case comm/comp components of the selected sample."""
    terms = delay_terms(alloc, realization.h_est, realization.v, realization.omega_est, batch, params)
    t = terms["comp"] + terms["comm"]
    res = empirical_quantile(t.max(axis=-1), gamma)
    idx = res.selected_sample[..., None, None]
    t_sel = np.take_along_axis(t, idx, axis=-2)[..., 0, :]
    res.argmax_device = t_sel.argmax(axis=-1)
    comm = np.take_along_axis(terms["comm"], idx, axis=-2)[..., 0, :]
    comp = np.take_along_axis(terms["comp"], idx, axis=-2)[..., 0, :]
    return res, comm.max(axis=-1), comp.max(axis=-1)


def robust_loss(model, realization, batch, params, gamma):
    """Mean robust delay over a realization batch and its parameter gradients.

    Parameters
    ----------
    model : AllocatorModel
    realization : NetworkRealization
        B realizations.
    batch : UncertaintyBatch
        Errors shaped ``(B, N, ...)``.
    params : SystemParams
    gamma : float

    Returns
    -------
    loss : float
        Mean over realizations of the empirical gamma-quantile worst-case delay.
    grads : list of ndarray
        Gradient for each entry of ``model.params``.
    result : RobustDelayResult
        Per-realization quantile statistics.
    """
    cpu = params.cpu
    p_max = params.p_max_mw
    feats = model.features(realization)
    x, acts = model.forward(feats, return_cache=True)
    alloc = map_to_allocation(x, p_max, cpu)
    terms = delay_terms(alloc, realization.h_est, realization.v, realization.omega_est, batch, params)
    t = terms["comp"] + terms["comm"]
    res = empirical_quantile(t.max(axis=-1), gamma)

    B, K = alloc.p_tx.shape
    bi = np.arange(B)
    n = res.selected_sample
    t_sel = t[bi, n]
    k = t_sel.argmax(axis=-1)
    res.argmax_device = k
    per_real = t_sel[bi, k]
    loss = float(per_real.mean())

    # d t_k / d p_tx through the rate of device k in sample n
    g_row = terms["gain_sq"][bi, n, k, :]
    p = alloc.p_tx
    total = np.sum(g_row * p, axis=-1) + params.noise_power_mw
    interference = total - g_row[bi, k] * p[bi, k]
    c = params.bandwidth_hz / np.log(2.0)
    dr_dp = c * g_row * (1.0 / total - 1.0 / interference)[:, None]
    dr_dp[bi, k] = c * g_row[bi, k] / total
    r = terms["rates"][bi, n, k]
    grad_p_tx = -(params.d_out_bits / r ** 2)[:, None] * dr_dp

    grad_f_co = np.zeros_like(alloc.f_co)
    grad_f_co[bi, k] = -terms["comp"][bi, n, k] / alloc.f_co[bi, k]
    grad_p_co = np.zeros(B)

    grad_x = map_to_allocation_backward(x, alloc, grad_p_tx / B, grad_p_co, grad_f_co / B, p_max, cpu)
    return loss, model.backward(acts, grad_x), res


def robust_loss_value(model, realization, batch, params, gamma):
    """Loss value only (no gradient bookkeeping)."""
    alloc = map_to_allocation(model.forward(model.features(realization)), params.p_max_mw, params.cpu)
    t_max = worst_case_delays(alloc, realization.h_est, realization.v, realization.omega_est, batch, params)
    return float(empirical_quantile(t_max, gamma).t_gamma.mean())
