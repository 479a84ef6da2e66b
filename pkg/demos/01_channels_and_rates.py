"""
Estimated channels, RZF precoders and achievable rates
=======================================================

Draw a few channel realizations, look at how the estimation error splits
the channel power, and compare the rates seen through the estimate with
the rates under the true channel.
"""

import numpy as np

from robustdelay.channel import RateInputs, achievable_rates, rzf_beamformers, sample_channel_pair
from robustdelay.system import SystemParams

rng = np.random.default_rng(0)
params = SystemParams()  # 8 antennas, 6 devices

# true = estimate + error, with the error carrying sigma_h^2 of the unit power
pair = sample_channel_pair(params.n_antennas, params.n_devices, params.sigma_h_sq, rng, batch=(20000,))
print("E|h|^2     ", np.mean(np.abs(pair.h_true) ** 2).round(3))
print("E|h_est|^2 ", np.mean(np.abs(pair.h_est) ** 2).round(3))
print("E|err|^2   ", np.mean(np.abs(pair.h_err) ** 2).round(3))

# one realization: precoders come from the estimate only
h_est, h_true = pair.h_est[0], pair.h_true[0]
v = rzf_beamformers(h_est, params.rzf_alpha).v
print("column norms", np.linalg.norm(v, axis=0).round(12))

# equal power split between devices
inputs = params.rate_inputs(np.full(params.n_devices, params.p_max_mw / (params.n_devices + 1)))
r_est = achievable_rates(h_est, v, inputs)
r_true = achievable_rates(h_true, v, inputs)
print("rates through the estimate (Mbit/s)", (r_est / 1e6).round(2))
print("rates under the true channel       ", (r_true / 1e6).round(2))

# the gap grows with the error variance
for s in (0.0, 0.02, 0.05, 0.1):
    pair = sample_channel_pair(params.n_antennas, params.n_devices, s, rng, batch=(2000,))
    v = rzf_beamformers(pair.h_est, params.rzf_alpha).v
    r = achievable_rates(pair.h_true, v, inputs)
    print(f"sigma_h^2 = {s:<5} mean rate {r.mean() / 1e6:6.2f} Mbit/s, 5% worst {np.quantile(r, 0.05) / 1e6:6.2f}")

# scaling noise and powers together leaves the rates unchanged
a = achievable_rates(h_true, v[0], RateInputs(1e6, 1.0, np.ones(6)))
b = achievable_rates(h_true, v[0], RateInputs(1e6, 10.0, 10 * np.ones(6)))
print("scale invariant:", np.allclose(a, b))
