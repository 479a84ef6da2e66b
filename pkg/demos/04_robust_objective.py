"""
The quantile worst-case delay and its gradient
==============================================

For one realization, inject N error samples after the allocation,
compute the worst device delay of each, and take the value exceeded by a
fraction gamma of them.  The gradient flows through that one sample.
"""

import numpy as np

from robustdelay.allocator import AllocatorModel, FeatureNormalizer, map_to_allocation
from robustdelay.robust import (empirical_quantile, robust_loss, sample_uncertainty_batch,
                                worst_case_delays)
from robustdelay.system import SystemParams, sample_realizations

rng = np.random.default_rng(3)
params = SystemParams(n_antennas=4, n_devices=3)
model = AllocatorModel.init(3, 4, 2, 32, rng, FeatureNormalizer.fit(params, rng, 2000))
real = sample_realizations(params, 1, rng)
alloc = map_to_allocation(model.forward(model.features(real)), params.p_max_mw, params.cpu)

for mode in ("none", "comm-only", "comp-only", "joint"):
    batch = sample_uncertainty_batch(1000, 3, 4, params.sigma_h_sq, params.sigma_w_sq, mode, rng,
                                     batch=(1,))
    t = worst_case_delays(alloc, real.h_est, real.v, real.omega_est, batch, params)[0]
    q = empirical_quantile(t, 0.05)
    print(f"{mode:10s} median {np.median(t) * 1e3:7.2f} ms   5% quantile {q.t_gamma * 1e3:7.2f} ms"
          f"   (sample {q.selected_sample})")

# the 50th largest of 1000 values
print(empirical_quantile(np.arange(1.0, 1001.0), 0.05).t_gamma)

# analytic gradient against a central difference along a random direction
batch = sample_uncertainty_batch(200, 3, 4, params.sigma_h_sq, params.sigma_w_sq, "joint", rng,
                                 batch=(1,))
loss, grads, _ = robust_loss(model, real, batch, params, 0.05)
d = [rng.standard_normal(p.shape) for p in model.params]
eps = 1e-6
plus, minus = model.copy(), model.copy()
for a, b, e in zip(plus.params, minus.params, d):
    a += eps * e
    b -= eps * e
fd = (robust_loss(plus, real, batch, params, 0.05)[0] - robust_loss(minus, real, batch, params, 0.05)[0]) / (2 * eps)
print("directional derivative", sum(np.sum(g * e) for g, e in zip(grads, d)), "finite difference", fd)
