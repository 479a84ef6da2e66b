"""
From features to a feasible allocation
======================================

The allocator sees the effective channels between estimates and
precoders plus the estimated intensities, and its output heads always
land on the power budget and the cycle limit.
"""

import numpy as np

from robustdelay.allocator import AllocatorModel, FeatureNormalizer, map_to_allocation
from robustdelay.system import SystemParams, sample_realizations

rng = np.random.default_rng(2)
params = SystemParams(n_antennas=6, n_devices=4)

norm = FeatureNormalizer.fit(params, rng, 10000)
model = AllocatorModel.init(4, 6, depth=4, width=128, rng=rng, normalizer=norm)
real = sample_realizations(params, 5, rng)

feats = model.features(real)
print("feature vector length", feats.shape[1], "= 2K^2 + K")

alloc = map_to_allocation(model.forward(feats), params.p_max_mw, params.cpu)
print("transmit powers (mW)\n", alloc.p_tx.round(1))
print("computing power (mW)", alloc.p_co.round(1))
print("budget used", (alloc.p_tx.sum(-1) + alloc.p_co).round(6), "of", round(params.p_max_mw, 6))
print("cycles (G/s)\n", (alloc.f_co / 1e9).round(3))
print("cycle limit (G/s)", (np.minimum(params.f_max, alloc.f_pow) / 1e9).round(3))
alloc.check_feasible(params.p_max_mw, params.cpu)

# extreme logits cannot break the constraints
x = rng.standard_normal((3, 9)) * 40
map_to_allocation(x, params.p_max_mw, params.cpu).check_feasible(params.p_max_mw, params.cpu)
print("extreme logits stay feasible")

# checkpoints keep the normaliser with the weights
model.save("/tmp/demo_allocator.npz")
same = AllocatorModel.load("/tmp/demo_allocator.npz")
print("reloaded output identical:", np.array_equal(same.forward(same.features(real)), model.forward(feats)))
