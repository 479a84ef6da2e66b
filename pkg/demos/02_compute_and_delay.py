"""
Task intensities, the CPU power law and device delays
=====================================================

Intensities follow a Gamma law and the base station only sees a noisy
estimate.  Computing power buys CPU cycles through a cubic law, and each
device waits for its share of cycles plus its uplink transfer.
"""

import numpy as np

from robustdelay.compute import (CpuModel, compute_power_from_cycles, cycles_from_compute_power,
                                 sample_task_profile, total_delays)

rng = np.random.default_rng(1)

prof = sample_task_profile(6, 2.0, 200.0, 6400.0, rng, batch=(100000,))
print("mean intensity  ", prof.omega_true.mean().round(1), "cycles/bit")
print("estimate spread ", (prof.omega_true - prof.omega_est)[prof.omega_true > 700].std().round(1))
print("clamped estimates", prof.n_clamped_est, "of", prof.omega_est.size)

cpu = CpuModel()
for f in (1e9, 2e9, cpu.f_max):
    print(f"{f / 1e9:.1f} Gcycles/s costs {compute_power_from_cycles(f, cpu):8.1f} mW")
print("1 W buys", cycles_from_compute_power(1000.0, cpu) / 1e9, "Gcycles/s")

# 400 cycles/bit on 50 kbit at 1 Gcycle/s plus 75 kbit at 10 Mbit/s
t = total_delays(np.array([400.0]), np.array([5e4]), np.array([7.5e4]), np.array([1e9]),
                 np.array([1e7]))
print("delay", t[0] * 1e3, "ms")

# doubling both cycles and rate halves the delay
w = prof.omega_true[0]
t1 = total_delays(w, 5e4, 7.5e4, np.full(6, 5e8), np.full(6, 5e6))
t2 = total_delays(w, 5e4, 7.5e4, np.full(6, 1e9), np.full(6, 1e7))
print("halved:", np.allclose(t2, t1 / 2))
