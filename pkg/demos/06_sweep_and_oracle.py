"""
Sweeps, CSV output and the grid oracle
======================================

A toy power sweep written to CSV, then a one-device model compared with
the exhaustive search over the power split.  The same runs are
available from the command line:

    python -m robustdelay sweep --config configs/desk.ini --out results
    python -m robustdelay oracle --devices 1
"""

import tempfile

from robustdelay.harness import ExperimentConfig, oracle_experiment, read_sweep_csv, run_sweep
from robustdelay.system import SystemParams
from robustdelay.trainer import TrainingConfig

cfg = ExperimentConfig(system=SystemParams(n_antennas=3, n_devices=2),
                       training=TrainingConfig(epochs=5, learning_rate=3e-3, n_samples=100,
                                               realizations_per_minibatch=50, validation_size=100,
                                               test_size=200),
                       depth=3, width=32, normalizer_draws=2000,
                       schemes=("regular-dnn", "joint-ui"), seeds=(0,),
                       sweep_axis="p_max_dbm", sweep_grid=(28.0, 38.0))

out = tempfile.mkdtemp()
path, _ = run_sweep(cfg, out)
print(open(path).read())
for row in read_sweep_csv(path):
    print(f"{row['scheme']:12s} {row['value']:4.0f} dBm  {row['tgamma_s'] * 1e3:6.2f} ms")

report, _, _, _ = oracle_experiment(1, n_instances=5)
print("gap to oracle per instance", report.gaps.round(5))
