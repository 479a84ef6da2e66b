"""Experiment configuration, scheme sweeps, delay decomposition and oracle checks."""

import configparser
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .allocator import AllocatorModel, FeatureNormalizer, map_to_allocation
from .robust import SCHEMES, empirical_quantile, sample_uncertainty_batch, worst_case_delays
from .system import NetworkRealization, SystemParams, sample_realizations
from .trainer import (TrainingConfig, TrainingDivergence, evaluate, make_scenario_set, train)

log = logging.getLogger(__name__)

SWEEP_AXES = ("sigma_h_sq", "sigma_w_sq", "p_max_dbm")
CSV_HEADER = "scheme,axis,value,seed,tgamma_s,comm_s,comp_s,n_realizations,diverged"
CACHE_VERSION = 1


@dataclass
class ExperimentConfig:
    system: SystemParams = field(default_factory=SystemParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    depth: int = 10
    width: int = 400
    input_mode: str = "effective"
    normalizer_draws: int = 10_000
    schemes: tuple = ("regular-dnn", "comm-ui", "comp-ui", "joint-ui")
    seeds: tuple = (0,)
    sweep_axis: str = "sigma_h_sq"
    sweep_grid: tuple = (0.0, 0.02, 0.04, 0.06)
    test_seed: int = 2024
    workers: int = 1

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes {sorted(unknown)}")
        for value in self.sweep_grid:
            cell = self.system.replace(**{self.sweep_axis: value})
            if not 0 <= cell.sigma_h_sq <= 1 or cell.sigma_w_sq < 0:
                raise ValueError(f"invalid sweep value {value} for {self.sweep_axis}")

    @classmethod
    def desk(cls, **overrides):
        """Reduced sizes that keep a full sweep on one workstation."""
        # 500 optimizer steps in total, hence a larger step than the full profile
        cfg = dict(system=SystemParams(n_antennas=6, n_devices=4),
                   training=TrainingConfig(learning_rate=3e-3),
                   depth=4, width=128, seeds=(0, 1, 2), sweep_axis="p_max_dbm",
                   sweep_grid=(28.0, 31.0, 34.0, 38.0))
        cfg.update(overrides)
        return cls(**cfg)

    @classmethod
    def full(cls, **overrides):
        """Full-size scenario, network and training schedule."""
        cfg = dict(training=TrainingConfig(epochs=500, minibatches_per_epoch=50,
                                           realizations_per_minibatch=1000, n_samples=1000,
                                           validation_size=2000, test_size=2000))
        cfg.update(overrides)
        return cls(**cfg)

    def cell(self, scheme, value, seed):
        """System parameters and training config of one sweep cell."""
        system = self.system.replace(**{self.sweep_axis: float(value)})
        training = dataclasses.replace(self.training, scheme=scheme, seed=int(seed))
        return system, training

    def cell_key(self, scheme, value, seed):
        system, training = self.cell(scheme, value, seed)
        payload = dict(version=CACHE_VERSION, system=system.to_dict(), training=training.to_dict(),
                       depth=self.depth, width=self.width, input_mode=self.input_mode,
                       normalizer_draws=self.normalizer_draws)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


# -- config files ------------------------------------------------------------

def _parse_tuple(text, cast):
    return tuple(cast(t.strip()) for t in text.split(",") if t.strip())


def _cast_like(default, text):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    return type(default)(text) if default is not None else text


def load_config(path, desk=False):
    """Read an INI file with ``[system]``, ``[model]``, ``[training]`` and ``[experiment]`` sections.

    Keys left out keep the defaults of the desk or full profile.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    base = ExperimentConfig.desk() if desk else ExperimentConfig.full()
    if parser.has_section("experiment") and parser.getboolean("experiment", "desk", fallback=False):
        base = ExperimentConfig.desk()

    def section(name, obj):
        if not parser.has_section(name):
            return {}
        out = {}
        for key, text in parser.items(name):
            if key not in {f.name for f in dataclasses.fields(obj)}:
                raise ValueError(f"unknown key {key!r} in [{name}]")
            out[key] = _cast_like(getattr(obj, key), text)
        return out

    system = base.system.replace(**section("system", base.system))
    training = dataclasses.replace(base.training, **section("training", base.training))
    changes = dict(system=system, training=training)
    if parser.has_section("model"):
        m = parser["model"]
        changes.update(depth=m.getint("depth", base.depth), width=m.getint("width", base.width),
                       input_mode=m.get("input_mode", base.input_mode),
                       normalizer_draws=m.getint("normalizer_draws", base.normalizer_draws))
    if parser.has_section("experiment"):
        e = parser["experiment"]
        if "schemes" in e:
            changes["schemes"] = _parse_tuple(e["schemes"], str)
        if "seeds" in e:
            changes["seeds"] = _parse_tuple(e["seeds"], int)
        if "sweep_axis" in e:
            changes["sweep_axis"] = e["sweep_axis"].strip()
        if "sweep_grid" in e:
            changes["sweep_grid"] = _parse_tuple(e["sweep_grid"], float)
        changes["test_seed"] = e.getint("test_seed", base.test_seed)
        changes["workers"] = e.getint("workers", base.workers)
    return dataclasses.replace(base, **changes)


# -- single cells ------------------------------------------------------------

def build_model(cfg, system, seed):
    """Untrained allocator with a normaliser fitted to ``system``; seeded by ``seed`` only."""
    norm = FeatureNormalizer.fit(system, np.random.default_rng([seed, 1]), cfg.normalizer_draws,
                                 cfg.input_mode)
    return AllocatorModel.init(system.n_devices, system.n_antennas, cfg.depth, cfg.width,
                               np.random.default_rng([seed, 2]), norm, cfg.input_mode)


def trained_model(cfg, scheme, value, seed, cache_dir=None):
    """Train (or load from the checkpoint cache) the model of one sweep cell."""
    system, training = cfg.cell(scheme, value, seed)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{cfg.cell_key(scheme, value, seed)}.npz"
        if path.exists():
            return AllocatorModel.load(path), None
        path.parent.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, system, seed)
    tmp = None if path is None else path.with_suffix(".tmp")
    model, report = train(training, model, system, checkpoint_path=tmp)
    if path is not None:
        os.replace(tmp, path)
        report.checkpoint = str(path)
    return model, report


def held_out_set(cfg, system):
    return make_scenario_set(system, cfg.training.test_size, cfg.training.n_samples, "joint", cfg.test_seed)


def decompose_delays(model, scenario_set, params, gamma):
    """Mean robust delay and mean worst-case comm / comp delays of the quantile sample."""
    ev = evaluate(model, scenario_set, params, gamma)
    return dict(tgamma_s=ev.mean, comm_s=float(ev.comm.mean()), comp_s=float(ev.comp.mean()),
                n_realizations=len(ev.t_gamma))


def run_cell(cfg, scheme, value, seed, cache_dir=None):
    """Train + evaluate one (scheme, grid value, seed) cell; returns a CSV row dict."""
    system, training = cfg.cell(scheme, value, seed)
    row = dict(scheme=scheme, axis=cfg.sweep_axis, value=float(value), seed=int(seed),
               tgamma_s=float("nan"), comm_s=float("nan"), comp_s=float("nan"),
               n_realizations=0, diverged=0)
    try:
        model, _ = trained_model(cfg, scheme, value, seed, cache_dir)
    except TrainingDivergence as exc:
        log.warning("cell %s/%s/%s diverged: %s", scheme, value, seed, exc)
        row["diverged"] = 1
        return row
    tests = held_out_set(cfg, system)
    ev = evaluate(model, tests, system, training.gamma, keep_allocations=True)
    for alloc in ev.allocations:
        alloc.check_feasible(system.p_max_mw, system.cpu)
    row.update(tgamma_s=ev.mean, comm_s=float(ev.comm.mean()), comp_s=float(ev.comp.mean()),
               n_realizations=len(ev.t_gamma))
    return row


def format_row(row):
    return ",".join([row["scheme"], row["axis"], repr(row["value"]), str(row["seed"]),
                     repr(row["tgamma_s"]), repr(row["comm_s"]), repr(row["comp_s"]),
                     str(row["n_realizations"]), str(row["diverged"])])


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _cell_job(args):
    cfg, scheme, value, seed, cache_dir, cell_dir = args
    row = run_cell(cfg, scheme, value, seed, cache_dir)
    _atomic_write(Path(cell_dir) / f"{cfg.cell_key(scheme, value, seed)}.csv", format_row(row) + "\n")
    return row


def run_sweep(cfg, out_dir, cache_dir=None, filename="sweep.csv"):
    """Run every scheme x grid value x seed cell and write one CSV.

    Rows are ordered by grid value, then scheme, then seed, independent of
    the worker count.  Returns ``(csv_path, rows)``.
    """
    out_dir = Path(out_dir)
    cell_dir = out_dir / "cells"
    jobs = [(cfg, scheme, value, seed, cache_dir, cell_dir)
            for value in cfg.sweep_grid for scheme in cfg.schemes for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_cell_job, jobs))
    else:
        rows = [_cell_job(job) for job in jobs]
    text = CSV_HEADER + "\n" + "".join(format_row(r) + "\n" for r in rows)
    path = out_dir / filename
    _atomic_write(path, text)
    return path, rows


def read_sweep_csv(path):
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("value", "tgamma_s", "comm_s", "comp_s"):
            r[key] = float(r[key])
        for key in ("seed", "n_realizations", "diverged"):
            r[key] = int(r[key])
    return rows


# -- grid-search oracle on tiny instances -------------------------------------

def simplex_grid(dim, steps):
    """Interior points of the probability simplex with resolution ``1/steps``."""
    pts = [c for c in itertools.product(range(1, steps), repeat=dim - 1) if sum(c) < steps]
    pts = np.array(pts, dtype=float).reshape(-1, dim - 1)
    return np.concatenate([pts, steps - pts.sum(axis=1, keepdims=True)], axis=1) / steps


def _logits(power_share, cycle_share):
    return np.concatenate([np.log(power_share), np.log(cycle_share)], axis=-1)


def robust_delay_of_logits(x, realization, batch, params, gamma):
    """Empirical quantile delay of allocations ``x`` (shape ``(M, 2K+1)``) on one instance."""
    alloc = map_to_allocation(x, params.p_max_mw, params.cpu)
    t = worst_case_delays(alloc, realization.h_est[0], realization.v[0], realization.omega_est[0],
                          batch, params)
    return empirical_quantile(t, gamma).t_gamma


def oracle_allocation(realization, batch, params, gamma, steps=None):
    """Minimise the empirical robust delay of one instance over all allocations.

    A simplex grid over the power and cycle shares is refined with
    Nelder-Mead in logit space.  Returns ``(t_gamma, logits)``.
    """
    K = realization.h_est.shape[-2]
    if K > 2:
        raise ValueError("grid-search oracle is limited to K <= 2")
    steps = steps or (2000 if K == 1 else 48)
    p_grid = simplex_grid(K + 1, steps)
    c_grid = simplex_grid(K, steps) if K > 1 else np.ones((1, 1))
    best_t, best_x = np.inf, None
    for c in c_grid:
        x = _logits(p_grid, np.broadcast_to(c, (len(p_grid), K)))
        t = robust_delay_of_logits(x, realization, batch, params, gamma)
        i = int(np.argmin(t))
        if t[i] < best_t:
            best_t, best_x = float(t[i]), x[i]

    # logits are shift-invariant per head; optimise the free coordinates only
    free = np.r_[best_x[:K] - best_x[K], best_x[K + 2:] - best_x[K + 1]]

    def unpack(z):
        return np.r_[z[:K], 0.0, 0.0, z[K:]][None]

    def objective(z):
        return float(robust_delay_of_logits(unpack(z), realization, batch, params, gamma)[0])

    res = optimize.minimize(objective, free, method="Nelder-Mead",
                            options=dict(xatol=1e-6, fatol=1e-12, maxiter=4000))
    if res.fun < best_t:
        best_t, best_x = float(res.fun), unpack(res.x)[0]
    # the simplex search can stall on the kink of the max over devices
    t_eq, x_eq = best_symmetric_split(realization, batch, params, gamma)
    if t_eq < best_t:
        best_t, best_x = t_eq, x_eq
    return best_t, best_x


def symmetric_instance(params, scale=None):
    """K = 2 devices with orthogonal equal-norm channels and equal intensities."""
    L = params.n_antennas
    if params.n_devices != 2 or L < 2:
        raise ValueError("symmetric instance needs K = 2 and L >= 2")
    c = np.sqrt(1.0 - params.sigma_h_sq) if scale is None else scale
    h = np.zeros((2, L), dtype=complex)
    h[0, 0] = h[1, 1] = c
    omega = np.full(2, params.gamma_shape * params.gamma_scale)
    return NetworkRealization.from_estimates(h, omega, params.rzf_alpha)


@dataclass
class OracleReport:
    oracle_t: np.ndarray
    model_t: np.ndarray
    oracle_logits: np.ndarray

    @property
    def gaps(self):
        return self.model_t / self.oracle_t - 1.0

    @property
    def mean_gap(self):
        return float(np.mean(self.gaps))


def run_oracle_comparison(params, model, instances, n_samples, gamma, seed=0, mode="joint"):
    """Compare ``model`` with the grid-search optimum on fixed uncertainty batches.

    Parameters
    ----------
    params : SystemParams
        Tiny scenario (K <= 2, L <= 2 recommended).
    model : AllocatorModel
    instances : NetworkRealization
        Instances to compare on, one per batch entry.
    """
    oracle_t, model_t, xs = [], [], []
    K, L = params.n_devices, params.n_antennas
    for i in range(len(instances)):
        inst = instances[i]
        ub = sample_uncertainty_batch(n_samples, K, L, params.sigma_h_sq, params.sigma_w_sq, mode,
                                      np.random.default_rng([seed, i]))
        t_opt, x_opt = oracle_allocation(inst, ub, params, gamma)
        x_model = model.forward(model.features(inst))
        oracle_t.append(t_opt)
        model_t.append(float(robust_delay_of_logits(x_model, inst, ub, params, gamma)[0]))
        xs.append(x_opt)
    return OracleReport(np.array(oracle_t), np.array(model_t), np.array(xs))


def best_symmetric_split(realization, batch, params, gamma, steps=4000):
    """Best empirical robust delay among allocations that treat all devices equally.

    Returns ``(t_gamma, logits)``; only the transmit/compute power split is free.
    """
    K = realization.h_est.shape[-2]
    share = np.linspace(0.0, 1.0, steps + 1)[1:-1]
    x = np.zeros((len(share), 2 * K + 1))
    x[:, :K] = np.log(share / K)[:, None]
    x[:, K] = np.log1p(-share)
    t = robust_delay_of_logits(x, realization, batch, params, gamma)
    i = int(np.argmin(t))
    return float(t[i]), x[i]


def oracle_experiment(n_devices, seed=0, n_instances=10, n_samples=200, gamma=0.05, training=None,
                      depth=3, width=64, params=None):
    """Train a small allocator on a tiny scenario and compare it with the grid oracle.

    With one device the comparison runs on ``n_instances`` random
    realizations; with two it runs on the symmetric instance.  Returns
    ``(report, model, params, instances)``.
    """
    if n_devices not in (1, 2):
        raise ValueError("oracle experiments support one or two devices")
    params = params or SystemParams(n_antennas=n_devices, n_devices=n_devices)
    training = training or TrainingConfig(epochs=50, learning_rate=1e-3, n_samples=n_samples,
                                          gamma=gamma, seed=seed)
    tiny = ExperimentConfig(system=params, training=training, depth=depth, width=width,
                            schemes=("joint-ui",), seeds=(seed,))
    model, _ = train(training, build_model(tiny, params, seed), params)
    if n_devices == 1:
        instances = sample_realizations(params, n_instances, np.random.default_rng([seed, 3]))
    else:
        instances = symmetric_instance(params)
    report = run_oracle_comparison(params, model, instances, n_samples, gamma, seed=seed)
    return report, model, params, instances
