"""Unsupervised training of the allocator on the robust delay objective."""

import contextlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .allocator import map_to_allocation
from .robust import (SCHEMES, UncertaintyBatch, robust_delay, robust_loss,
                     sample_uncertainty_batch)
from .system import sample_realizations

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainingConfig:
    epochs: int = 50
    minibatches_per_epoch: int = 10
    realizations_per_minibatch: int = 100
    n_samples: int = 200
    gamma: float = 0.05
    scheme: str = "joint-ui"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_size: int = 200
    test_size: int = 500
    deterministic: bool = True

    def __post_init__(self):
        for name in ("epochs", "minibatches_per_epoch", "realizations_per_minibatch", "n_samples",
                     "validation_size", "test_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {sorted(SCHEMES)}")
        if not 0 < self.gamma < 1 or self.gamma * self.n_samples < 1 - 1e-9:
            raise ValueError("need 0 < gamma < 1 and gamma * N >= 1")

    @property
    def mode(self):
        return SCHEMES[self.scheme]

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingReport:
    records: list = field(default_factory=list)  # dicts: epoch, train_loss_s, val_tgamma_s
    initial_val_tgamma_s: float = float("nan")
    best_epoch: int = 0
    best_val_tgamma_s: float = float("inf")
    checkpoint: str = None
    wall_time_s: float = 0.0

    def to_csv(self):
        lines = ["epoch,train_loss_s,val_tgamma_s"]
        lines += [f"{r['epoch']},{r['train_loss_s']!r},{r['val_tgamma_s']!r}" for r in self.records]
        return "\n".join(lines) + "\n"


class Adam:
    """Adaptive moment estimation over a list of arrays, updated in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class ScenarioSet:
    """Fixed realizations with reproducible per-realization uncertainty samples.

    The errors of realization ``i`` come from a generator seeded with
    ``(seed, i)`` so any chunking of the set sees the same samples.
    """

    realizations: object
    n_samples: int
    mode: str
    seed: int
    sigma_h_sq: float
    sigma_w_sq: float

    def __len__(self):
        return len(self.realizations)

    def uncertainty(self, start, stop):
        K, L = self.realizations.h_est.shape[-2:]
        parts = [sample_uncertainty_batch(self.n_samples, K, L, self.sigma_h_sq, self.sigma_w_sq,
                                          self.mode, np.random.default_rng([self.seed, i]))
                 for i in range(start, stop)]
        return UncertaintyBatch(np.stack([p.h_err for p in parts]), np.stack([p.w_err for p in parts]),
                                self.mode)

    def chunks(self, size=50):
        for start in range(0, len(self), size):
            stop = min(start + size, len(self))
            yield self.realizations[start:stop], self.uncertainty(start, stop)


def make_scenario_set(params, size, n_samples, mode, seed, sampler=None):
    """Held-out realizations drawn with ``seed`` plus their fixed error samples."""
    ss = np.random.SeedSequence(seed)
    real_ss, err_ss = ss.spawn(2)
    g = np.random.default_rng(real_ss)
    realizations = sample_realizations(params, size, g) if sampler is None else sampler(size, g)
    n = 1 if mode == "none" else n_samples
    return ScenarioSet(realizations, n, mode, int(err_ss.generate_state(1)[0]),
                       params.sigma_h_sq, params.sigma_w_sq)


@dataclass
class EvaluationResult:
    t_gamma: np.ndarray
    comm: np.ndarray
    comp: np.ndarray
    allocations: list = field(default_factory=list, repr=False)

    @property
    def mean(self):
        return float(np.mean(self.t_gamma))

    @property
    def std_error(self):
        return float(np.std(self.t_gamma, ddof=1) / np.sqrt(len(self.t_gamma))) if len(self.t_gamma) > 1 else 0.0


def evaluate(model, scenario_set, params, gamma, keep_allocations=False):
    """Robust delay statistics of ``model`` over a fixed scenario set.

    ``comm`` and ``comp`` hold, for the quantile-selected sample of each
    realization, the largest communication and largest computation delay
    across devices (possibly attained by different devices).
    """
    tg, comm, comp, allocs = [], [], [], []
    for real, ub in scenario_set.chunks():
        alloc = map_to_allocation(model.forward(model.features(real)), params.p_max_mw, params.cpu)
        res, c_comm, c_comp = robust_delay(alloc, real, ub, params, gamma)
        tg.append(res.t_gamma)
        comm.append(c_comm)
        comp.append(c_comp)
        if keep_allocations:
            allocs.append(alloc)
    return EvaluationResult(np.concatenate(tg), np.concatenate(comm), np.concatenate(comp), allocs)


def train(config, model, params, rng=None, sampler=None, checkpoint_path=None):
    """Train ``model`` in place and return ``(model, report)``.

    Every optimizer step draws ``realizations_per_minibatch`` fresh
    realizations (from ``sampler(n, rng)`` when given, else from ``params``),
    injects ``n_samples`` error samples according to the scheme, and descends
    the mean robust delay.  After each epoch the model is scored on a fixed
    validation set under the same scheme; the best-scoring parameters
    (including the untrained ones) are restored at the end.

    Raises
    ------
    TrainingDivergence
        If a loss or gradient becomes non-finite.
    """
    start = time.perf_counter()
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if rng is None:
        rng = np.random.default_rng(seeds[0])
    mode = config.mode
    n_inject = 1 if mode == "none" else config.n_samples
    K, L = model.n_devices, model.n_antennas
    if (K, L) != (params.n_devices, params.n_antennas):
        raise ValueError("model dimensions do not match the system parameters")

    val_seed = int(seeds[1].generate_state(1)[0])
    val_set = make_scenario_set(params, config.validation_size, config.n_samples, mode, val_seed, sampler)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    report = TrainingReport()

    ctx = threadpool_limits(limits=1) if config.deterministic else contextlib.nullcontext()
    with ctx:
        best = evaluate(model, val_set, params, config.gamma).mean
        report.initial_val_tgamma_s = best
        report.best_val_tgamma_s = best
        best_params = [p.copy() for p in model.params]
        step = 0
        for epoch in range(1, config.epochs + 1):
            losses = []
            for _ in range(config.minibatches_per_epoch):
                n = config.realizations_per_minibatch
                real = sample_realizations(params, n, rng) if sampler is None else sampler(n, rng)
                ub = sample_uncertainty_batch(n_inject, K, L, params.sigma_h_sq, params.sigma_w_sq, mode,
                                              rng, batch=(len(real),))
                loss, grads, _ = robust_loss(model, real, ub, params, config.gamma)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise TrainingDivergence(f"non-finite loss/gradient at step {step} (epoch {epoch}, "
                                             f"seed {config.seed}, scheme {config.scheme})")
                opt.step(model.params, grads)
                losses.append(loss)
                step += 1
            val = evaluate(model, val_set, params, config.gamma).mean
            report.records.append(dict(epoch=epoch, train_loss_s=float(np.mean(losses)), val_tgamma_s=val))
            log.debug("epoch %d train %.5f val %.5f", epoch, np.mean(losses), val)
            if val < report.best_val_tgamma_s:
                report.best_val_tgamma_s = val
                report.best_epoch = epoch
                best_params = [p.copy() for p in model.params]

    for p, b in zip(model.params, best_params):
        p[...] = b
    model.meta.update(scheme=config.scheme, best_epoch=report.best_epoch)
    if checkpoint_path is not None:
        model.save(checkpoint_path)
        report.checkpoint = str(checkpoint_path)
    report.wall_time_s = time.perf_counter() - start
    return model, report
