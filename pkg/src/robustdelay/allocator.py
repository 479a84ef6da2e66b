"""Feed-forward allocator network and its feasible-by-construction output heads.

The network maps estimated channel state to ``2K + 1`` logits.  The first
``K + 1`` logits split the joint power budget between the K transmit powers and
the computing power; the last K logits split the computing cycles that the
computing power (and the CPU capacity) allows.

Gradients are hand-derived and batched: every ``*_backward`` function takes the
upstream gradient of its forward counterpart and returns the gradient with
respect to that function's inputs.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import effective_gains
from .compute import cycles_from_compute_power

CHECKPOINT_VERSION = 1
INPUT_MODES = ("effective", "raw")


@dataclass
class ResourceAllocation:
    """Transmit powers (mW), computing power (mW) and cycle shares (cycles/s).

    Arrays carry any leading batch shape: ``p_tx`` and ``f_co`` are
    ``(..., K)``, ``p_co``, ``f_pow`` and ``f_limit`` are ``(...)``.
    """

    p_tx: np.ndarray
    p_co: np.ndarray
    f_co: np.ndarray
    f_pow: np.ndarray = None
    f_limit: np.ndarray = None

    def check_feasible(self, p_max_mw, cpu, rtol=1e-9):
        """Raise ``AssertionError`` unless the power and capacity constraints hold."""
        total_power = self.p_tx.sum(axis=-1) + self.p_co
        if not np.allclose(total_power, p_max_mw, rtol=rtol, atol=0):
            raise AssertionError("joint power budget is not met with equality")
        limit = np.minimum(cpu.f_max, cycles_from_compute_power(self.p_co, cpu))
        if not np.allclose(self.f_co.sum(axis=-1), limit, rtol=rtol, atol=0):
            raise AssertionError("cycle shares do not add up to the available cycles")
        if np.any(self.f_co.sum(axis=-1) > cpu.f_max * (1 + rtol)):
            raise AssertionError("CPU capacity exceeded")


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(s, grad_s):
    return s * (grad_s - np.sum(s * grad_s, axis=-1, keepdims=True))


def map_to_allocation(x, p_max_mw, cpu):
    """Turn raw network outputs into a feasible :class:`ResourceAllocation`.

    Parameters
    ----------
    x : (..., 2K+1) array
        Network output logits.
    p_max_mw : float
        Joint power budget shared by transmission and computing.
    cpu : CpuModel
    """
    x = np.asarray(x, dtype=float)
    K = (x.shape[-1] - 1) // 2
    power = p_max_mw * softmax(x[..., :K + 1])
    p_tx, p_co = power[..., :K], power[..., K]
    f_pow = cycles_from_compute_power(p_co, cpu)
    f_limit = np.minimum(cpu.f_max, f_pow)
    f_co = f_limit[..., None] * softmax(x[..., K + 1:])
    return ResourceAllocation(p_tx=p_tx, p_co=p_co, f_co=f_co, f_pow=f_pow, f_limit=f_limit)


def map_to_allocation_backward(x, alloc, grad_p_tx, grad_p_co, grad_f_co, p_max_mw, cpu):
    """Gradient of a scalar w.r.t. the logits given its allocation gradients.

    At ``f_pow == f_max`` the power-limited branch is differentiated.
    """
    K = alloc.p_tx.shape[-1]
    s1 = alloc_power_share(alloc, p_max_mw)
    s2 = alloc.f_co / alloc.f_limit[..., None]

    grad_limit = np.sum(grad_f_co * s2, axis=-1)
    grad_x2 = softmax_backward(s2, grad_f_co * alloc.f_limit[..., None])

    power_bound = alloc.f_pow <= cpu.f_max
    dlimit_dpco = np.where(power_bound, alloc.f_pow / (cpu.mu * alloc.p_co), 0.0)
    grad_power = np.concatenate([grad_p_tx, (grad_p_co + grad_limit * dlimit_dpco)[..., None]], axis=-1)
    grad_x1 = softmax_backward(s1, p_max_mw * grad_power)
    grad_x = np.concatenate([grad_x1, grad_x2], axis=-1)
    assert grad_x.shape[-1] == 2 * K + 1
    return grad_x


def alloc_power_share(alloc, p_max_mw):
    return np.concatenate([alloc.p_tx, alloc.p_co[..., None]], axis=-1) / p_max_mw


# -- input features ---------------------------------------------------------

def raw_features(h_est, v, omega_est, input_mode="effective"):
    """Unnormalised network input.

    ``effective`` layout: ``Re(h_i^H v_j)`` for all (i, j) row-major, then the
    matching imaginary parts, then the K intensity estimates (``2K^2 + K``
    entries).  ``raw`` layout: real and imaginary parts of ``h_est`` followed by
    the intensities (``2LK + K`` entries).
    """
    h_est = np.asarray(h_est)
    batch = h_est.shape[:-2]
    if input_mode == "effective":
        g = effective_gains(h_est, v).reshape(batch + (-1,))
    elif input_mode == "raw":
        g = h_est.reshape(batch + (-1,))
    else:
        raise ValueError(f"unknown input mode {input_mode!r}")
    return np.concatenate([g.real, g.imag, np.asarray(omega_est, dtype=float)], axis=-1)


def input_dim(n_devices, n_antennas, input_mode="effective"):
    if input_mode == "effective":
        return 2 * n_devices ** 2 + n_devices
    return 2 * n_antennas * n_devices + n_devices


@dataclass
class FeatureNormalizer:
    shift: np.ndarray
    scale: np.ndarray

    def __call__(self, features):
        return (features - self.shift) / self.scale

    @classmethod
    def fit(cls, params, rng, n_draws=10_000, input_mode="effective"):
        """Standardise channel features over ``n_draws`` pilot draws of ``params``.

        Intensity features are only divided by the Gamma mean.  Features with
        (numerically) zero spread, e.g. the imaginary parts of the RZF diagonal,
        keep unit scale.
        """
        from .system import sample_realizations

        real = sample_realizations(params, n_draws, rng)
        feats = raw_features(real.h_est, real.v, real.omega_est, input_mode)
        K = params.n_devices
        shift = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale = np.where(scale > 1e-8, scale, 1.0)
        shift[-K:] = 0.0
        scale[-K:] = params.gamma_shape * params.gamma_scale
        return cls(shift=shift, scale=scale)

    @classmethod
    def identity(cls, dim):
        return cls(shift=np.zeros(dim), scale=np.ones(dim))


def effective_channel_features(h_est, v, omega_est, normalizer=None, input_mode="effective"):
    """Network input for a realization; normalised when ``normalizer`` is given."""
    if hasattr(v, "v"):
        v = v.v
    feats = raw_features(h_est, v, omega_est, input_mode)
    return feats if normalizer is None else normalizer(feats)


# -- network ---------------------------------------------------------------

@dataclass
class AllocatorModel:
    """ReLU MLP with a linear output layer of width ``2K + 1``."""

    n_devices: int
    n_antennas: int
    weights: list
    biases: list
    normalizer: FeatureNormalizer
    input_mode: str = "effective"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.weights[-1].shape[1] != 2 * self.n_devices + 1:
            raise ValueError("output layer must have 2K+1 units")
        if self.weights[0].shape[0] != input_dim(self.n_devices, self.n_antennas, self.input_mode):
            raise ValueError("input layer width does not match K, L and input mode")

    @classmethod
    def init(cls, n_devices, n_antennas, depth, width, rng, normalizer=None, input_mode="effective"):
        """He-initialised hidden layers, zero biases.

        The linear output layer is drawn at a tenth of the fan-in scale so an
        untrained model starts close to the uniform allocation.
        """
        d_in = input_dim(n_devices, n_antennas, input_mode)
        sizes = [d_in] + [width] * depth + [2 * n_devices + 1]
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 2.0 if i < depth else 0.01
            weights.append(rng.standard_normal((a, b)) * np.sqrt(gain / a))
            biases.append(np.zeros(b))
        if normalizer is None:
            normalizer = FeatureNormalizer.identity(d_in)
        return cls(n_devices, n_antennas, weights, biases, normalizer, input_mode)

    @property
    def depth(self):
        return len(self.weights) - 1

    @property
    def params(self):
        """Trainable arrays in layer order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return AllocatorModel(self.n_devices, self.n_antennas,
                              [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              FeatureNormalizer(self.normalizer.shift.copy(), self.normalizer.scale.copy()),
                              self.input_mode, dict(self.meta))

    def features(self, realization):
        return effective_channel_features(realization.h_est, realization.v, realization.omega_est,
                                          self.normalizer, self.input_mode)

    def forward(self, features, return_cache=False):
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.weights[0].shape[0]:
            raise ValueError(f"expected {self.weights[0].shape[0]} input features, "
                             f"got {features.shape[-1]}")
        acts = [features]
        h = features
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return (out, acts) if return_cache else out

    def backward(self, acts, grad_out):
        """Parameter gradients (layer order, like :attr:`params`) from ``d loss / d out``."""
        grads = []
        g = np.asarray(grad_out)
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            a2 = a.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            grads.append(g2.sum(axis=0))
            grads.append(a2.T @ g2)
            if i > 0:
                g = (g @ self.weights[i].T) * (a > 0)
        return grads[::-1]

    def save(self, path):
        meta = dict(version=CHECKPOINT_VERSION, n_devices=self.n_devices, n_antennas=self.n_antennas,
                    input_mode=self.input_mode, depth=self.depth,
                    widths=[int(w.shape[1]) for w in self.weights], meta=self.meta)
        arrays = {"norm_shift": self.normalizer.shift, "norm_scale": self.normalizer.scale}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = b
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["header"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            n_layers = meta["depth"] + 1
            weights = [data[f"W{i}"].copy() for i in range(n_layers)]
            biases = [data[f"b{i}"].copy() for i in range(n_layers)]
            norm = FeatureNormalizer(data["norm_shift"].copy(), data["norm_scale"].copy())
        return cls(meta["n_devices"], meta["n_antennas"], weights, biases, norm,
                   meta["input_mode"], meta.get("meta", {}))


def forward(model, features):
    return model.forward(features)


def allocate(model, h_est, v, omega_est, p_max_mw, cpu):
    """Allocation produced by ``model`` for the given estimated state."""
    x = model.forward(effective_channel_features(h_est, v, omega_est, model.normalizer,
                                                 model.input_mode))
    return map_to_allocation(x, p_max_mw, cpu)
