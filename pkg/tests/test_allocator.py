import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustdelay.allocator import (AllocatorModel, FeatureNormalizer, allocate,
                                   effective_channel_features, map_to_allocation,
                                   map_to_allocation_backward)
from robustdelay.channel import rzf_beamformers
from robustdelay.compute import CpuModel
from robustdelay.system import SystemParams, dbm_to_mw, sample_realizations

CPU = CpuModel()


def naive_mlp(model, x):
    h = list(x)
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for a in range(w.shape[0]):
                acc += h[a] * w[a, j]
            out.append(acc if i == n_layers - 1 else max(acc, 0.0))
        h = out
    return np.array(h)


def small_model(rng, K=2, L=3, depth=2, width=8):
    return AllocatorModel.init(K, L, depth, width, rng)


class TestFeatures:
    def test_layout_identity_channels(self):
        h = np.eye(2, dtype=complex)
        v = rzf_beamformers(h, 0.2).v
        np.testing.assert_allclose(v, np.eye(2), atol=1e-15)
        feats = effective_channel_features(h, v, np.array([300.0, 500.0]))
        assert feats.shape == (10,)
        np.testing.assert_allclose(feats, [1, 0, 0, 1, 0, 0, 0, 0, 300, 500], atol=1e-15)

    def test_zero_channels(self):
        norm = FeatureNormalizer(shift=np.arange(10.0), scale=np.full(10, 2.0))
        feats = effective_channel_features(np.zeros((2, 2), complex), np.zeros((2, 2), complex),
                                           np.ones(2), normalizer=norm)
        np.testing.assert_allclose(feats[:8], (0 - np.arange(8.0)) / 2.0)

    def test_matches_scalar_inner_products(self, rng):
        K, L = 3, 5
        h = rng.standard_normal((K, L)) + 1j * rng.standard_normal((K, L))
        v = rzf_beamformers(h, 0.2).v
        feats = effective_channel_features(h, v, np.ones(K))
        for i in range(K):
            for j in range(K):
                inner = sum(h[i, l].conjugate() * v[l, j] for l in range(L))
                assert abs(feats[i * K + j] - inner.real) < 1e-12
                assert abs(feats[K * K + i * K + j] - inner.imag) < 1e-12

    def test_raw_mode(self, rng):
        h = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        feats = effective_channel_features(h, rzf_beamformers(h, 0.2), np.ones(2), input_mode="raw")
        assert feats.shape == (2 * 3 * 2 + 2,)
        np.testing.assert_array_equal(feats[:6], h.real.ravel())

    def test_normalizer_fit(self, rng):
        params = SystemParams(n_antennas=3, n_devices=2)
        norm = FeatureNormalizer.fit(params, rng, 2000)
        assert norm.shift.shape == (10,)
        np.testing.assert_array_equal(norm.scale[-2:], 400.0)
        assert np.all(norm.scale > 0)


class TestForward:
    def test_zero_parameters(self, rng):
        m = small_model(rng)
        for w, b in zip(m.weights, m.biases):
            w[...] = 0
            b[...] = 0
        np.testing.assert_array_equal(m.forward(rng.standard_normal(10)), 0)

    def test_hand_computed(self):
        w0 = np.zeros((10, 2))
        w0[0, 0], w0[1, 1] = 1.0, 1.0
        w1 = np.zeros((2, 5))
        w1[0, 0], w1[1, 0] = 2.0, 3.0
        m = AllocatorModel(2, 2, [w0, w1], [np.array([0.0, -1.0]), np.ones(5)],
                           FeatureNormalizer.identity(10))
        x = np.zeros(10)
        x[0], x[1] = 1.5, 0.5  # second unit: relu(0.5 - 1) = 0
        np.testing.assert_allclose(m.forward(x), [4.0, 1, 1, 1, 1])

    def test_matches_naive_loop(self, rng):
        m = AllocatorModel.init(3, 4, 3, 12, rng)
        for b in m.biases:
            b[...] = rng.standard_normal(b.shape)
        x = rng.standard_normal(2 * 9 + 3)
        np.testing.assert_allclose(m.forward(x), naive_mlp(m, x), rtol=1e-10)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            small_model(rng).forward(np.ones(7))

    def test_output_width(self, rng):
        assert small_model(rng, K=5, L=6).forward(np.ones(2 * 25 + 5)).shape == (11,)


class TestMapping:
    def test_uniform_logits(self):
        a = map_to_allocation(np.zeros(5), 300.0, CPU)
        np.testing.assert_allclose(a.p_tx, [100, 100], rtol=1e-15)
        assert a.p_co == pytest.approx(100.0)
        limit = min(CPU.f_max, (0.1 / 1e-28) ** (1 / 3))
        np.testing.assert_allclose(a.f_co, [limit / 2, limit / 2], rtol=1e-12)

    def test_saturation_limit(self):
        x = np.zeros(5)
        x[2] = 60.0
        a = map_to_allocation(x, 300.0, CPU)
        assert a.p_co == pytest.approx(300.0, rel=1e-12)
        assert np.all(a.p_tx < 1e-20)
        assert a.f_pow == pytest.approx((0.3 / 1e-28) ** (1 / 3), rel=1e-12)

    def test_full_size_budget_split(self):
        p_max = float(dbm_to_mw(38.0))
        assert p_max == pytest.approx(6309.6, rel=1e-5)
        a = map_to_allocation(np.zeros(13), p_max, CPU)
        assert a.p_co == pytest.approx(901.37, rel=1e-4)
        # (0.90137 W / 1e-28)^(1/3)
        assert a.f_pow == pytest.approx(2.0811e9, rel=1e-4)
        assert a.f_limit == a.f_pow < CPU.f_max

    def test_capacity_branch(self):
        x = np.zeros(5)
        x[2] = 10.0
        a = map_to_allocation(x, 2e4, CPU)
        assert a.f_pow > CPU.f_max
        assert a.f_co.sum() == pytest.approx(CPU.f_max, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(K=st.integers(1, 6), seed=st.integers(0, 2**32 - 1),
           spread=st.floats(0.0, 30.0), p_max=st.floats(1.0, 1e5))
    def test_feasible_by_construction(self, K, seed, spread, p_max):
        x = np.random.default_rng(seed).standard_normal((4, 2 * K + 1)) * spread
        a = map_to_allocation(x, p_max, CPU)
        a.check_feasible(p_max, CPU)
        assert np.all(a.p_tx > 0) or spread > 10

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(-50, 50))
    def test_translation_invariance(self, seed, c):
        x = np.random.default_rng(seed).standard_normal(7)
        y = x.copy()
        y[:4] += c
        a, b = map_to_allocation(x, 500.0, CPU), map_to_allocation(y, 500.0, CPU)
        np.testing.assert_allclose(a.p_tx, b.p_tx, rtol=1e-12)
        np.testing.assert_allclose(a.f_co, b.f_co, rtol=1e-12)

    @pytest.mark.parametrize("p_max", [300.0, 2e4])
    def test_backward_matches_central_differences(self, rng, p_max):
        K = 3
        x = rng.standard_normal(2 * K + 1)
        wp, wc, wf = rng.standard_normal(K), rng.standard_normal(), rng.standard_normal(K) / 1e9

        def scalar(z):
            a = map_to_allocation(z, p_max, CPU)
            return float(wp @ a.p_tx + wc * a.p_co + wf @ a.f_co)

        a = map_to_allocation(x, p_max, CPU)
        grad = map_to_allocation_backward(x, a, wp, wc, wf, p_max, CPU)
        for i in range(2 * K + 1):
            e = np.zeros_like(x)
            e[i] = 1e-6
            fd = (scalar(x + e) - scalar(x - e)) / 2e-6
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestModel:
    def test_backward_matches_central_differences(self, rng):
        m = small_model(rng)
        feats = rng.standard_normal((5, 10))
        upstream = rng.standard_normal((5, 5))
        out, acts = m.forward(feats, return_cache=True)
        grads = m.backward(acts, upstream)
        for p, g in zip(m.params, grads):
            for idx in list(np.ndindex(p.shape))[:6]:
                old = p[idx]
                p[idx] = old + 1e-6
                up = float(np.sum(m.forward(feats) * upstream))
                p[idx] = old - 1e-6
                down = float(np.sum(m.forward(feats) * upstream))
                p[idx] = old
                assert g[idx] == pytest.approx((up - down) / 2e-6, rel=1e-5, abs=1e-8)

    def test_checkpoint_round_trip(self, rng, tmp_path):
        params = SystemParams(n_antennas=3, n_devices=2)
        m = AllocatorModel.init(2, 3, 2, 8, rng, FeatureNormalizer.fit(params, rng, 500))
        m.meta["scheme"] = "joint-ui"
        path = tmp_path / "m.npz"
        m.save(path)
        m2 = AllocatorModel.load(path)
        real = sample_realizations(params, 4, rng)
        np.testing.assert_array_equal(m.forward(m.features(real)), m2.forward(m2.features(real)))
        assert m2.meta == {"scheme": "joint-ui"}

    def test_checkpoint_version_checked(self, rng, tmp_path):
        import json
        m = small_model(rng)
        path = tmp_path / "m.npz"
        m.save(path)
        with np.load(path) as data:
            arrays = dict(data)
        header = json.loads(str(arrays["header"]))
        header["version"] = 99
        arrays["header"] = np.array(json.dumps(header))
        np.savez(path, **arrays)
        with pytest.raises(ValueError, match="version"):
            AllocatorModel.load(path)

    def test_allocate_composition(self, rng):
        params = SystemParams(n_antennas=3, n_devices=2)
        m = small_model(rng)
        real = sample_realizations(params, 3, rng)
        a = allocate(m, real.h_est, real.v, real.omega_est, params.p_max_mw, params.cpu)
        b = map_to_allocation(m.forward(m.features(real)), params.p_max_mw, params.cpu)
        np.testing.assert_array_equal(a.f_co, b.f_co)
        a.check_feasible(params.p_max_mw, params.cpu)

    def test_rejects_wrong_dimensions(self, rng):
        m = small_model(rng)
        with pytest.raises(ValueError):
            AllocatorModel(3, 3, m.weights, m.biases, m.normalizer)
