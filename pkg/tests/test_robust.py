import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustdelay.allocator import AllocatorModel, FeatureNormalizer, map_to_allocation
from robustdelay.robust import (UncertaintyBatch, empirical_quantile, quantile_rank,
                                robust_delay, robust_loss, robust_loss_value,
                                sample_uncertainty_batch, worst_case_delays)
from robustdelay.system import NetworkRealization, SystemParams, sample_realizations

PARAMS = SystemParams(n_antennas=4, n_devices=3)


def naive_quantile(values, gamma):
    ranked = sorted(range(len(values)), key=lambda i: (-values[i], i))
    n_star = ranked[math.ceil(gamma * len(values) - 1e-9) - 1]
    return values[n_star], n_star


@pytest.fixture
def setup(rng):
    norm = FeatureNormalizer.fit(PARAMS, rng, 2000)
    model = AllocatorModel.init(3, 4, 2, 16, rng, norm)
    real = sample_realizations(PARAMS, 4, rng)
    batch = sample_uncertainty_batch(100, 3, 4, PARAMS.sigma_h_sq, PARAMS.sigma_w_sq, "joint", rng,
                                     batch=(4,))
    return model, real, batch


class TestUncertaintyBatch:
    def test_none_mode_is_zero(self, rng):
        b = sample_uncertainty_batch(10, 3, 4, 0.05, 6400, "none", rng)
        assert b.h_err.shape == (10, 3, 4) and b.w_err.shape == (10, 3)
        assert not b.h_err.any() and not b.w_err.any()

    def test_joint_moments(self, rng):
        b = sample_uncertainty_batch(10 ** 5, 1, 1, 0.05, 6400, "joint", rng)
        assert abs(np.mean(np.abs(b.h_err) ** 2) - 0.05) < 0.002
        assert np.var(b.w_err) == pytest.approx(6400, rel=0.02)

    def test_single_source_modes(self, rng):
        comp = sample_uncertainty_batch(50, 2, 2, 0.05, 6400, "comp-only", rng)
        assert not comp.h_err.any() and np.all(comp.w_err != 0)
        comm = sample_uncertainty_batch(50, 2, 2, 0.05, 6400, "comm-only", rng)
        assert not comm.w_err.any() and np.all(comm.h_err != 0)

    def test_rejects_bad_input(self, rng):
        with pytest.raises(ValueError):
            sample_uncertainty_batch(10, 2, 2, 0.05, 6400, "both", rng)
        with pytest.raises(ValueError):
            sample_uncertainty_batch(0, 2, 2, 0.05, 6400, "joint", rng)


class TestWorstCaseDelays:
    def test_zero_batch_gives_nominal(self, rng):
        real = sample_realizations(PARAMS, 1, rng)
        alloc = map_to_allocation(rng.standard_normal(7), PARAMS.p_max_mw, PARAMS.cpu)
        b = sample_uncertainty_batch(20, 3, 4, 0.05, 6400, "none", rng)
        t = worst_case_delays(alloc, real.h_est[0], real.v[0], real.omega_est[0], b, PARAMS)
        assert t.shape == (20,)
        assert np.all(t == t[0])

    def test_single_device_scalar_arithmetic(self):
        p = SystemParams(n_antennas=1, n_devices=1)
        h_est = np.array([[0.6 + 0.8j]])
        real = NetworkRealization.from_estimates(h_est, [400.0], p.rzf_alpha)
        alloc = map_to_allocation(np.array([0.3, -0.2, 0.0]), p.p_max_mw, p.cpu)
        err_h, err_w = 0.1 - 0.2j, 35.0
        b = UncertaintyBatch(np.array([[[err_h]]]), np.array([[err_w]]), "joint")
        t = worst_case_delays(alloc, real.h_est[0], real.v[0], real.omega_est[0], b, p)
        v = (0.6 + 0.8j) / 1.0  # unit-norm estimate direction
        gain = abs(((0.6 + 0.8j) + err_h).conjugate() * v) ** 2
        rate = p.bandwidth_hz * math.log2(1 + gain * alloc.p_tx[0] / p.noise_power_mw)
        f = (alloc.p_co / 1e3 / p.tau) ** (1 / p.mu)
        expected = (400 + err_w) * p.d_in_bits / f + p.d_out_bits / rate
        assert t[0] == pytest.approx(expected, rel=1e-12)

    def test_monotone_in_intensity_error(self, rng):
        real = sample_realizations(PARAMS, 1, rng)
        alloc = map_to_allocation(rng.standard_normal(7), PARAMS.p_max_mw, PARAMS.cpu)
        b = sample_uncertainty_batch(30, 3, 4, 0.05, 6400, "joint", rng)
        t0 = worst_case_delays(alloc, real.h_est[0], real.v[0], real.omega_est[0], b, PARAMS)
        for n, k in [(0, 0), (5, 2), (29, 1)]:
            b.w_err[n, k] += 50.0
            t1 = worst_case_delays(alloc, real.h_est[0], real.v[0], real.omega_est[0], b, PARAMS)
            assert t1[n] >= t0[n]
            t0 = t1


class TestEmpiricalQuantile:
    def test_thousand_distinct(self):
        res = empirical_quantile(np.arange(1.0, 1001.0), 0.05)
        assert res.t_gamma == 951.0
        assert res.selected_sample == 950

    def test_constant(self):
        assert empirical_quantile(np.full(40, 3.5), 0.05).t_gamma == 3.5

    def test_second_largest(self, rng):
        t = rng.standard_normal(20)
        assert empirical_quantile(t, 0.1).t_gamma == naive_quantile(list(t), 0.1)[0] == np.sort(t)[-2]

    def test_rank_guard(self):
        assert quantile_rank(1000, 0.05) == 50
        assert quantile_rank(100, 0.07) == 7
        assert quantile_rank(30, 0.05) == 2
        assert quantile_rank(10, 0.05) == 1
        with pytest.raises(ValueError):
            quantile_rank(10, 0.0)
        with pytest.raises(ValueError):
            empirical_quantile(np.ones(5), 1.0)

    def test_ties_resolved_by_index(self):
        res = empirical_quantile(np.array([1.0, 5.0, 5.0, 5.0, 0.0]), 0.4)
        assert res.selected_sample == 2

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 10_000), gamma=st.floats(0.001, 0.999), seed=st.integers(0, 2**32 - 1),
           levels=st.integers(2, 50))
    def test_matches_full_sort_oracle(self, n, gamma, seed, levels):
        if gamma * n < 1:
            return
        t = np.random.default_rng(seed).integers(0, levels, n).astype(float)
        value, idx = naive_quantile(list(t), gamma)
        res = empirical_quantile(t, gamma)
        assert res.t_gamma == value and res.selected_sample == idx

    def test_batched(self, rng):
        t = rng.standard_normal((6, 200))
        res = empirical_quantile(t, 0.05)
        for b in range(6):
            assert (res.t_gamma[b], res.selected_sample[b]) == naive_quantile(list(t[b]), 0.05)


class TestRobustLoss:
    def test_nominal_mode(self, setup, rng):
        model, real, _ = setup
        b = sample_uncertainty_batch(1, 3, 4, 0.05, 6400, "none", rng, batch=(4,))
        loss, grads, _ = robust_loss(model, real, b, PARAMS, 0.5)
        alloc = map_to_allocation(model.forward(model.features(real)), PARAMS.p_max_mw, PARAMS.cpu)
        from robustdelay.compute import total_delays
        from robustdelay.channel import achievable_rates
        nominal = [total_delays(real.omega_est[i], PARAMS.d_in_bits, PARAMS.d_out_bits, alloc.f_co[i],
                                achievable_rates(real.h_est[i], real.v[i],
                                                 PARAMS.rate_inputs(alloc.p_tx[i]))).max()
                   for i in range(4)]
        assert loss == pytest.approx(np.mean(nominal), rel=1e-12)
        big = sample_uncertainty_batch(20, 3, 4, 0.05, 6400, "none", rng, batch=(4,))
        loss2, grads2, _ = robust_loss(model, real, big, PARAMS, 0.05)
        assert loss2 == pytest.approx(loss, rel=1e-12)
        for g1, g2 in zip(grads, grads2):
            np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-16)

    def test_directional_derivative(self, setup, rng):
        model, real, batch = setup
        loss, grads, _ = robust_loss(model, real, batch, PARAMS, 0.05)
        d = [rng.standard_normal(p.shape) for p in model.params]
        analytic = sum(float(np.sum(g * e)) for g, e in zip(grads, d))
        eps = 1e-6
        plus, minus = model.copy(), model.copy()
        for a, b, e in zip(plus.params, minus.params, d):
            a += eps * e
            b -= eps * e
        fd = (robust_loss_value(plus, real, batch, PARAMS, 0.05)
              - robust_loss_value(minus, real, batch, PARAMS, 0.05)) / (2 * eps)
        assert analytic == pytest.approx(fd, rel=1e-3)

    def test_permutation_invariance(self, setup, rng):
        model, real, batch = setup
        perm = rng.permutation(batch.n_samples)
        shuffled = UncertaintyBatch(batch.h_err[:, perm], batch.w_err[:, perm], batch.mode)
        assert (robust_loss_value(model, real, batch, PARAMS, 0.05)
                == robust_loss_value(model, real, shuffled, PARAMS, 0.05))

    def test_gradient_routing(self, setup):
        model, real, batch = setup
        one, b1 = real[0], batch[0]
        loss, _, res = robust_loss(model, one, b1, PARAMS, 0.05)
        n_star = int(res.selected_sample[0])
        t_gamma = float(res.t_gamma[0])

        zeroed = UncertaintyBatch(b1.h_err.copy(), b1.w_err.copy(), b1.mode)
        zeroed.h_err[0, n_star] = 0
        zeroed.w_err[0, n_star] = 0
        assert robust_loss_value(model, one, zeroed, PARAMS, 0.05) != loss

        # zeroing a sample that ranks below the quantile, and whose nominal
        # delay stays below it, leaves the loss untouched
        nominal = worst_case_delays(
            map_to_allocation(model.forward(model.features(one)), PARAMS.p_max_mw, PARAMS.cpu),
            one.h_est, one.v, one.omega_est,
            sample_uncertainty_batch(1, 3, 4, 0, 0, "none", np.random.default_rng(0), batch=(1,)),
            PARAMS)[0, 0]
        assert nominal < t_gamma
        below = np.flatnonzero(res.t_all[0] < t_gamma)
        for n in below[:10]:
            z = UncertaintyBatch(b1.h_err.copy(), b1.w_err.copy(), b1.mode)
            z.h_err[0, n] = 0
            z.w_err[0, n] = 0
            assert robust_loss_value(model, one, z, PARAMS, 0.05) == loss

    def test_coverage_on_fresh_samples(self, setup, rng):
        model, real, _ = setup
        one = real[0]
        n = 200
        alloc = map_to_allocation(model.forward(model.features(one)), PARAMS.p_max_mw, PARAMS.cpu)

        def draw(count, g):
            b = sample_uncertainty_batch(count, 3, 4, PARAMS.sigma_h_sq, PARAMS.sigma_w_sq, "joint", g,
                                         batch=(1,))
            return worst_case_delays(alloc, one.h_est, one.v, one.omega_est, b, PARAMS)[0]

        t_gamma = empirical_quantile(draw(n, rng), 0.05).t_gamma
        fresh = draw(200_000, rng)
        assert np.mean(fresh > t_gamma) <= 0.05 + 2 / math.sqrt(n)

    def test_robust_delay_components(self, setup):
        model, real, batch = setup
        alloc = map_to_allocation(model.forward(model.features(real)), PARAMS.p_max_mw, PARAMS.cpu)
        res, comm, comp = robust_delay(alloc, real, batch, PARAMS, 0.05)
        assert np.all(comm + comp >= res.t_gamma * (1 - 1e-12))
        assert np.all(np.maximum(comm, comp) <= res.t_gamma)
