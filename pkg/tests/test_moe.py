import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molmoe import autodiff as ad
from molmoe.autodiff import Tensor
from molmoe.encoder import ConfigurationError
from molmoe.moe import (MoEConfig, expert_forward, importance_loss,
                        init_moe_params, predict, route_negative,
                        route_positive, total_loss)


def setup(k=3, d=8, t=2, seed=1):
    cfg = MoEConfig(num_experts=k, hidden_dim=d, num_tasks=t)
    return cfg, init_moe_params(cfg, np.random.default_rng(seed))


def vec(rng, d=8, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=d))


class TestExperts:
    def test_identity_weight_passes_through(self):
        cfg, params = setup(k=1, d=4, t=4)
        params["expert.pos.0.weight"] = Tensor(np.eye(4), requires_grad=True)
        h = Tensor([1.0, -2.0, 3.0, 0.5])
        with ad.no_grad():
            out = expert_forward(params, "pos", h, 1)
        assert np.array_equal(out[0].data, h.data)

    def test_zero_embedding_zero_logits(self):
        cfg, params = setup()
        with ad.no_grad():
            out = expert_forward(params, "neg", Tensor(np.zeros(8)), 3)
        for e in out:
            assert (e.data == 0.0).all()

    def test_distinct_experts_distinct_outputs(self, rng):
        cfg, params = setup()
        h = vec(rng)
        with ad.no_grad():
            out = expert_forward(params, "pos", h, 3)
            # frozen oracle: independent matrix products
            for k in range(3):
                expected = h.data @ params[f"expert.pos.{k}.weight"].data
                np.testing.assert_allclose(out[k].data, expected, atol=1e-15)
        assert not np.allclose(out[0].data, out[1].data)

    def test_dimension_mismatch_raises(self):
        cfg, params = setup(d=8)
        with pytest.raises(ConfigurationError):
            expert_forward(params, "pos", Tensor(np.zeros(5)), 3)


class TestRouting:
    def test_singleton_routes_to_one(self, rng):
        cfg, params = setup(k=1)
        with ad.no_grad():
            r = route_positive(vec(rng), params, cfg)
        assert r.data.tolist() == [1.0]

    def test_identical_rows_route_uniformly(self, rng):
        cfg, params = setup(k=4)
        params["router.pos.map"] = Tensor(
            np.tile(params["router.pos.map"].data[:1], (4, 1)),
            requires_grad=True)
        with ad.no_grad():
            r = route_positive(vec(rng), params, cfg)
        np.testing.assert_allclose(r.data, 0.25, atol=1e-12)

    def test_scalar_softmax_example(self):
        # logits [1, 0] at temperature 1: [e/(e+1), 1/(e+1)]
        out = ad.softmax(Tensor([1.0, 0.0]), axis=0).data
        e = np.e
        np.testing.assert_allclose(out, [e / (e + 1), 1 / (e + 1)], atol=1e-12)

    def test_joint_router_concatenates_projections(self, rng):
        cfg, params = setup(k=2)
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            r = route_negative(hp, hn, params, cfg)
            w = params["router.neg.proj.weight"].data
            b = params["router.neg.proj.bias"].data
            z = np.concatenate([hp.data @ w + b, hn.data @ w + b])
            logits = params["router.neg.map"].data @ z / cfg.temperature
            expected = np.exp(logits - logits.max())
            expected /= expected.sum()
        np.testing.assert_allclose(r.data, expected, atol=1e-12)

    def test_equal_motifs_and_tiled_map_uniform(self, rng):
        cfg, params = setup(k=3)
        params["router.neg.map"] = Tensor(
            np.tile(params["router.neg.map"].data[:1], (3, 1)),
            requires_grad=True)
        h = vec(rng)
        with ad.no_grad():
            r = route_negative(h, h, params, cfg)
        np.testing.assert_allclose(r.data, 1 / 3, atol=1e-12)

    def test_swapping_map_rows_permutes_scores(self, rng):
        cfg, params = setup(k=3)
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            base = route_negative(hp, hn, params, cfg).data
        m = params["router.neg.map"].data.copy()
        m[[0, 1]] = m[[1, 0]]
        params["router.neg.map"] = Tensor(m, requires_grad=True)
        with ad.no_grad():
            swapped = route_negative(hp, hn, params, cfg).data
        np.testing.assert_allclose(swapped, base[[1, 0, 2]], atol=1e-15)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 7))
    @settings(max_examples=60, deadline=None)
    def test_scores_are_distributions(self, seed, k):
        r = np.random.default_rng(seed)
        cfg = MoEConfig(num_experts=k, hidden_dim=6, num_tasks=1)
        params = init_moe_params(cfg, np.random.default_rng(seed))
        h = Tensor(r.normal(scale=2, size=6))
        with ad.no_grad():
            scores = route_positive(h, params, cfg).data
        assert (scores > 0).all()
        assert abs(scores.sum() - 1.0) < 1e-9

    def test_noise_only_during_training(self, rng):
        cfg, params = setup()
        h = vec(rng)
        with ad.no_grad():
            eval1 = route_positive(h, params, cfg).data
            eval2 = route_positive(h, params, cfg).data
            noisy1 = route_positive(h, params, cfg,
                                    np.random.default_rng(7)).data
            noisy2 = route_positive(h, params, cfg,
                                    np.random.default_rng(8)).data
        assert np.array_equal(eval1, eval2)
        assert not np.array_equal(noisy1, noisy2)
        assert abs(noisy1.sum() - 1.0) < 1e-9

    def test_noise_scale_is_inverse_expert_count(self):
        assert MoEConfig(num_experts=4, hidden_dim=4, num_tasks=1).noise_scale == 0.25


class TestPredict:
    def test_single_expert_passthrough(self, rng):
        cfg, params = setup(k=1)
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            pred = predict(hp, hn, params, cfg)
            e = expert_forward(params, "pos", hp, 1)
        np.testing.assert_array_equal(pred.o_pos.data, e[0].data)

    def test_zero_embeddings_yield_combiner_bias(self, rng):
        cfg, params = setup()
        z = Tensor(np.zeros(8))
        with ad.no_grad():
            pred = predict(z, z, params, cfg)
        np.testing.assert_array_equal(pred.y_logits.data,
                                      params["combiner.bias"].data)

    def test_combined_logits_recompute(self, rng):
        cfg, params = setup(k=4, t=3)
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            pred = predict(hp, hn, params, cfg)
            e_pos = expert_forward(params, "pos", hp, 4)
        recomputed = sum(pred.r_pos.data[k] * e_pos[k].data for k in range(4))
        assert np.abs(recomputed - pred.o_pos.data).max() < 1e-12

    def test_fresh_combiner_averages_streams(self, rng):
        cfg, params = setup()
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            pred = predict(hp, hn, params, cfg)
        np.testing.assert_allclose(
            pred.y_logits.data, 0.5 * (pred.o_pos.data + pred.o_neg.data),
            atol=1e-12)

    def test_evaluation_is_deterministic(self, rng):
        cfg, params = setup()
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            a = predict(hp, hn, params, cfg).y_logits.data
            b = predict(hp, hn, params, cfg).y_logits.data
        assert np.array_equal(a, b)

    def test_expert_combination_scales_linearly_with_frozen_routing(self, rng):
        cfg, params = setup(k=1)  # K=1 pins routing to [1.0]
        hp, hn = vec(rng), vec(rng)
        with ad.no_grad():
            base = predict(hp, hn, params, cfg).o_pos.data
            scaled = predict(Tensor(3.0 * hp.data), hn, params, cfg).o_pos.data
        np.testing.assert_allclose(scaled, 3.0 * base, atol=1e-12)


class TestImportanceLoss:
    def test_equal_importance_zero_value_zero_gradient(self):
        w = Tensor([2.0, 2.0, 2.0], requires_grad=True)
        scores = [ad.mul(w, Tensor(0.5))]
        loss = importance_loss(scores, scores, threshold=0.1)
        assert loss.item() == 0.0
        probe = ad.add(loss, ad.sum(w))
        ad.backward(probe)
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_three_one_importance_gives_quarter(self):
        li = importance_loss([Tensor([3.0, 1.0])], [Tensor([2.0, 2.0])], 0.1)
        assert li.item() == 0.25

    def test_single_expert_always_zero(self):
        li = importance_loss([Tensor([5.0])], [Tensor([4.0])], 0.1)
        assert li.item() == 0.0

    def test_gradient_flows_above_threshold(self):
        w = Tensor([3.0, 1.0], requires_grad=True)
        li = importance_loss([ad.mul(w, Tensor(1.0))],
                             [ad.mul(w, Tensor(1.0))], 0.1)
        ad.backward(li)
        assert np.abs(w.grad).max() > 0

    def test_below_threshold_blocks_gradient_keeps_value(self):
        w = Tensor([2.0, 2.1], requires_grad=True)  # cv^2 well below 0.1
        li = importance_loss([ad.mul(w, Tensor(1.0))],
                             [ad.mul(w, Tensor(1.0))], 0.1)
        assert 0 < li.item() < 0.1
        probe = ad.add(li, ad.sum(w))
        ad.backward(probe)
        np.testing.assert_array_equal(w.grad, [1.0, 1.0])

    def test_value_always_finite_nonnegative(self, rng):
        for _ in range(50):
            k = int(rng.integers(1, 6))
            scores = [Tensor(rng.dirichlet(np.ones(k)))
                      for _ in range(int(rng.integers(1, 8)))]
            value = importance_loss(scores, scores, 0.1).item()
            assert np.isfinite(value) and value >= 0.0


class TestTotalLoss:
    def test_beta_zero(self):
        lt = total_loss(Tensor(0.7), Tensor(0.25), beta=0.0)
        assert lt.item() == 0.7

    def test_arithmetic(self):
        lt = total_loss(Tensor(0.7), Tensor(0.25), beta=1.0)
        assert lt.item() == pytest.approx(0.95, abs=1e-12)

    def test_beta_scaled_gradient_through_router(self, rng):
        # finite difference on one router weight, through the full head
        cfg, params = setup(k=2, d=6, t=2, seed=5)
        hp = Tensor(rng.normal(size=6))
        hn = Tensor(rng.normal(size=6))
        beta = 0.7

        def forward():
            pred = predict(hp, hn, params, cfg)
            l_task = ad.mean(ad.mul(pred.y_logits, pred.y_logits))
            l_imp = importance_loss([pred.r_pos], [pred.r_neg], threshold=0.0)
            return total_loss(l_task, l_imp, beta)

        loss = forward()
        ad.backward(loss)
        w = params["router.pos.map"]
        analytic = w.grad.copy()
        step, i, j = 1e-5, 0, 2
        w.data[i, j] += step
        with ad.no_grad():
            up = forward().item()
        w.data[i, j] -= 2 * step
        with ad.no_grad():
            down = forward().item()
        w.data[i, j] += step
        numeric = (up - down) / (2 * step)
        assert abs(analytic[i, j] - numeric) / max(1.0, abs(numeric)) < 1e-4
        assert np.abs(analytic).max() > 0
