import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from upwelling import qnet
from upwelling.qnet import (
    Adam,
    NetworkLayout,
    backward,
    forward,
    huber_loss,
    init_network,
    q_values,
    quantile_huber_loss,
    tau_midpoints,
    value_stream,
    wasserstein_1,
)

SMALL = NetworkLayout(hidden=(16, 16), n_actions=4, n_quantiles=8)


def _params(layout=SMALL, seed=0, bias_scale=0.1):
    rng = np.random.default_rng(seed)
    p = init_network(layout, rng)
    for k in p:
        if k.startswith("b"):
            p[k] = rng.normal(0, bias_scale, p[k].shape)
    return p


class TestInit:
    def test_deterministic(self):
        a, b = init_network(SMALL, 3), init_network(SMALL, 3)
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_biases_zero_and_bounded_weights(self):
        p = init_network(NetworkLayout(), 1)
        for k, v in p.items():
            if k.startswith("b"):
                assert not v.any()
            else:
                assert np.abs(v).max() <= 1 / np.sqrt(v.shape[0])

    def test_shapes(self):
        p = init_network(NetworkLayout(), 0)
        assert p["W0"].shape == (6, 64) and p["Wv"].shape == (64, 200) and p["Wa"].shape == (64, 17 * 200)
        flat = init_network(NetworkLayout(dueling=False), 0)
        assert set(flat) == {"W0", "b0", "W1", "b1", "Wq", "bq"}

    def test_invalid_layout(self):
        with pytest.raises(ValueError):
            NetworkLayout(n_quantiles=0)


class TestForward:
    def test_zero_advantage(self):
        p = _params()
        p["Wa"][:] = 0
        p["ba"][:] = 0
        x = np.random.default_rng(1).normal(size=6)
        theta = forward(p, x, SMALL)
        v = value_stream(p, x, SMALL)[0]
        assert np.allclose(theta, v[None, :], rtol=0, atol=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_dueling_identity(self, seed):
        p = _params(seed=seed)
        x = np.random.default_rng(seed).normal(size=(5, 6))
        theta = forward(p, x, SMALL)
        v = value_stream(p, x, SMALL)
        assert np.abs((theta - v[:, None, :]).mean(axis=1)).max() <= 1e-9

    def test_dead_input(self):
        p = _params()
        p["W0"][2] = 0
        x = np.ones(6)
        y = x.copy()
        y[2] = 123.0
        assert np.array_equal(forward(p, x, SMALL), forward(p, y, SMALL))

    def test_advantage_shift_invariance(self):
        p = _params()
        x = np.random.default_rng(2).normal(size=(4, 6))
        before = q_values(forward(p, x, SMALL))
        p["ba"] += 3.7
        after = q_values(forward(p, x, SMALL))
        assert np.allclose(before, after, atol=1e-12)
        assert np.array_equal(before.argmax(1), after.argmax(1))

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            forward(_params(), np.array([0, 0, np.nan, 0, 0, 0.0]), SMALL)

    def test_batch_matches_single(self):
        p = _params()
        x = np.random.default_rng(3).normal(size=(3, 6))
        batch = forward(p, x, SMALL)
        for k in range(3):
            assert np.allclose(batch[k], forward(p, x[k], SMALL), atol=1e-15)


class TestQuantiles:
    def test_q_values(self):
        assert q_values(np.array([[0.0, 2.0]]))[0] == 1.0
        assert q_values(np.full((3, 5), 4.5)).tolist() == [4.5] * 3
        assert q_values(np.array([[7.0], [2.0]])).tolist() == [7.0, 2.0]

    def test_tau(self):
        assert tau_midpoints(4).tolist() == [0.125, 0.375, 0.625, 0.875]
        assert tau_midpoints(1).tolist() == [0.5]
        for n in (3, 8, 200):
            t = tau_midpoints(n)
            assert t.sum() == pytest.approx(n / 2) and np.all(np.diff(t) > 0)
            assert np.allclose(t + t[::-1], 1.0)


class TestLoss:
    def test_zero_residual(self):
        loss, g = quantile_huber_loss(np.array([0.3]), np.array([0.3]), np.array([0.5]))
        assert loss == 0.0 and g[0] == 0.0

    def test_quadratic_branch(self):
        loss, _ = quantile_huber_loss(np.array([0.0]), np.array([0.5]), np.array([0.5]))
        assert loss == pytest.approx(0.0625, abs=1e-15)

    def test_linear_branch(self):
        loss, _ = quantile_huber_loss(np.array([2.0]), np.array([0.0]), np.array([0.25]))
        assert loss == pytest.approx(1.125, abs=1e-15)

    def test_reduction_against_direct_sum(self):
        rng = np.random.default_rng(4)
        th, tg = rng.normal(size=(3, 5)), rng.normal(size=(3, 7))
        tau = tau_midpoints(5)
        direct = 0.0
        for b in range(3):
            for i in range(5):
                for j in range(7):
                    u = tg[b, j] - th[b, i]
                    hub = 0.5 * u * u if abs(u) <= 1 else abs(u) - 0.5
                    direct += abs(tau[i] - (u < 0)) * hub
        direct /= 3 * 7
        assert quantile_huber_loss(th, tg)[0] == pytest.approx(direct, rel=1e-12)

    def test_gradient_matches_differences(self):
        rng = np.random.default_rng(5)
        th, tg = rng.normal(size=(2, 6)), rng.normal(size=(2, 4))
        _, g = quantile_huber_loss(th, tg)
        h = 1e-6
        for idx in np.ndindex(th.shape):
            up, down = th.copy(), th.copy()
            up[idx] += h
            down[idx] -= h
            num = (quantile_huber_loss(up, tg)[0] - quantile_huber_loss(down, tg)[0]) / (2 * h)
            assert g[idx] == pytest.approx(num, abs=1e-7)

    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8),
           st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8))
    def test_non_negative_and_zero_iff_equal(self, th, tg):
        loss, _ = quantile_huber_loss(np.array(th), np.array(tg))
        assert loss >= 0
        diffs = np.subtract.outer(np.array(tg), np.array(th))
        assert (loss == 0) == bool(np.all(diffs == 0))

    def test_kappa_positive(self):
        with pytest.raises(ValueError):
            quantile_huber_loss(np.zeros(2), np.zeros(2), kappa=0)

    def test_scalar_huber(self):
        loss, g = huber_loss(np.array([0.0, 0.0]), np.array([0.5, -3.0]))
        assert loss == pytest.approx((0.125 + 2.5) / 2)
        assert g.tolist() == pytest.approx([-0.25, 0.5])


class TestBackward:
    def test_zero_upstream(self):
        p = _params()
        theta, acts = forward(p, np.ones((2, 6)), SMALL, cache=True)
        grads = backward(p, acts, np.zeros_like(theta), SMALL)
        assert all(not g.any() for g in grads.values())

    def test_value_bias_gradient(self):
        p = _params()
        theta, acts = forward(p, np.ones((1, 6)), SMALL, cache=True)
        for a in range(SMALL.n_actions):
            for i in range(SMALL.n_quantiles):
                g = np.zeros_like(theta)
                g[0, a, i] = 1.0
                gb = backward(p, acts, g, SMALL)["bv"]
                assert gb[i] == 1.0 and gb.sum() == 1.0

    @pytest.mark.parametrize("dueling", [True, False])
    def test_finite_differences(self, dueling):
        layout = NetworkLayout(hidden=(8, 8), n_actions=3, n_quantiles=4, dueling=dueling)
        p = _params(layout, 9)
        rng = np.random.default_rng(10)
        x, w = rng.normal(size=(2, 6)), rng.normal(size=(2, 3, 4))

        def f():
            return float((forward(p, x, layout) * w).sum())

        theta, acts = forward(p, x, layout, cache=True)
        grads = backward(p, acts, w, layout)
        h = 1e-6
        for name, arr in p.items():
            flat = arr.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up = f()
                flat[k] = old - h
                down = f()
                flat[k] = old
                assert grads[name].reshape(-1)[k] == pytest.approx((up - down) / (2 * h), abs=1e-6)

    def test_gradient_check_small(self):
        assert qnet.gradient_check(seed=1, cases=3) < 1e-4


class TestAdam:
    def test_zero_gradient(self):
        p = _params()
        before = {k: v.copy() for k, v in p.items()}
        Adam().step(p, {k: np.zeros_like(v) for k, v in p.items()})
        assert all(np.array_equal(before[k], p[k]) for k in p)

    def test_first_step_is_sign(self):
        p = {"w": np.array([1.0, 1.0, 1.0])}
        opt = Adam(lr=0.01)
        opt.step(p, {"w": np.array([3.0, -0.2, 1e-3])})
        assert np.allclose(p["w"] - 1.0, [-0.01, 0.01, -0.01], rtol=1e-4)
        assert opt.step_count == 1

    def test_deterministic(self):
        g = {"w": np.array([0.5, -1.0])}
        a, b = {"w": np.zeros(2)}, {"w": np.zeros(2)}
        oa, ob = Adam(), Adam()
        for _ in range(5):
            oa.step(a, g)
            ob.step(b, g)
        assert np.array_equal(a["w"], b["w"])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})
        with pytest.raises(ValueError):
            Adam().step({"w": np.zeros(2)}, {"v": np.zeros(2)})


class TestWasserstein:
    def test_identical_points(self):
        assert wasserstein_1([2.0], [2.0, 2.0]) == 0.0

    def test_shifted_points(self):
        assert wasserstein_1([0.0], [1.0]) == 1.0

    def test_uniform(self):
        samples = np.random.default_rng(0).uniform(size=100_000)
        assert wasserstein_1(tau_midpoints(200), samples) < 0.01

    def test_unequal_sizes(self):
        # {0, 1} against {0, 0.5, 1}: quantile functions differ by 0.5 on (1/3, 1/2) and (1/2, 2/3)
        assert wasserstein_1([0.0, 1.0], [0.0, 0.5, 1.0]) == pytest.approx(1 / 6)

    def test_empty(self):
        with pytest.raises(ValueError):
            wasserstein_1([1.0], [])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = _params()
        path = tmp_path / "ck.json"
        qnet.save_checkpoint(path, p, SMALL, step=42, extra={"note": 1})
        q, layout, step, extra = qnet.load_checkpoint(path)
        assert layout == SMALL and step == 42 and extra == {"note": 1}
        assert all(np.array_equal(p[k], q[k]) for k in p)
        assert list(q) == list(p)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            qnet.load_checkpoint(path)

    def test_rejects_bad_shapes(self, tmp_path):
        path = tmp_path / "ck.json"
        qnet.save_checkpoint(path, _params(), SMALL)
        doc = json.loads(path.read_text())
        doc["layout"]["n_quantiles"] = 9
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            qnet.load_checkpoint(path)
