import numpy as np
import pytest
from scipy import stats

from chain import ChainEnv, value_iteration
from upwelling import qnet
from upwelling.agent import (
    Agent,
    Batch,
    NumericError,
    ReplayBuffer,
    TrainConfig,
    act,
    compute_targets,
    ddqn_target,
    dqn_target,
    epsilon_at,
    layout_for,
    rng_stream,
    train,
)
from upwelling.qnet import NetworkLayout


def test_value_iteration_oracle():
    Q = value_iteration(0.9)
    expected = np.array([[0.5, 0.81], [0.729, 0.9], [0.81, 1.0]])
    assert np.allclose(Q, expected, atol=1e-12)


class TestEpsilon:
    cfg = TrainConfig(total_steps=1000)

    def test_endpoints(self):
        assert epsilon_at(0, self.cfg) == 1.0
        assert epsilon_at(100, self.cfg) == 0.01
        assert epsilon_at(1000, self.cfg) == 0.01

    def test_linear_and_non_increasing(self):
        eps = [epsilon_at(k, self.cfg) for k in range(1000)]
        assert np.all(np.diff(eps) <= 0)
        assert epsilon_at(50, self.cfg) == pytest.approx(0.505)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            TrainConfig(gamma=1.0)
        with pytest.raises(ValueError):
            TrainConfig(eps_start=0.1, eps_end=0.5)
        with pytest.raises(ValueError):
            TrainConfig(batch=10, buffer_capacity=5)
        with pytest.raises(ValueError):
            TrainConfig(algorithm="c51")


def _fixed_q_params(q):
    """Non-dueling single-quantile net whose Q values are ``q`` for any input."""
    layout = NetworkLayout(input_dim=2, hidden=(1,), n_actions=len(q), n_quantiles=1, dueling=False)
    p = qnet.init_network(layout, 0)
    p["W0"][:] = 0
    p["Wq"][:] = 0
    p["bq"][:] = q
    return p, layout


class TestAct:
    def test_greedy(self):
        p, lay = _fixed_q_params([0.1, 0.9, 0.3])
        assert act(p, lay, np.zeros(2), 0.0, np.random.default_rng(0)) == 1

    def test_tie_lowest(self):
        p, lay = _fixed_q_params([1.0, 1.0])
        assert act(p, lay, np.zeros(2), 0.0, np.random.default_rng(0)) == 0

    def test_uniform_exploration(self):
        p, lay = _fixed_q_params([0.0, 5.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        counts = np.bincount([act(p, lay, np.zeros(2), 1.0, rng) for _ in range(100_000)], minlength=4)
        sigma = np.sqrt(100_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - 25_000) <= 3 * sigma)

    def test_mask(self):
        p, lay = _fixed_q_params([0.0, 5.0, 1.0])
        mask = np.array([True, False, True])
        assert act(p, lay, np.zeros(2), 0.0, np.random.default_rng(0), mask) == 2
        rng = np.random.default_rng(2)
        assert all(act(p, lay, np.zeros(2), 1.0, rng, mask) != 1 for _ in range(500))


class TestReplay:
    def test_ring_eviction(self):
        buf = ReplayBuffer(2, obs_dim=1)
        for k, name in enumerate("abc"):
            buf.push([k], k, float(k), [k + 1], False)
        assert len(buf) == 2
        assert [t[1] for t in buf.contents()] == [1, 2]

    def test_fifo_and_growth(self):
        buf = ReplayBuffer(5000, obs_dim=1)
        for k in range(7000):
            buf.push([k], k % 3, float(k), [k], False)
            assert len(buf) <= 5000
        rewards = [t[2] for t in buf.contents()]
        assert rewards == [float(k) for k in range(2000, 7000)]

    def test_sample_before_warmup(self):
        buf = ReplayBuffer(10, obs_dim=1)
        buf.push([0], 0, 0.0, [0], False)
        with pytest.raises(RuntimeError):
            buf.sample(2, np.random.default_rng(0))

    def test_uniform_indices(self):
        buf = ReplayBuffer(50, obs_dim=1)
        for k in range(50):
            buf.push([k], 0, 0.0, [k], False)
        rng = np.random.default_rng(3)
        idx = np.concatenate([buf.indices(32, rng) for _ in range(3125)])
        counts = np.bincount(idx, minlength=50)
        assert stats.chisquare(counts).pvalue > 0.001


def _batch(s2, r, done):
    s2 = np.atleast_2d(np.asarray(s2, float))
    n = len(r)
    return Batch(np.zeros_like(s2), np.zeros(n, int), np.asarray(r, float), s2, np.asarray(done, bool))


class TestTargets:
    def _two_action_two_quantile(self):
        # theta(s', a, j) = bias for this zero-weight net
        layout = NetworkLayout(input_dim=2, hidden=(1,), n_actions=2, n_quantiles=2, dueling=False)
        p = qnet.init_network(layout, 0)
        p["W0"][:] = 0
        p["Wq"][:] = 0
        p["bq"][:] = [0.0, 1.0, 2.0, -1.0]  # a0: {0, 1} mean 0.5; a1: {2, -1} mean 0.5 -> tie, a* = 0
        return p, layout

    def test_terminal(self):
        p, lay = self._two_action_two_quantile()
        t = compute_targets(p, lay, _batch([[0, 0]], [0.5], [True]), 0.99)
        assert t.tolist() == [[0.5, 0.5]]

    def test_gamma_zero(self):
        p, lay = self._two_action_two_quantile()
        t = compute_targets(p, lay, _batch([[0, 0]], [0.3], [False]), 0.0)
        assert t.tolist() == [[0.3, 0.3]]

    def test_hand_computed(self):
        p, lay = self._two_action_two_quantile()
        t = compute_targets(p, lay, _batch([[0, 0]], [1.0], [False]), 0.5)
        assert t.tolist() == [[1.0, 1.5]]
        p["bq"][:] = [0.0, 1.0, 4.0, -1.0]  # a1 mean 1.5 wins
        t = compute_targets(p, lay, _batch([[0, 0]], [1.0], [False]), 0.5)
        assert t.tolist() == [[3.0, 0.5]]

    def test_scalar_targets(self):
        p, lay = _fixed_q_params([1.0, 3.0])
        b = _batch([[0, 0], [0, 0]], [0.5, 0.5], [False, True])
        assert dqn_target(p, lay, b, 0.9).tolist() == pytest.approx([0.5 + 2.7, 0.5])
        assert ddqn_target(p, p, lay, b, 0.9).tolist() == pytest.approx([3.2, 0.5])
        online, _ = _fixed_q_params([5.0, 0.0])
        # online picks action 0, target evaluates it at 1.0
        assert ddqn_target(online, p, lay, b, 0.9).tolist() == pytest.approx([0.5 + 0.9, 0.5])


def _agent(algorithm="proposed", n_quantiles=8, seed=0, **kw):
    cfg = TrainConfig(algorithm=algorithm, seed=seed, batch=4, buffer_capacity=100, **kw)
    layout = layout_for(algorithm, 3, n_quantiles, (8, 8), input_dim=4)
    return Agent(layout, cfg)


def _rand_batch(rng, n=4, obs=4, actions=3):
    return Batch(rng.normal(size=(n, obs)), rng.integers(0, actions, n), rng.normal(size=n),
                 rng.normal(size=(n, obs)), rng.random(n) < 0.3)


class TestTrainStep:
    def test_layouts(self):
        assert layout_for("proposed", 17).dueling and layout_for("proposed", 17).n_quantiles == 200
        assert not layout_for("qrdqn", 17).dueling
        assert layout_for("ddqn", 17).dueling and layout_for("ddqn", 17).n_quantiles == 1
        assert not layout_for("dqn", 17).dueling and layout_for("dqn", 17).n_quantiles == 1
        with pytest.raises(ValueError):
            Agent(layout_for("proposed", 3, 8), TrainConfig(algorithm="dqn"))

    def test_zero_loss_when_converged(self):
        ag = _agent()
        rng = np.random.default_rng(0)
        b = _rand_batch(rng)
        b.done[:] = True
        b.s[:] = b.s[0]
        b.a[:] = b.a[0]
        # every quantile outputs 0, which the terminal reward of 0 matches exactly
        ag.params["bv"][:] = 0
        ag.params["Wv"][:] = 0
        ag.params["Wa"][:] = 0
        ag.params["ba"][:] = 0
        b.r[:] = 0.0
        before = {k: v.copy() for k, v in ag.params.items()}
        loss = ag.train_step(b)
        assert loss == 0.0
        assert all(np.array_equal(before[k], ag.params[k]) for k in before)

    @pytest.mark.parametrize("algorithm", ["proposed", "qrdqn", "ddqn", "dqn"])
    def test_descends_on_fixed_batch(self, algorithm):
        ag = _agent(algorithm, lr=1e-3)
        b = _rand_batch(np.random.default_rng(1))
        losses = [ag.train_step(b) for _ in range(100)]
        assert losses[-1] < losses[0]

    def test_untaken_actions_flat_head_untouched(self):
        ag = _agent("qrdqn")
        b = _rand_batch(np.random.default_rng(2))
        b.a[:] = 1
        _, grads = ag.loss_and_grads(b)
        g = grads["Wq"].reshape(8, 3, 8)
        assert not g[:, [0, 2]].any() and g[:, 1].any()

    def test_untaken_actions_dueling_share_coupling(self):
        ag = _agent("proposed")
        b = _rand_batch(np.random.default_rng(2))
        b.a[:] = 1
        _, grads = ag.loss_and_grads(b)
        g = grads["Wa"].reshape(8, 3, 8)
        assert np.array_equal(g[:, 0], g[:, 2])
        assert np.allclose(g[:, 1], -2 * g[:, 0])

    def test_dqn_matches_scalar_huber(self):
        ag = _agent("dqn", n_quantiles=1)
        b = _rand_batch(np.random.default_rng(3))
        loss, _ = ag.loss_and_grads(b)
        pred = qnet.forward(ag.params, b.s, ag.layout)[np.arange(4), b.a, 0]
        y = b.r + 0.99 * (~b.done) * qnet.forward(ag.target, b.s2, ag.layout)[:, :, 0].max(axis=1)
        u = y - pred
        direct = np.mean(np.where(np.abs(u) <= 1, 0.5 * u**2, np.abs(u) - 0.5))
        assert loss == pytest.approx(direct, rel=1e-12)

    def test_non_finite_loss_aborts(self):
        ag = _agent()
        b = _rand_batch(np.random.default_rng(4))
        b.r[0] = np.inf
        with pytest.raises(NumericError):
            ag.train_step(b)

    def test_sync(self):
        ag = _agent()
        ag.train_step(_rand_batch(np.random.default_rng(5)))
        x = np.ones((1, 4))
        assert not np.array_equal(qnet.forward(ag.params, x, ag.layout), qnet.forward(ag.target, x, ag.layout))
        ag.sync_target()
        assert all(np.array_equal(ag.params[k], ag.target[k]) for k in ag.params)
        assert ag.params["W0"] is not ag.target["W0"]


def _chain_cfg(**kw):
    base = dict(total_steps=2000, batch=16, gamma=0.9, target_sync=100, eval_every=500, buffer_capacity=2000,
                warmup=100, lr=1e-3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainLoop:
    layout = NetworkLayout(input_dim=3, hidden=(16, 16), n_actions=2, n_quantiles=8)

    def test_zero_steps(self, tmp_path):
        agent, log = train(ChainEnv, _chain_cfg(total_steps=0), self.layout, out_dir=tmp_path)
        assert log.rows == [] and log.losses == []
        assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoint_00000000.json"]

    def test_log_and_checkpoints(self, tmp_path):
        _, log = train(ChainEnv, _chain_cfg(total_steps=1200), self.layout, out_dir=tmp_path)
        assert [r["step"] for r in log.rows] == [500, 1000]
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["checkpoint_00000000.json", "checkpoint_00000500.json", "checkpoint_00001000.json",
                         "checkpoint_00001200.json"]
        assert log.to_csv().splitlines()[0] == "step,episode,window_mean_reward,window_safe_hours,loss,epsilon"
        assert len(log.losses) == 1200 - 100 + 1

    def test_sync_only_at_multiples(self):
        snapshots = []
        cfg = _chain_cfg(total_steps=450, target_sync=100, eval_every=1)

        def watch(step, agent):
            snapshots.append((step, {k: v.copy() for k, v in agent.target.items()}))

        _, log = train(ChainEnv, cfg, self.layout, callback=watch)
        assert log.sync_steps == [100, 200, 300, 400]
        for (s0, t0), (s1, t1) in zip(snapshots, snapshots[1:]):
            changed = any(not np.array_equal(t0[k], t1[k]) for k in t0)
            assert changed == (s1 % 100 == 0), s1

    def test_deterministic(self):
        a = train(ChainEnv, _chain_cfg(), self.layout)[1].to_csv()
        b = train(ChainEnv, _chain_cfg(), self.layout)[1].to_csv()
        c = train(ChainEnv, _chain_cfg(seed=1), self.layout)[1].to_csv()
        assert a == b and a != c

    def test_named_streams_independent(self):
        a = rng_stream(3, "env").random(4)
        assert np.array_equal(a, rng_stream(3, "env").random(4))
        assert not np.array_equal(a, rng_stream(3, "replay").random(4))
