"""
Quantile Q-learning against value iteration
===========================================

A three-state chain is small enough to solve exactly. Moving left from the
first state pays 0.5, moving right from the last pays 1.0, and with a
discount of 0.9 the best plan from every state is to head right. The
dueling quantile agent should learn this, and the mean of its quantiles
should land on the dynamic-programming values.

Run with ``python3 demos/chain_oracle.py`` (about ten seconds).
"""

import numpy as np

from upwelling import qnet
from upwelling.agent import TrainConfig, train
from upwelling.qnet import NetworkLayout

GAMMA = 0.9


def transition(s, a):
    if a == 0:
        return (s, 0.5, True) if s == 0 else (s - 1, 0.0, False)
    return (s, 1.0, True) if s == 2 else (s + 1, 0.0, False)


class Chain:
    obs_dim, n_actions = 3, 2

    def __init__(self, rng):
        self.rng, self.s = rng, 0

    def reset(self):
        self.s = int(self.rng.integers(3))
        return np.eye(3)[self.s]

    def step(self, a):
        self.s, r, done = transition(self.s, int(a))
        return np.eye(3)[self.s], r, done, {}


# %% Exact answer
Q_star = np.zeros((3, 2))
for _ in range(200):
    for s in range(3):
        for a in range(2):
            s2, r, done = transition(s, a)
            Q_star[s, a] = r + (0.0 if done else GAMMA * Q_star[s2].max())

# %% Learned answer
layout = NetworkLayout(input_dim=3, hidden=(16, 16), n_actions=2, n_quantiles=8)
cfg = TrainConfig(total_steps=20_000, batch=32, gamma=GAMMA, target_sync=500, eval_every=5_000,
                  buffer_capacity=20_000, warmup=500, lr=5e-4)
agent, log = train(Chain, cfg, layout)
theta = qnet.forward(agent.params, np.eye(3), layout)
Q = qnet.q_values(theta)

print("state   Q*(left)  Q*(right)   Q(left)   Q(right)")
for s in range(3):
    print(f"{s:5d} {Q_star[s, 0]:9.4f} {Q_star[s, 1]:10.4f} {Q[s, 0]:9.4f} {Q[s, 1]:10.4f}")
print(f"max abs error {np.abs(Q - Q_star).max():.2e}")

# On a deterministic chain the return distribution is a point mass, so every
# quantile collapses onto the same value.
print("quantile spread per state, best action:", np.ptp(theta[np.arange(3), Q.argmax(1)], axis=1).round(4))
