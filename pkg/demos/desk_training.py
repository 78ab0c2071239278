"""
Training the energy manager at desk scale
=========================================

One seed of the laptop-sized experiment: twelve-day episodes cut from three
synthetic training seasons, 100,000 environment steps, then a greedy
evaluation on a held-out season next to the rule-based controller. A full
run takes about four minutes; pass a smaller step count to try it quickly.

Run with ``python3 demos/desk_training.py [steps] [seed]``.
"""

import sys
import time

from upwelling.config import desk_preset
from upwelling.experiment import evaluate_agent, evaluate_greedy, run_training

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
cfg = desk_preset(seed).with_overrides({"train": {"total_steps": steps, "eval_every": max(steps // 20, 1)}})

t0 = time.time()


def progress(step, agent):
    print(f"step {step:7d}  {time.time() - t0:6.0f} s", flush=True)


run = run_training(cfg, callback=progress)

# %% Learning curve: mean reward and safe hours of episodes ending in each window
print("\n   step  reward  safe h  epsilon")
for row in run.log.rows:
    print(f"{row['step']:7d} {row['window_mean_reward']:7.2f} {row['window_safe_hours']:7.1f} {row['epsilon']:8.3f}")

# %% Held-out comparison on several windows of the evaluation season
print("\n start  agent eff  greedy eff  agent air  greedy air")
for start in (0, 288, 576, 1000, 2000):
    a = evaluate_agent(run.config, run.agent.params, run.agent.layout, run.stats, run.bundle.eval, start)[0]
    g = evaluate_greedy(run.config, run.bundle.eval, 0.0, start)[0]
    print(f"{start:6d} {a.total_efficiency:10.1f} {g.total_efficiency:11.1f} {a.total_air_m3:10.0f} {g.total_air_m3:11.0f}")
