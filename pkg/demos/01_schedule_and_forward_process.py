"""Walk through the noise schedule and the forward diffusion process.

Builds the 500-step linear schedule, shows how the signal fraction decays,
and demonstrates that iterating single forward steps matches the
closed-form jump in distribution.
"""

import numpy as np

from facemotion import DiffusionState, build_schedule, forward_sample, forward_step

sched = build_schedule(T=500, beta_start=1e-4, beta_end=0.02)
print("schedule: T =", sched.T)
print("beta range:", sched.beta[0], "->", sched.beta[-1])
print("signal fraction sqrt(alpha_bar) at t=1, 100, 250, 500:")
for t in (1, 100, 250, 500):
    print(f"  t={t:3d}  sqrt(alpha_bar)={np.sqrt(sched.alpha_bar_at(t)):.4f}"
          f"  noise std={np.sqrt(1 - sched.alpha_bar_at(t)):.4f}")

# a toy 10-frame head-pose sequence: a slow nod
rng = np.random.default_rng(0)
frames = np.sin(np.linspace(0, np.pi, 10))[:, None] * np.ones((1, 6)) * 0.3

print("\nforward jumps from the same clean sequence:")
for t in (50, 250, 500):
    state = forward_sample(frames, t, sched, rng.standard_normal(frames.shape))
    print(f"  t={t:3d}  rms={np.sqrt(np.mean(state.x_t ** 2)):.3f}")

# composing single Markov steps gives the same distribution as the jump
m = 20_000
chains = DiffusionState(np.tile(frames[4], (m, 1)), t=0)
for _ in range(50):
    chains = forward_step(chains, sched, rng.standard_normal((m, 6)))
jump_mean = np.sqrt(sched.alpha_bar_at(50)) * frames[4]
print("\nafter 50 composed steps vs closed-form jump:")
print("  empirical mean:", chains.x_t.mean(axis=0).round(4))
print("  predicted mean:", jump_mean.round(4))
print("  empirical var: ", chains.x_t.var(axis=0).round(4))
print("  predicted var: ", round(1 - sched.alpha_bar_at(50), 4))
