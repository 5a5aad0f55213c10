"""
From population snapshot to per-individual actions
==================================================

The control policy never sees raw coordinates. A population snapshot is
encoded into per-dimension feature triples, an attention extractor turns
those into one vector per individual, and small heads emit an operator
choice plus control parameters for each one.
"""

import numpy as np

from decontrol import de, encoding, nd, policy, problems

rng = nd.Rng(11)
problem = problems.make_instance(15, dim=8, seed=5)
pop = de.initialize(20, problem, rng)

# Encoding: positions scaled by box width, fitness split into a
# mantissa/exponent pair, plus a progress scalar t/horizon.
obs = encoding.encode(pop.X, pop.Y, problem.lower, problem.upper,
                      t=1, horizon=100)
print(f"features: {obs.features.shape}  (dim, individuals, 3)")
print(f"time scalar: {obs.s_time}")

m, e = obs.features[0, :3, 1], obs.features[0, :3, 2]
print("fitness of first three:", np.round(pop.Y[:3], 2))
print("  as mantissa:", np.round(m, 4), " exponent:", np.round(e, 4))
print("  reconstructed:", np.round(encoding.reconstruct(m, e), 2))

# The policy is a pure-numpy network; weights live in a plain dict.
config = policy.PolicyConfig()
weights = policy.init_weights(config, rng)
print(f"\npolicy parameters: {policy.param_count(config):,}")

# Features are permutation-equivariant over individuals and shared
# across dimensions, so the same weights drive any (N, D).
feats = policy.features(config, weights, obs)
print(f"extracted state: {feats.shape}  (one {config.feature_dim}+"
      f"{config.time_dim} vector per individual)")

# Sampling an action set: operator choices are categorical draws,
# parameters come from clamped Gaussians.
sample = policy.act(config, weights, obs, rng)
actions = sample.actions()
ops = sorted(set((a.mutation_op, a.crossover_op) for a in actions))
print(f"\nsampled {len(actions)} actions, {len(ops)} distinct op pairs")
first = actions[0]
print(f"individual 0: mutation {first.mutation_op}, crossover "
      f"{first.crossover_op}, F-params {np.round(first.mutation_params, 3)}")
print(f"log-prob of the whole draw: {sample.log_prob:.2f}, "
      f"state value estimate: {sample.value:.4f}")

# Greedy mode takes argmax operators and mean parameters instead.
greedy = policy.act(config, weights, obs, rng, greedy=True)
print("greedy repeats exactly:",
      greedy.op_m.tolist() == policy.act(
          config, weights, obs, rng, greedy=True).op_m.tolist())

# One full generation under sampled control.
arch = de.Archives(capacity=pop.n_pop)
report = de.step(pop, arch, actions, problem, rng)
print(f"\none controlled generation: best {pop.best_y:.2f}, "
      f"{report.n_replaced} replacements")
