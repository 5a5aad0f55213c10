"""
Benchmark landscapes: instances, optima, rotations
==================================================

Build black-box problem instances, check their planted optima, and peek
at the structure that makes each function family distinct.
"""

import numpy as np

from decontrol import problems

# An instance is a function id (1..24), a dimension, and a seed that
# fixes the optimum shift and the rotation applied to inputs.
sphere = problems.make_instance(1, dim=5, seed=42)
print(f"{sphere.name}: optimum value {sphere.best_known} at x_opt =")
print(" ", np.round(sphere.x_opt, 3))

# Evaluating at the planted optimum returns best_known (up to roundoff).
at_opt = problems.evaluate(sphere, sphere.x_opt[None, :])[0]
print(f"f(x_opt) = {at_opt:.3e}")

# Away from the optimum the value grows; the sphere is exactly the
# squared distance to x_opt.
x = sphere.x_opt + np.array([1.0, 0, 0, 0, 0])
print(f"one unit away: {problems.evaluate(sphere, x[None, :])[0]:.6f}")

# Separable functions (ids 1-5) keep an identity rotation; the others
# get a random orthonormal matrix, so coordinate tricks stop working.
rastrigin = problems.make_instance(15, dim=5, seed=42)
print(f"\n{rastrigin.name} rotation orthonormal:",
      np.allclose(rastrigin.rotation @ rastrigin.rotation.T, np.eye(5)))
print(f"{sphere.name} rotation is identity:",
      np.array_equal(sphere.rotation, np.eye(5)))

# Batch evaluation takes an (n, dim) array.
batch = np.random.default_rng(0).uniform(-5, 5, size=(4, 5))
for fid in (2, 6, 15, 21):
    inst = problems.make_instance(fid, dim=5, seed=42)
    vals = problems.evaluate(inst, batch)
    print(f"{inst.name}: batch best {vals.min():.3f}, worst {vals.max():.3f}")

# The train/test split used throughout:
print("\ntrain split:", problems.TRAIN_IDS)
print("test split: ", problems.TEST_IDS)

# Custom problems plug into a name registry; anything exposing
# evaluate / dim / bounds / best_known works as a provider.
def make_quadratic(dim=5, seed=0):
    return problems.make_instance(1, dim, seed)

problems.register_problem("my-quadratic", make_quadratic)
mine = problems.get_problem("my-quadratic", dim=3, seed=7)
print("registered:", problems.registered_problems(),
      "-> dim", mine.dim)
