"""
Driving the variation engine by hand
====================================

The evolution engine applies a per-individual action each generation:
a mutation rule (1..14), a crossover rule (1..3), and their control
parameters. Here we steer it manually, no learned policy involved.
"""

import numpy as np

from decontrol import de, nd, problems

rng = nd.Rng(7)
problem = problems.make_instance(8, dim=10, seed=3)  # rosenbrock

# A population is just (N, D) points plus best-so-far bookkeeping.
pop = de.initialize(30, problem, rng, max_evals=6000)
arch = de.Archives(capacity=pop.n_pop)
print(f"start: best {pop.best_y:.3f} after {pop.evals} evaluations")

# The classic rand/1/bin configuration, same action for everyone:
# mutation rule 1 with F=0.5, binomial crossover with Cr=0.9.
classic = de.IndividualAction(
    mutation_op=1, crossover_op=1,
    mutation_params=np.array([0.5, 0.0, 0.0]),
    crossover_params=np.array([0.9, 0.0]),
)

for _ in range(40):
    report = de.step(pop, arch, [classic] * pop.n_pop, problem, rng)
print(f"rand/1/bin, 40 gens: best {pop.best_y:.3f}, "
      f"{report.n_replaced}/{pop.n_pop} replaced last gen")

# Mixed strategies: half the population exploits with a best-guided
# rule, half explores with a two-difference rand rule.
greedy = de.IndividualAction(2, 1, np.array([0.7, 0.0, 0.0]), np.array([0.9, 0.0]))
wild = de.IndividualAction(5, 1, np.array([0.9, 0.9, 0.0]), np.array([0.5, 0.0]))
actions = [greedy] * 15 + [wild] * 15

for _ in range(40):
    report = de.step(pop, arch, actions, problem, rng)
print(f"mixed strategies, 40 more: best {pop.best_y:.4f}")

# Archive-using rules draw difference vectors from replaced parents.
print(f"archive holds {len(arch.pool)} replaced parents")
archive_rule = de.IndividualAction(9, 2, np.array([0.6, 0.3, 0.0]),
                                   np.array([0.8, 0.0]))
for _ in range(40):
    de.step(pop, arch, [archive_rule] * pop.n_pop, problem, rng)
print(f"current-to-pbest with archive, 40 more: best {pop.best_y:.4f}")

# The budget is enforced: a partial generation evaluates only what is
# left, and the engine reports exhaustion.
print(f"\nbudget used: {pop.evals}/{pop.max_evals}, exhausted: {pop.exhausted}")
while not pop.exhausted:
    de.step(pop, arch, [classic] * pop.n_pop, problem, rng)
print(f"after spending the rest: {pop.evals}/{pop.max_evals}, "
      f"final best {pop.best_y:.4f}")
