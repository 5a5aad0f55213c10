"""Differential evolution engine with a 17-operator pool.

Fourteen mutation rules and three crossover rules, selected and
parameterized per individual each generation. One ``step`` runs
mutate -> crossover -> midpoint bound repair -> batched evaluation ->
greedy one-to-one selection (offspring wins ties); replaced parents feed
the archives.

Reproducibility contract (mirrored by the straight-line test oracle):
all draws come from the explicitly passed Rng in a fixed order. Per
individual i (ascending): mutation draws first, crossover draws second.

* pbest ops (8, 9, 11, 13) draw the pbest index before any donor;
* plain donors use ``rng.pick_distinct`` in formula order, excluding the
  target and each other;
* archive-union donors use rejection sampling over ``N + len(archive)``
  slots, excluding the target and previously drawn population donors
  (archive slots are always eligible);
* the proximity rule (12) draws three donors sequentially with inverse
  distance weights, zeroing already chosen entries before renormalizing;
* crossover: binomial draws jrand then D uniforms; exponential draws the
  start index then length uniforms; p-binomial draws the top-p index,
  then jrand, then D uniforms.

After selection, each replaced parent is pushed to the archives in index
order (the union archive's random eviction draws happen here).

Parameter slots, all in [0, 1] and used directly: mutation slot 1 -> F,
slot 2 -> secondary weight (F_a for op 11, F_1 for op 13), slot 3 ->
pbest fraction p; crossover slot 1 -> Cr, slot 2 -> top-p fraction.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "N_MUTATION_OPS",
    "N_CROSSOVER_OPS",
    "IndividualAction",
    "Archives",
    "PopulationState",
    "StepReport",
    "initialize",
    "step",
    "repair_to_box",
    "pbest_size",
]

N_MUTATION_OPS = 14
N_CROSSOVER_OPS = 3


@dataclass
class IndividualAction:
    """Operator choice and control parameters for one individual."""

    mutation_op: int  # 1..14
    crossover_op: int  # 1..3
    mutation_params: np.ndarray  # (3,) in [0, 1]
    crossover_params: np.ndarray  # (2,) in [0, 1]


@dataclass
class StepReport:
    """Reward context for one generation."""

    y_prev_best: float
    y_best: float
    evals_used: int
    trial_fitness: np.ndarray  # evaluated trials, in evaluation order
    n_replaced: int


class Archives:
    """Replaced-parent stores backing the archive-using mutation rules.

    ``pool``: capacity-N union archive with random eviction (ops 9, 10).
    ``recent``: FIFO of capacity N (op 13, second difference vector).
    ``former``: FIFO of capacity 2N fed by ``recent`` evictions (op 13,
    third difference vector).
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("archive capacity must be positive")
        self.capacity = int(capacity)
        self.pool = []
        self.recent = deque()
        self.former = deque()

    def push(self, x, rng):
        x = np.array(x, dtype=np.float64, copy=True)
        self.pool.append(x)
        while len(self.pool) > self.capacity:
            self.pool.pop(int(rng.integers(0, len(self.pool))))
        self.recent.append(x)
        while len(self.recent) > self.capacity:
            self.former.append(self.recent.popleft())
        while len(self.former) > 2 * self.capacity:
            self.former.popleft()


@dataclass
class PopulationState:
    """Population plus best-so-far bookkeeping."""

    X: np.ndarray  # (N, D)
    Y: np.ndarray  # (N,)
    gen: int
    evals: int
    best_x: np.ndarray
    best_y: float
    init_best_y: float
    max_evals: int | None = None

    @property
    def n_pop(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def exhausted(self):
        return self.max_evals is not None and self.evals >= self.max_evals


def initialize(n_pop, problem, rng, max_evals=None):
    """Uniform population in the box; consumes n_pop evaluations."""
    if n_pop < 5:
        raise ValueError("population must have at least 5 members (five-donor rules)")
    if max_evals is not None and max_evals < n_pop:
        raise ValueError("evaluation budget smaller than one population")
    X = rng.uniform(problem.lower, problem.upper, (n_pop, problem.dim))
    Y = problem.evaluate(X)
    b = int(np.argmin(Y))
    return PopulationState(
        X=X, Y=Y, gen=0, evals=n_pop, best_x=X[b].copy(), best_y=float(Y[b]),
        init_best_y=float(Y[b]), max_evals=max_evals,
    )


def repair_to_box(v, parent, lower, upper):
    """Midpoint-to-bound repair: out-of-box coords move halfway to the bound."""
    v = np.where(v < lower, 0.5 * (parent + lower), v)
    v = np.where(v > upper, 0.5 * (parent + upper), v)
    return v


def pbest_size(p, n_pop):
    """max(1, round(p * N)) with round-half-up."""
    return max(1, int(np.floor(p * n_pop + 0.5)))


def _validate(actions, n_pop):
    if len(actions) != n_pop:
        raise ValueError(f"need {n_pop} actions, got {len(actions)}")
    for a in actions:
        if not 1 <= a.mutation_op <= N_MUTATION_OPS:
            raise ValueError(f"mutation operator {a.mutation_op} outside pool")
        if not 1 <= a.crossover_op <= N_CROSSOVER_OPS:
            raise ValueError(f"crossover operator {a.crossover_op} outside pool")
        mp = np.asarray(a.mutation_params, dtype=np.float64)
        cp = np.asarray(a.crossover_params, dtype=np.float64)
        if mp.shape != (3,) or cp.shape != (2,):
            raise ValueError("parameter slots must be (3,) and (2,)")
        if np.any(mp < 0.0) or np.any(mp > 1.0) or np.any(cp < 0.0) or np.any(cp > 1.0):
            raise ValueError("control parameters must lie in [0, 1]")


def _union_pick(rng, n_pop, archive, exclude_pop):
    """One donor from population + archive slots; returns (vector, pop index or None)."""
    total = n_pop + len(archive)
    if total - len(exclude_pop) < 1:
        raise ValueError("no donor available in population/archive union")
    while True:
        j = int(rng.integers(0, total))
        if j < n_pop:
            if j in exclude_pop:
                continue
            return j, j
        return j, None


@dataclass
class _GenContext:
    """Frozen start-of-generation view shared by all individuals."""

    X0: np.ndarray
    Y0: np.ndarray
    sorted_idx: np.ndarray
    dist: np.ndarray | None = None
    neighbor_count: int = 0


def _pbest_pick(rng, ctx, p):
    k = pbest_size(p, len(ctx.Y0))
    return int(ctx.sorted_idx[int(rng.integers(0, k))])


def _mutate(i, action, ctx, arch, rng):
    op = action.mutation_op
    F, F2, p = (float(v) for v in np.asarray(action.mutation_params, dtype=np.float64))
    X0, Y0 = ctx.X0, ctx.Y0
    n = len(Y0)
    x = X0[i]
    x_best = X0[ctx.sorted_idx[0]]

    if op == 1:
        r1, r2, r3 = rng.pick_distinct(n, 3, exclude=(i,))
        return X0[r1] + F * (X0[r2] - X0[r3])
    if op == 2:
        r1, r2 = rng.pick_distinct(n, 2, exclude=(i,))
        return x_best + F * (X0[r1] - X0[r2])
    if op == 3:
        # At the minimum population the target must stay eligible or five
        # distinct donors cannot exist; donors remain pairwise distinct.
        r1, r2, r3, r4, r5 = rng.pick_distinct(n, 5, exclude=(i,) if n > 5 else ())
        return X0[r1] + F * (X0[r2] - X0[r3]) + F * (X0[r4] - X0[r5])
    if op == 4:
        r1, r2, r3, r4 = rng.pick_distinct(n, 4, exclude=(i,))
        return x_best + F * (X0[r1] - X0[r2]) + F * (X0[r3] - X0[r4])
    if op == 5:
        r1, r2, r3 = rng.pick_distinct(n, 3, exclude=(i,))
        return x + F * (X0[r1] - x) + F * (X0[r2] - X0[r3])
    if op == 6:
        r1, r2 = rng.pick_distinct(n, 2, exclude=(i,))
        return x + F * (x_best - x) + F * (X0[r1] - X0[r2])
    if op == 7:
        r1, r2, r3, r4 = rng.pick_distinct(n, 4, exclude=(i,))
        return X0[r1] + F * (x_best - X0[r2]) + F * (X0[r3] - X0[r4])
    if op == 8:
        xp = X0[_pbest_pick(rng, ctx, p)]
        r1, r2 = rng.pick_distinct(n, 2, exclude=(i,))
        return x + F * (xp - x) + F * (X0[r1] - X0[r2])
    if op == 9:
        xp = X0[_pbest_pick(rng, ctx, p)]
        (r1,) = rng.pick_distinct(n, 1, exclude=(i,))
        j, _ = _union_pick(rng, n, arch.pool, {i, r1})
        xr2 = X0[j] if j < n else arch.pool[j - n]
        return x + F * (xp - x) + F * (X0[r1] - xr2)
    if op == 10:
        (r1,) = rng.pick_distinct(n, 1, exclude=(i,))
        j, _ = _union_pick(rng, n, arch.pool, {i, r1})
        xr2 = X0[j] if j < n else arch.pool[j - n]
        return x + F * (X0[r1] - xr2)
    if op == 11:
        xp = X0[_pbest_pick(rng, ctx, p)]
        r1, r2 = rng.pick_distinct(n, 2, exclude=(i,))
        return F * X0[r1] + F * F2 * (xp - X0[r2])
    if op == 12:
        w = 1.0 / (ctx.dist[i] + 1e-12)
        w[i] = 0.0
        p1 = rng.choice_weighted(w)
        w[p1] = 0.0
        p2 = rng.choice_weighted(w)
        w[p2] = 0.0
        p3 = rng.choice_weighted(w)
        return X0[p1] + F * (X0[p2] - X0[p3])
    if op == 13:
        xp = X0[_pbest_pick(rng, ctx, p)]
        (r1,) = rng.pick_distinct(n, 1, exclude=(i,))
        recent = list(arch.recent)
        j2, pop2 = _union_pick(rng, n, recent, {i, r1})
        xr2 = X0[j2] if j2 < n else recent[j2 - n]
        former = list(arch.former)
        excl = {i, r1} | ({pop2} if pop2 is not None else set())
        j3, _ = _union_pick(rng, n, former, excl)
        xr3 = X0[j3] if j3 < n else former[j3 - n]
        return x + F * (xp - x) + F2 * (X0[r1] - xr2) + F2 * (X0[r1] - xr3)
    if op == 14:
        row = ctx.dist[i].copy()
        row[i] = np.inf
        order = np.argsort(row, kind="stable")[: ctx.neighbor_count]
        nb = int(order[int(np.argmin(Y0[order]))])
        r2, r3 = rng.pick_distinct(n, 2, exclude=(i,))
        return X0[nb] + F * (X0[r2] - X0[r3])
    raise ValueError(f"mutation operator {op} outside pool")


def _crossover(i, action, u, ctx, rng):
    op = action.crossover_op
    cr, p = (float(v) for v in np.asarray(action.crossover_params, dtype=np.float64))
    x = ctx.X0[i]
    d = len(x)
    if op == 1:
        jrand = int(rng.integers(0, d))
        mask = rng.uniform(size=d) < cr
        mask[jrand] = True
        return np.where(mask, u, x)
    if op == 2:
        start = int(rng.integers(0, d))
        length = 1
        while length < d and rng.uniform() < cr:
            length += 1
        v = x.copy()
        idx = (start + np.arange(length)) % d
        v[idx] = u[idx]
        return v
    if op == 3:
        xp = ctx.X0[_pbest_pick(rng, ctx, p)]
        jrand = int(rng.integers(0, d))
        mask = rng.uniform(size=d) < cr
        mask[jrand] = True
        return np.where(mask, u, xp)
    raise ValueError(f"crossover operator {op} outside pool")


def step(pop, arch, actions, problem, rng):
    """Advance one generation in place; returns the reward context.

    Trial generation reads a frozen copy of the parent population, so
    per-individual work is order-independent; evaluation stops
    mid-generation when the budget runs out (remaining individuals keep
    their parents). Best-so-far tracks every evaluated trial.
    """
    if pop.exhausted:
        raise RuntimeError("evaluation budget already exhausted (terminal state)")
    n, d = pop.X.shape
    _validate(actions, n)

    ctx = _GenContext(
        X0=pop.X.copy(),
        Y0=pop.Y.copy(),
        sorted_idx=np.argsort(pop.Y, kind="stable"),
    )
    if any(a.mutation_op in (12, 14) for a in actions):
        diff = ctx.X0[:, None, :] - ctx.X0[None, :, :]
        ctx.dist = np.sqrt((diff * diff).sum(axis=2))
        ctx.neighbor_count = max(2, n // 10)

    trials = np.empty_like(pop.X)
    for i, action in enumerate(actions):
        u = _mutate(i, action, ctx, arch, rng)
        v = _crossover(i, action, u, ctx, rng)
        trials[i] = repair_to_box(v, ctx.X0[i], problem.lower, problem.upper)

    k = n if pop.max_evals is None else min(n, pop.max_evals - pop.evals)
    trial_y = problem.evaluate(trials[:k]) if k > 0 else np.empty(0)

    prev_best = pop.best_y
    replaced = 0
    for i in range(k):
        if trial_y[i] <= ctx.Y0[i]:
            arch.push(ctx.X0[i], rng)
            pop.X[i] = trials[i]
            pop.Y[i] = trial_y[i]
            replaced += 1
        if trial_y[i] < pop.best_y:
            pop.best_y = float(trial_y[i])
            pop.best_x = trials[i].copy()
    pop.evals += k
    pop.gen += 1
    return StepReport(
        y_prev_best=prev_best,
        y_best=pop.best_y,
        evals_used=k,
        trial_fitness=trial_y,
        n_replaced=replaced,
    )
