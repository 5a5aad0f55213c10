"""n-step proximal policy optimization over the differential evolution loop.

One episode is one DE run on one problem instance: the policy picks every
individual's operators and parameters each generation, and the environment
pays out the normalised improvement of the best-so-far value. Rewards
telescope, so a full episode accumulates (y0 - yT) / (y0 - y_opt), which is
1 exactly when the optimum is reached.

Updates happen every ``n_steps`` generations: discounted bootstrapped
returns, batch-normalised advantages, then ``update_passes`` clipped
surrogate passes through the same Adam state, which persists across the
whole training run. Batches never span episode boundaries, so the return
recursion needs no done-masking beyond the terminal bootstrap.
"""

import csv
import dataclasses
import os
import time

import numpy as np

from . import de, encoding, nd, policy

# Denominator guard for the degenerate case y0_best == y_star (initial
# population already at the optimum).
REWARD_GUARD = 1e-12


def reward(y_prev_best, y_best, y0_best, y_star):
    """Normalised one-generation improvement of the incumbent."""
    return (y_prev_best - y_best) / max(y0_best - y_star, REWARD_GUARD)


@dataclasses.dataclass(frozen=True)
class TrainerConfig:
    """Training schedule and PPO hyperparameters (defaults: full protocol)."""

    epochs: int = 100
    n_steps: int = 10
    update_passes: int = 3
    gamma: float = 0.99
    learning_rate: float = 1e-3
    clip_ratio: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    n_pop: int = 100
    max_evals: int = 20000
    horizon: int = 200


@dataclasses.dataclass
class Transition:
    """One environment step as stored for the update."""

    observation: encoding.Observation
    sample: policy.ActionSample
    reward: float
    done: bool


class DeEnv:
    """DE episode wrapper: observations in, per-individual actions out.

    ``step`` accepts any list of IndividualAction, so the same environment
    serves the learned policy and the random-action baseline. The time
    stamp of an observation is the one-based index of the generation about
    to run, over the nominal horizon.
    """

    def __init__(self, problem, policy_config, trainer_config, rng):
        self.problem = problem
        self.policy_config = policy_config
        self.n_pop = trainer_config.n_pop
        self.max_evals = trainer_config.max_evals
        self.horizon = trainer_config.horizon
        self.rng = rng
        self.pop = None
        self.arch = None
        self.obs = None
        self.last_report = None

    def reset(self):
        self.pop = de.initialize(self.n_pop, self.problem, self.rng, max_evals=self.max_evals)
        self.arch = de.Archives(self.n_pop)
        self.obs = self._observe()
        return self.obs

    @property
    def done(self):
        return self.pop.exhausted or self.pop.gen >= self.horizon

    def _observe(self):
        cfg = self.policy_config
        return encoding.encode(
            self.pop.X,
            self.pop.Y,
            self.problem.lower,
            self.problem.upper,
            t=min(self.pop.gen + 1, self.horizon),
            horizon=self.horizon,
            eta=cfg.eta,
            no_time=cfg.no_time,
            minmax_fitness=cfg.minmax_fitness,
        )

    def step(self, actions):
        if self.done:
            raise RuntimeError("episode is finished")
        report = de.step(self.pop, self.arch, actions, self.problem, self.rng)
        self.last_report = report
        r = reward(
            report.y_prev_best, report.y_best, self.pop.init_best_y, self.problem.best_known
        )
        self.obs = self._observe()
        return self.obs, r, self.done


def rollout(env, policy_config, weights, n_steps, rng):
    """Up to ``n_steps`` policy-driven env steps plus the bootstrap value."""
    transitions = []
    for _ in range(n_steps):
        if env.done:
            break
        obs = env.obs
        sample = policy.act(policy_config, weights, obs, rng)
        _, r, done = env.step(sample.actions())
        transitions.append(Transition(observation=obs, sample=sample, reward=r, done=done))
    bootstrap = 0.0 if env.done else policy.state_value(policy_config, weights, env.obs)
    return transitions, bootstrap


def returns_and_advantages(transitions, bootstrap, gamma):
    """Discounted bootstrapped returns and batch-normalised advantages."""
    running = bootstrap
    returns = np.empty(len(transitions))
    for i in range(len(transitions) - 1, -1, -1):
        running = transitions[i].reward + gamma * running
        returns[i] = running
    values = np.array([tr.sample.value for tr in transitions])
    advantages = returns - values
    if len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return returns, advantages


def ppo_update(policy_config, weights, adam, transitions, returns, advantages, config):
    """``update_passes`` clipped-surrogate passes over one rollout batch.

    Returns per-pass diagnostics; the first pass sees importance ratios of
    exactly one because stored log probs are bit-identical recomputations.
    """
    if not transitions:
        raise ValueError("empty update batch")
    observations = [tr.observation for tr in transitions]
    samples = [tr.sample for tr in transitions]
    old_logp = nd.constant([s.log_prob for s in samples])
    adv = nd.constant(advantages)
    target = nd.constant(returns)
    params = policy.parameter_list(weights)

    diag = {"policy_loss": [], "value_loss": [], "entropy": [], "loss": [], "max_ratio_dev": []}
    for _ in range(config.update_passes):
        tape = nd.Tape()
        logp, entropy, value = policy.evaluate_actions(
            policy_config, weights, tape, observations, samples
        )
        ratio = nd.exp(tape, nd.sub(tape, logp, old_logp))
        plain = nd.mul(tape, ratio, adv)
        clipped = nd.mul(
            tape,
            nd.clip(tape, ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio),
            adv,
        )
        policy_loss = nd.scale(
            tape, nd.reduce_mean(tape, nd.minimum(tape, plain, clipped)), -1.0
        )
        value_loss = nd.reduce_mean(tape, nd.square(tape, nd.sub(tape, value, target)))
        mean_entropy = nd.reduce_mean(tape, entropy)
        loss = nd.add(
            tape,
            nd.add(tape, policy_loss, nd.scale(tape, value_loss, config.value_coef)),
            nd.scale(tape, mean_entropy, -config.entropy_coef),
        )

        stats = {
            "policy_loss": policy_loss.item(),
            "value_loss": value_loss.item(),
            "entropy": mean_entropy.item(),
            "loss": loss.item(),
            "max_ratio_dev": float(np.max(np.abs(ratio.data - 1.0))),
        }
        if not all(np.isfinite(v) for v in stats.values()):
            raise FloatingPointError(f"non-finite PPO loss: {stats}")
        grads = nd.backward(tape, loss, params)
        nd.adam_step(adam, params, grads)
        for key, val in stats.items():
            diag[key].append(val)
    return diag


def run_episode(env, policy_config, weights, rng, greedy=False):
    """One full episode without updates; returns the accumulated reward."""
    env.reset()
    total = 0.0
    while not env.done:
        sample = policy.act(policy_config, weights, env.obs, rng, greedy=greedy)
        _, r, _ = env.step(sample.actions())
        total += r
    return total


LOG_FIELDS = (
    "epoch",
    "instance",
    "accumulated_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "wall_time",
)


def _append_log_row(path, row):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new_file:
            writer.writeheader()
        writer.writerow(row)


def train(
    config,
    policy_config,
    problems,
    seed=0,
    weights=None,
    log_path=None,
    checkpoint_dir=None,
    checkpoint_every=1,
):
    """Full training loop: epochs x instances, updates every n_steps.

    Problems are visited in the given order every epoch. Returns the
    trained weights and the in-memory training log (one dict per
    (epoch, instance), also appended to ``log_path`` as CSV rows as they
    are produced). ``checkpoint_dir`` gets ``epoch_XXX.json`` files every
    ``checkpoint_every`` epochs plus ``final.json``.
    """
    if not problems:
        raise ValueError("empty training set")
    # Child stream tags: 0 weight init, 1 environment, 2 action sampling.
    root = nd.Rng(seed)
    if weights is None:
        weights = policy.init_weights(policy_config, root.spawn(0))
    adam = nd.AdamState(policy.parameter_list(weights), lr=config.learning_rate)
    log = []
    for epoch in range(config.epochs):
        for idx, problem in enumerate(problems):
            started = time.perf_counter()
            env = DeEnv(problem, policy_config, config, root.spawn(1, epoch, idx))
            act_rng = root.spawn(2, epoch, idx)
            env.reset()
            total_reward = 0.0
            pooled = {"policy_loss": [], "value_loss": [], "entropy": []}
            while not env.done:
                transitions, bootstrap = rollout(
                    env, policy_config, weights, config.n_steps, act_rng
                )
                returns, advantages = returns_and_advantages(
                    transitions, bootstrap, config.gamma
                )
                diag = ppo_update(
                    policy_config, weights, adam, transitions, returns, advantages, config
                )
                total_reward += sum(tr.reward for tr in transitions)
                for key in pooled:
                    pooled[key].extend(diag[key])
            row = {
                "epoch": epoch,
                "instance": problem.name,
                "accumulated_reward": total_reward,
                "policy_loss": float(np.mean(pooled["policy_loss"])),
                "value_loss": float(np.mean(pooled["value_loss"])),
                "entropy": float(np.mean(pooled["entropy"])),
                "wall_time": time.perf_counter() - started,
            }
            log.append(row)
            if log_path is not None:
                _append_log_row(log_path, row)
        if checkpoint_dir is not None and (epoch + 1) % checkpoint_every == 0:
            policy.save_checkpoint(
                f"{checkpoint_dir}/epoch_{epoch + 1:03d}.json", policy_config, weights
            )
    if checkpoint_dir is not None:
        policy.save_checkpoint(f"{checkpoint_dir}/final.json", policy_config, weights)
    return weights, log
