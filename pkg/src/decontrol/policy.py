"""Attention-based landscape feature extractor and per-individual control heads.

The network maps an :class:`~decontrol.encoding.Observation` to, for every
individual in the population, a categorical distribution over the 14 mutation
operators, one over the 3 crossover operators, and diagonal Gaussians over
the (3 mutation + 2 crossover) operator parameters, plus a scalar state value.

Feature extraction runs attention twice: first across the population (each
coordinate axis is a batch entry, individuals are tokens), then across
coordinate axes (after a transpose and additive sine/cosine positional
encoding). Mean-pooling over axes and concatenating a 16-dim embedding of
the normalised time stamp yields an 80-dim decision vector per individual.
Both attention stages use post-norm residual blocks: ``LN(f(h) + h)``.

All weights live in a flat ``dict`` keyed by dotted names so the optimizer
and the JSON checkpoint format can treat the network as a list of named
arrays. ``act`` runs the same forward pass without a tape; the log
probability it stores is therefore bit-identical to what
``evaluate_actions`` recomputes for the unchanged weights, making the first
importance ratio of an update exactly one.
"""

import dataclasses
import json
import math

import numpy as np

from . import nd
from .de import IndividualAction, N_CROSSOVER_OPS, N_MUTATION_OPS

N_MUTATION_PARAMS = 3
N_CROSSOVER_PARAMS = 2

# Lower bound added to the scaled sigmoid so sigma stays strictly positive
# and log densities stay finite no matter how far the head drifts.
SIGMA_FLOOR = 1e-6

CHECKPOINT_FORMAT = "decontrol-policy"
CHECKPOINT_VERSION = 1

_LOG_2PI = math.log(2.0 * math.pi)
_ENTROPY_CONST = 0.5 * math.log(2.0 * math.pi * math.e)


class CheckpointError(Exception):
    """Raised when a checkpoint file cannot be parsed or validated."""


@dataclasses.dataclass(frozen=True)
class PolicyConfig:
    """Architecture and ablation switches for the control policy.

    ``no_time`` zeroes the time embedding, ``minmax_fitness`` selects
    min-max fitness normalisation in the observation encoder, and
    ``mlp_extractor`` swaps each attention block for a per-token linear
    layer of the same width. The flags are carried here so a checkpoint
    records exactly which variant produced it.
    """

    feature_dim: int = 64
    n_heads: int = 4
    time_dim: int = 16
    actor_hidden: int = 32
    critic_hidden: tuple = (16, 8)
    max_dim: int = 64
    sigma_scale: float = 0.5
    eta: float = 10.0
    no_time: bool = False
    minmax_fitness: bool = False
    mlp_extractor: bool = False


def _spec(config):
    """Ordered (name, shape, init) table covering every weight array.

    ``init`` is ``("uniform", bound)`` for linear weights and biases,
    ``("ones",)`` / ``("zeros",)`` for layer-norm gains and shifts. The
    order is fixed so weight initialisation consumes the random stream
    deterministically.
    """
    f = config.feature_dim
    rows = [("embed.w", (3, f)), ("embed.b", (f,))]
    for stage in ("s1", "s2"):
        if config.mlp_extractor:
            rows += [(f"{stage}.attn.w", (f, f)), (f"{stage}.attn.b", (f,))]
        else:
            for proj in ("wq", "wk", "wv", "wo"):
                rows.append((f"{stage}.attn.{proj}", (f, f)))
                rows.append((f"{stage}.attn.b{proj[1]}", (f,)))
        rows += [
            (f"{stage}.ln1.g", (f,)),
            (f"{stage}.ln1.b", (f,)),
            (f"{stage}.ffn.w", (f, f)),
            (f"{stage}.ffn.b", (f,)),
            (f"{stage}.ln2.g", (f,)),
            (f"{stage}.ln2.b", (f,)),
        ]
    rows += [("time.w", (1, config.time_dim)), ("time.b", (config.time_dim,))]

    dv = f + config.time_dim
    a = config.actor_hidden
    for head, width in (
        ("op_m", N_MUTATION_OPS),
        ("op_x", N_CROSSOVER_OPS),
        ("mu_m", N_MUTATION_PARAMS),
        ("sg_m", N_MUTATION_PARAMS),
        ("mu_x", N_CROSSOVER_PARAMS),
        ("sg_x", N_CROSSOVER_PARAMS),
    ):
        rows += [
            (f"{head}.h.w", (dv, a)),
            (f"{head}.h.b", (a,)),
            (f"{head}.o.w", (a, width)),
            (f"{head}.o.b", (width,)),
        ]
    widths = (dv,) + tuple(config.critic_hidden) + (1,)
    for i in range(len(widths) - 1):
        rows += [
            (f"critic.l{i + 1}.w", (widths[i], widths[i + 1])),
            (f"critic.l{i + 1}.b", (widths[i + 1],)),
        ]

    table = []
    fan_in = {}
    for name, shape in rows:
        if ".ln" in name:
            init = ("ones",) if name.endswith(".g") else ("zeros",)
        elif len(shape) == 2:
            fan_in[name.rsplit(".", 1)[0]] = shape[0]
            init = ("uniform", 1.0 / math.sqrt(shape[0]))
        else:
            # Bias bound follows the fan-in of its layer's weight matrix.
            init = ("uniform", 1.0 / math.sqrt(fan_in[name.rsplit(".", 1)[0]]))
        table.append((name, shape, init))
    return table


def shape_table(config):
    """Mapping of weight name to array shape for this configuration."""
    return {name: shape for name, shape, _ in _spec(config)}


def param_count(config):
    return sum(int(np.prod(shape)) for shape in shape_table(config).values())


def init_weights(config, rng):
    """Fresh weight dict; linear layers U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    weights = {}
    for name, shape, init in _spec(config):
        if init[0] == "ones":
            data = np.ones(shape)
        elif init[0] == "zeros":
            data = np.zeros(shape)
        else:
            data = rng.uniform(-init[1], init[1], size=shape)
        weights[name] = nd.Array(data)
    return weights


def parameter_list(weights):
    """Weights as a name-sorted list, the canonical optimizer order."""
    return [weights[name] for name in sorted(weights)]


def positional_encoding(n_rows, dim):
    """Classic interleaved sine/cosine table, one row per token position."""
    pos = np.arange(n_rows, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / dim)
    table = np.zeros((n_rows, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _attention(config, weights, stage):
    w = weights
    return nd.AttentionWeights(
        w[f"{stage}.attn.wq"], w[f"{stage}.attn.bq"],
        w[f"{stage}.attn.wk"], w[f"{stage}.attn.bk"],
        w[f"{stage}.attn.wv"], w[f"{stage}.attn.bv"],
        w[f"{stage}.attn.wo"], w[f"{stage}.attn.bo"],
        n_heads=config.n_heads,
    )


def _stage(config, weights, stage, h, tape):
    if config.mlp_extractor:
        mixed = nd.linear(tape, h, weights[f"{stage}.attn.w"], weights[f"{stage}.attn.b"])
    else:
        mixed = nd.multi_head_self_attention(tape, h, _attention(config, weights, stage))
    h = nd.layer_norm(tape, nd.add(tape, mixed, h), weights[f"{stage}.ln1.g"], weights[f"{stage}.ln1.b"])
    fed = nd.linear(tape, h, weights[f"{stage}.ffn.w"], weights[f"{stage}.ffn.b"])
    return nd.layer_norm(tape, nd.add(tape, fed, h), weights[f"{stage}.ln2.g"], weights[f"{stage}.ln2.b"])


def features(config, weights, obs, tape=None):
    """Decision vectors, shape (n_pop, feature_dim + time_dim).

    Rows are equivariant under permutation of individuals: attention,
    mean-pooling over axes and the tiled time embedding all commute with
    reordering the population.
    """
    n_dim, n_pop = obs.dim, obs.n_pop
    if n_dim > config.max_dim:
        raise ValueError(
            f"problem dimension {n_dim} exceeds positional table size {config.max_dim}"
        )
    h = nd.linear(tape, nd.constant(obs.features), weights["embed.w"], weights["embed.b"])
    h = _stage(config, weights, "s1", h, tape)
    h = nd.transpose(tape, h, (1, 0, 2))
    pos = nd.constant(positional_encoding(config.max_dim, config.feature_dim)[:n_dim])
    h = nd.add(tape, h, pos)
    h = _stage(config, weights, "s2", h, tape)
    pooled = nd.reduce_mean(tape, h, axis=1)

    if config.no_time or obs.s_time is None:
        timed = nd.constant(np.zeros((n_pop, config.time_dim)))
    else:
        stamp = nd.linear(
            tape, nd.constant([[obs.s_time]]), weights["time.w"], weights["time.b"]
        )
        timed = nd.matmul(tape, nd.constant(np.ones((n_pop, 1))), stamp)
    return nd.concat(tape, [pooled, timed], axis=1)


def _actor_mlp(weights, head, dv, tape):
    hidden = nd.relu(tape, nd.linear(tape, dv, weights[f"{head}.h.w"], weights[f"{head}.h.b"]))
    return nd.linear(tape, hidden, weights[f"{head}.o.w"], weights[f"{head}.o.b"])


def _sigma(config, z, tape):
    scaled = nd.scale(tape, nd.sigmoid(tape, z), config.sigma_scale - SIGMA_FLOOR)
    return nd.add(tape, scaled, nd.constant(SIGMA_FLOOR))


def head_forward(config, weights, dv, tape=None):
    """All head outputs for a batch of decision vectors.

    Returns a dict with operator logits (not yet normalised), parameter
    distribution moments (``mu`` in (0, 1) via sigmoid, ``sigma`` in
    (0, sigma_scale]), and per-individual critic values of shape (n, 1).
    """
    out = {
        "logits_m": _actor_mlp(weights, "op_m", dv, tape),
        "logits_x": _actor_mlp(weights, "op_x", dv, tape),
        "mu_m": nd.sigmoid(tape, _actor_mlp(weights, "mu_m", dv, tape)),
        "sigma_m": _sigma(config, _actor_mlp(weights, "sg_m", dv, tape), tape),
        "mu_x": nd.sigmoid(tape, _actor_mlp(weights, "mu_x", dv, tape)),
        "sigma_x": _sigma(config, _actor_mlp(weights, "sg_x", dv, tape), tape),
    }
    h = dv
    n_layers = len(config.critic_hidden) + 1
    for i in range(n_layers):
        h = nd.linear(tape, h, weights[f"critic.l{i + 1}.w"], weights[f"critic.l{i + 1}.b"])
        if i < n_layers - 1:
            h = nd.relu(tape, h)
    out["value"] = h
    return out


@dataclasses.dataclass
class ActionSample:
    """One sampled joint action plus what PPO needs to reuse it.

    ``op_m`` / ``op_x`` hold zero-based operator indices; ``raw_m`` /
    ``raw_x`` hold the Gaussian draws before clamping so the stored
    ``log_prob`` (summed over individuals and action components) matches
    the density actually sampled from. ``actions`` applies the [0, 1]
    clamp and the one-based operator numbering the variation engine uses.
    """

    op_m: np.ndarray
    op_x: np.ndarray
    raw_m: np.ndarray
    raw_x: np.ndarray
    log_prob: float
    value: float

    def actions(self):
        params_m = np.clip(self.raw_m, 0.0, 1.0)
        params_x = np.clip(self.raw_x, 0.0, 1.0)
        return [
            IndividualAction(
                mutation_op=int(self.op_m[i]) + 1,
                crossover_op=int(self.op_x[i]) + 1,
                mutation_params=params_m[i],
                crossover_params=params_x[i],
            )
            for i in range(len(self.op_m))
        ]


def _sample_rows(log_probs, draws):
    cumulative = np.cumsum(np.exp(log_probs), axis=1)
    picked = np.empty(len(draws), dtype=np.int64)
    for i, u in enumerate(draws):
        picked[i] = min(
            np.searchsorted(cumulative[i], u, side="right"), log_probs.shape[1] - 1
        )
    return picked


def _gauss_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * _LOG_2PI


def act(config, weights, obs, rng, greedy=False):
    """Sample a joint action for every individual (tape-free forward).

    Random draws consume the stream in a fixed order: mutation-operator
    uniforms, crossover-operator uniforms, mutation-parameter normals,
    crossover-parameter normals. ``greedy`` takes argmax operators and
    the Gaussian means instead, still reporting the log density at the
    chosen point.
    """
    dv = features(config, weights, obs)
    heads = head_forward(config, weights, dv)
    n = obs.n_pop
    lsm_m = nd.log_softmax(None, heads["logits_m"]).data
    lsm_x = nd.log_softmax(None, heads["logits_x"]).data
    mu_m, sigma_m = heads["mu_m"].data, heads["sigma_m"].data
    mu_x, sigma_x = heads["mu_x"].data, heads["sigma_x"].data

    if greedy:
        op_m = np.argmax(lsm_m, axis=1)
        op_x = np.argmax(lsm_x, axis=1)
        raw_m = mu_m.copy()
        raw_x = mu_x.copy()
    else:
        op_m = _sample_rows(lsm_m, rng.uniform(size=n))
        op_x = _sample_rows(lsm_x, rng.uniform(size=n))
        raw_m = mu_m + sigma_m * rng.normal(size=mu_m.shape)
        raw_x = mu_x + sigma_x * rng.normal(size=mu_x.shape)

    # Same operations and association order as evaluate_actions, so the
    # stored log prob is bit-identical to the tape recomputation.
    rows = np.arange(n)
    hot_m = np.zeros_like(lsm_m)
    hot_m[rows, op_m] = 1.0
    hot_x = np.zeros_like(lsm_x)
    hot_x[rows, op_x] = 1.0
    log_prob = (np.sum(hot_m * lsm_m) + np.sum(hot_x * lsm_x)) + (
        np.sum(_gauss_logpdf(raw_m, mu_m, sigma_m))
        + np.sum(_gauss_logpdf(raw_x, mu_x, sigma_x))
    )
    value = float(heads["value"].data.mean())
    return ActionSample(
        op_m=op_m, op_x=op_x, raw_m=raw_m, raw_x=raw_x,
        log_prob=float(log_prob), value=value,
    )


def state_value(config, weights, obs):
    """Critic value of a state (mean of per-individual values)."""
    dv = features(config, weights, obs)
    heads = head_forward(config, weights, dv)
    return float(heads["value"].data.mean())


def _one_hot(indices, width):
    hot = np.zeros((len(indices), width))
    hot[np.arange(len(indices)), indices] = 1.0
    return nd.constant(hot)


def evaluate_actions(config, weights, tape, observations, samples):
    """Recompute log probs, entropies and values for stored transitions.

    Returns three tape Arrays of shape (batch,): total log probability of
    each stored joint action under the current weights, mean
    per-individual entropy of the four action distributions, and the
    critic value. This is the differentiable path PPO updates through.
    """
    log_probs, entropies, values = [], [], []
    for obs, sample in zip(observations, samples):
        n = obs.n_pop
        dv = features(config, weights, obs, tape)
        heads = head_forward(config, weights, dv, tape)
        lsm_m = nd.log_softmax(tape, heads["logits_m"])
        lsm_x = nd.log_softmax(tape, heads["logits_x"])

        lp = nd.add(
            tape,
            nd.add(
                tape,
                nd.reduce_sum(tape, nd.mul(tape, _one_hot(sample.op_m, N_MUTATION_OPS), lsm_m)),
                nd.reduce_sum(tape, nd.mul(tape, _one_hot(sample.op_x, N_CROSSOVER_OPS), lsm_x)),
            ),
            nd.add(
                tape,
                nd.reduce_sum(
                    tape,
                    nd.gaussian_log_prob(
                        tape, nd.constant(sample.raw_m), heads["mu_m"], heads["sigma_m"]
                    ),
                ),
                nd.reduce_sum(
                    tape,
                    nd.gaussian_log_prob(
                        tape, nd.constant(sample.raw_x), heads["mu_x"], heads["sigma_x"]
                    ),
                ),
            ),
        )

        cat_m = nd.scale(
            tape,
            nd.reduce_sum(tape, nd.mul(tape, nd.softmax(tape, heads["logits_m"]), lsm_m)),
            -1.0 / n,
        )
        cat_x = nd.scale(
            tape,
            nd.reduce_sum(tape, nd.mul(tape, nd.softmax(tape, heads["logits_x"]), lsm_x)),
            -1.0 / n,
        )
        gauss = nd.scale(
            tape,
            nd.add(
                tape,
                nd.reduce_sum(tape, nd.log(tape, heads["sigma_m"])),
                nd.reduce_sum(tape, nd.log(tape, heads["sigma_x"])),
            ),
            1.0 / n,
        )
        const = nd.constant((N_MUTATION_PARAMS + N_CROSSOVER_PARAMS) * _ENTROPY_CONST)
        ent = nd.add(tape, nd.add(tape, cat_m, cat_x), nd.add(tape, gauss, const))

        log_probs.append(nd.reshape(tape, lp, (1,)))
        entropies.append(nd.reshape(tape, ent, (1,)))
        values.append(nd.reshape(tape, nd.reduce_mean(tape, heads["value"]), (1,)))
    return (
        nd.concat(tape, log_probs, axis=0),
        nd.concat(tape, entropies, axis=0),
        nd.concat(tape, values, axis=0),
    )


def save_checkpoint(path, config, weights):
    """Write config and weights to a JSON checkpoint.

    Keys are sorted and floats serialised by repr, so saving unchanged
    weights reproduces the file byte for byte.
    """
    expected = shape_table(config)
    if set(weights) != set(expected):
        raise CheckpointError("weight names do not match the configuration")
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": {
            **{
                field.name: getattr(config, field.name)
                for field in dataclasses.fields(PolicyConfig)
                if field.name != "critic_hidden"
            },
            "critic_hidden": list(config.critic_hidden),
        },
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.data.ravel().tolist()}
            for name, arr in weights.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint back into (config, weights), validating shapes."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint: {err}") from err
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a policy checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )

    raw_config = payload.get("config")
    if not isinstance(raw_config, dict):
        raise CheckpointError("checkpoint missing config block")
    known = {field.name for field in dataclasses.fields(PolicyConfig)}
    unknown = set(raw_config) - known
    if unknown:
        raise CheckpointError(f"unknown config field {sorted(unknown)[0]!r}")
    missing = known - set(raw_config)
    if missing:
        raise CheckpointError(f"missing config field {sorted(missing)[0]!r}")
    raw_config = dict(raw_config)
    raw_config["critic_hidden"] = tuple(raw_config["critic_hidden"])
    config = PolicyConfig(**raw_config)

    arrays = payload.get("arrays")
    if not isinstance(arrays, dict):
        raise CheckpointError("checkpoint missing arrays block")
    expected = shape_table(config)
    for name in sorted(set(arrays) - set(expected)):
        raise CheckpointError(f"unexpected array {name!r}")
    for name in sorted(set(expected) - set(arrays)):
        raise CheckpointError(f"missing array {name!r}")
    weights = {}
    for name, shape in expected.items():
        entry = arrays[name]
        if list(entry.get("shape", [])) != list(shape):
            raise CheckpointError(
                f"array {name!r} has shape {entry.get('shape')}, expected {list(shape)}"
            )
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"array {name!r} has wrong element count")
        weights[name] = nd.Array(data.reshape(shape))
    return config, weights
