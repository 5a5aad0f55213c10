"""Policy network: shapes, gradients, sampling, ablations, checkpoints."""

import filecmp
import math

import numpy as np
import pytest

from decontrol import encoding, nd, policy
from oracle_utils import check_param_grad

FULL = policy.PolicyConfig()


def make_obs(rng, n_dim, n_pop, t=5, horizon=200, **kwargs):
    X = rng.uniform(-5.0, 5.0, size=(n_pop, n_dim))
    Y = rng.uniform(1e-3, 1e4, size=n_pop)
    return encoding.encode(X, Y, -5.0, 5.0, t=t, horizon=horizon, **kwargs)


def expected_param_count(mlp_extractor=False):
    # Independent arithmetic from the layer dimensions.
    embed = 3 * 64 + 64
    attn = (64 * 64 + 64) if mlp_extractor else 4 * (64 * 64 + 64)
    stage = attn + 2 * 64 + (64 * 64 + 64) + 2 * 64
    time = 1 * 16 + 16
    head = lambda width: (80 * 32 + 32) + (32 * width + width)
    actor = head(14) + head(3) + 2 * head(3) + 2 * head(2)
    critic = (80 * 16 + 16) + (16 * 8 + 8) + (8 * 1 + 1)
    return embed + 2 * stage + time + actor + critic


def test_param_count_matches_closed_form():
    assert policy.param_count(FULL) == expected_param_count() == 60284
    mlp = policy.PolicyConfig(mlp_extractor=True)
    assert policy.param_count(mlp) == expected_param_count(mlp_extractor=True)


def test_init_deterministic_and_bounded():
    w1 = policy.init_weights(FULL, nd.Rng(11))
    w2 = policy.init_weights(FULL, nd.Rng(11))
    assert set(w1) == set(policy.shape_table(FULL))
    for name in w1:
        assert np.array_equal(w1[name].data, w2[name].data)
    shapes = policy.shape_table(FULL)
    for name, arr in w1.items():
        assert arr.shape == shapes[name]
        if ".ln" in name:
            ref = 1.0 if name.endswith(".g") else 0.0
            assert np.all(arr.data == ref)
        else:
            fan_in = shapes[name][0] if len(shapes[name]) == 2 else None
            if fan_in is None:
                stem = name.rsplit(".", 1)[0]
                mates = [n for n in shapes if n.startswith(stem) and len(shapes[n]) == 2]
                fan_in = shapes[mates[0]][0] if mates else 64
            assert np.max(np.abs(arr.data)) <= 1.0 / math.sqrt(fan_in)
            if arr.data.size > 1:
                assert np.ptp(arr.data) > 0.0
    w3 = policy.init_weights(FULL, nd.Rng(12))
    assert not np.array_equal(w1["embed.w"].data, w3["embed.w"].data)


def test_positional_encoding_closed_form():
    table = policy.positional_encoding(6, 8)
    for p in range(6):
        for i in range(4):
            angle = p / 10000.0 ** (2 * i / 8)
            assert table[p, 2 * i] == pytest.approx(math.sin(angle), abs=1e-15)
            assert table[p, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-15)
    assert np.array_equal(table[0], np.tile([0.0, 1.0], 4))


def test_feature_shapes_and_time_block():
    rng = nd.Rng(0)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 4, 7, t=50, horizon=200)
    dv = policy.features(FULL, w, obs)
    assert dv.shape == (7, 80)
    # Time embedding is the same affine map of s_time tiled over individuals.
    et = 0.25 * w["time.w"].data + w["time.b"].data
    assert np.allclose(dv.data[:, 64:], et, atol=1e-12)
    assert np.ptp(dv.data[:, :64], axis=0).max() > 0.0


def test_head_output_ranges():
    rng = nd.Rng(1)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 6, 20)
    heads = policy.head_forward(FULL, w, policy.features(FULL, w, obs))
    assert heads["logits_m"].shape == (20, 14)
    assert heads["logits_x"].shape == (20, 3)
    assert heads["value"].shape == (20, 1)
    for key in ("mu_m", "mu_x"):
        assert np.all((heads[key].data > 0.0) & (heads[key].data < 1.0))
    for key in ("sigma_m", "sigma_x"):
        assert np.all(heads[key].data > 0.0)
        assert np.all(heads[key].data <= 0.5)
    probs = nd.softmax(None, heads["logits_m"]).data
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("n_pop,n_dim", [(5, 2), (20, 10), (50, 20)])
def test_feature_permutation_equivariance(n_pop, n_dim):
    rng = nd.Rng(100 + n_pop)
    w = policy.init_weights(FULL, rng)
    X = rng.uniform(-5.0, 5.0, size=(n_pop, n_dim))
    Y = rng.uniform(1e-2, 1e3, size=n_pop)
    perm = rng.permutation(n_pop)
    obs = encoding.encode(X, Y, -5.0, 5.0, t=9, horizon=200)
    obs_p = encoding.encode(X[perm], Y[perm], -5.0, 5.0, t=9, horizon=200)
    dv = policy.features(FULL, w, obs).data
    dv_p = policy.features(FULL, w, obs_p).data
    assert np.max(np.abs(dv_p - dv[perm])) < 1e-9
    heads = policy.head_forward(FULL, w, policy.features(FULL, w, obs))
    heads_p = policy.head_forward(FULL, w, policy.features(FULL, w, obs_p))
    assert np.max(np.abs(heads_p["logits_m"].data - heads["logits_m"].data[perm])) < 1e-9
    assert np.max(np.abs(heads_p["value"].data - heads["value"].data[perm])) < 1e-9


def test_act_replays_documented_draw_order():
    rng = nd.Rng(5)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 3, 6)
    sample = policy.act(FULL, w, obs, nd.Rng(77))

    heads = policy.head_forward(FULL, w, policy.features(FULL, w, obs))
    lsm_m = nd.log_softmax(None, heads["logits_m"]).data
    lsm_x = nd.log_softmax(None, heads["logits_x"]).data
    replay = nd.Rng(77)
    u_m = replay.uniform(size=6)
    u_x = replay.uniform(size=6)
    z_m = replay.normal(size=(6, 3))
    z_x = replay.normal(size=(6, 2))
    op_m = np.array(
        [np.searchsorted(np.cumsum(np.exp(lsm_m[i])), u_m[i], side="right") for i in range(6)]
    )
    op_x = np.array(
        [np.searchsorted(np.cumsum(np.exp(lsm_x[i])), u_x[i], side="right") for i in range(6)]
    )
    assert np.array_equal(sample.op_m, np.minimum(op_m, 13))
    assert np.array_equal(sample.op_x, np.minimum(op_x, 2))
    assert np.array_equal(sample.raw_m, heads["mu_m"].data + heads["sigma_m"].data * z_m)
    assert np.array_equal(sample.raw_x, heads["mu_x"].data + heads["sigma_x"].data * z_x)

    rows = np.arange(6)
    lp = lsm_m[rows, sample.op_m].sum() + lsm_x[rows, sample.op_x].sum()
    for raw, mu, sg in (
        (sample.raw_m, heads["mu_m"].data, heads["sigma_m"].data),
        (sample.raw_x, heads["mu_x"].data, heads["sigma_x"].data),
    ):
        z = (raw - mu) / sg
        lp += np.sum(-0.5 * z * z - np.log(sg) - 0.5 * math.log(2 * math.pi))
    assert sample.log_prob == pytest.approx(lp, rel=1e-14)
    assert sample.value == pytest.approx(float(heads["value"].data.mean()), rel=1e-14)


def test_act_greedy_takes_modes():
    rng = nd.Rng(6)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 3, 8)
    sample = policy.act(FULL, w, obs, nd.Rng(0), greedy=True)
    heads = policy.head_forward(FULL, w, policy.features(FULL, w, obs))
    assert np.array_equal(sample.op_m, np.argmax(heads["logits_m"].data, axis=1))
    assert np.array_equal(sample.op_x, np.argmax(heads["logits_x"].data, axis=1))
    assert np.array_equal(sample.raw_m, heads["mu_m"].data)
    assert np.array_equal(sample.raw_x, heads["mu_x"].data)


def test_sampling_frequencies_match_probabilities():
    # The categorical kernel. 3-sigma band around each class probability.
    probs = np.array([[0.5, 0.2, 0.2, 0.1], [0.05, 0.05, 0.45, 0.45]])
    log_probs = np.log(probs)
    rng = nd.Rng(99)
    n = 100_000
    counts = np.zeros((2, 4))
    draws0 = rng.uniform(size=n)
    draws1 = rng.uniform(size=n)
    for u0, u1 in zip(draws0, draws1):
        picked = policy._sample_rows(log_probs, np.array([u0, u1]))
        counts[0, picked[0]] += 1
        counts[1, picked[1]] += 1
    freq = counts / n
    sigma = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(freq - probs) <= 3.0 * sigma + 1e-12)


def test_actions_clamp_but_raws_survive():
    sample = policy.ActionSample(
        op_m=np.array([0, 13]),
        op_x=np.array([2, 0]),
        raw_m=np.array([[-0.2, 0.5, 1.3], [0.0, 1.0, 0.4]]),
        raw_x=np.array([[1.7, 0.25], [-0.1, 0.99]]),
        log_prob=0.0,
        value=0.0,
    )
    acts = sample.actions()
    assert acts[0].mutation_op == 1 and acts[1].mutation_op == 14
    assert acts[0].crossover_op == 3 and acts[1].crossover_op == 1
    assert np.array_equal(acts[0].mutation_params, [0.0, 0.5, 1.0])
    assert np.array_equal(acts[0].crossover_params, [1.0, 0.25])
    assert sample.raw_m[0, 2] == 1.3  # raw draw kept for the density


def test_evaluate_matches_act_bitwise():
    rng = nd.Rng(8)
    w = policy.init_weights(FULL, rng)
    obs_list, samples = [], []
    act_rng = nd.Rng(21)
    for k in range(4):
        obs = make_obs(rng, 3, 5, t=k + 1)
        obs_list.append(obs)
        samples.append(policy.act(FULL, w, obs, act_rng))
    tape = nd.Tape()
    lp, ent, val = policy.evaluate_actions(FULL, w, tape, obs_list, samples)
    assert lp.shape == ent.shape == val.shape == (4,)
    for k in range(4):
        assert lp.data[k] == samples[k].log_prob
        assert val.data[k] == samples[k].value


def test_evaluate_entropy_matches_numpy_oracle():
    rng = nd.Rng(9)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 4, 6)
    sample = policy.act(FULL, w, obs, nd.Rng(2))
    _, ent, _ = policy.evaluate_actions(FULL, w, nd.Tape(), [obs], [sample])

    heads = policy.head_forward(FULL, w, policy.features(FULL, w, obs))
    expected = 0.0
    for key in ("logits_m", "logits_x"):
        p = nd.softmax(None, heads[key]).data
        expected += -(p * np.log(p)).sum() / 6
    c = 0.5 * math.log(2 * math.pi * math.e)
    expected += 5 * c
    expected += (np.log(heads["sigma_m"].data).sum() + np.log(heads["sigma_x"].data).sum()) / 6
    assert ent.data[0] == pytest.approx(expected, rel=1e-12)


def test_state_value_matches_evaluate():
    rng = nd.Rng(10)
    w = policy.init_weights(FULL, rng)
    obs = make_obs(rng, 5, 9)
    sample = policy.act(FULL, w, obs, nd.Rng(1))
    _, _, val = policy.evaluate_actions(FULL, w, nd.Tape(), [obs], [sample])
    assert policy.state_value(FULL, w, obs) == val.data[0]


@pytest.mark.parametrize("config", [FULL, policy.PolicyConfig(mlp_extractor=True)])
def test_end_to_end_gradients_match_finite_differences(config):
    rng = nd.Rng(31)
    w = policy.init_weights(config, rng)
    obs = make_obs(rng, 3, 5)
    sample = policy.act(config, w, obs, nd.Rng(4))
    params = policy.parameter_list(w)

    def build():
        tape = nd.Tape()
        lp, ent, val = policy.evaluate_actions(config, w, tape, [obs], [sample])
        loss = nd.add(
            tape,
            nd.add(tape, nd.reduce_sum(tape, lp), nd.reduce_sum(tape, nd.square(tape, val))),
            nd.scale(tape, nd.reduce_sum(tape, ent), 0.37),
        )
        return tape, loss, params

    # h balances truncation against roundoff for a loss of magnitude ~15.
    probe = np.random.default_rng(5)
    worst = 0.0
    for name in sorted(w):
        err = check_param_grad(build, w[name], h=1e-5, coords=3, rng=probe)
        worst = max(worst, err)
    assert worst < 1e-3


def test_no_time_zeroes_block_and_gradient():
    config = policy.PolicyConfig(no_time=True)
    rng = nd.Rng(13)
    w = policy.init_weights(config, rng)
    obs = make_obs(rng, 3, 6, t=42)
    dv = policy.features(config, w, obs)
    assert np.all(dv.data[:, 64:] == 0.0)
    sample = policy.act(config, w, obs, nd.Rng(3))
    tape = nd.Tape()
    lp, _, _ = policy.evaluate_actions(config, w, tape, [obs], [sample])
    params = policy.parameter_list(w)
    grads = nd.backward(tape, nd.reduce_sum(tape, lp), params)
    by_name = dict(zip(sorted(w), grads))
    assert np.all(by_name["time.w"] == 0.0)
    assert np.all(by_name["time.b"] == 0.0)
    assert np.any(by_name["embed.w"] != 0.0)


def test_no_time_also_covers_missing_stamp():
    obs = make_obs(nd.Rng(14), 3, 4, no_time=True)
    assert obs.s_time is None
    w = policy.init_weights(FULL, nd.Rng(14))
    dv = policy.features(FULL, w, obs)
    assert np.all(dv.data[:, 64:] == 0.0)


def test_mlp_extractor_layout():
    config = policy.PolicyConfig(mlp_extractor=True)
    shapes = policy.shape_table(config)
    assert "s1.attn.w" in shapes and "s1.attn.wq" not in shapes
    assert shapes["s1.attn.w"] == (64, 64)
    rng = nd.Rng(15)
    w = policy.init_weights(config, rng)
    obs = make_obs(rng, 4, 6)
    dv = policy.features(config, w, obs)
    assert dv.shape == (6, 80)
    policy.act(config, w, obs, nd.Rng(0))


def test_dimension_above_positional_table_rejected():
    config = policy.PolicyConfig(max_dim=4)
    rng = nd.Rng(16)
    w = policy.init_weights(config, rng)
    obs = make_obs(rng, 5, 6)
    with pytest.raises(ValueError, match="positional table"):
        policy.features(config, w, obs)


def test_checkpoint_round_trip_and_byte_identical_resave(tmp_path):
    config = policy.PolicyConfig(no_time=True, eta=8.0)
    w = policy.init_weights(config, nd.Rng(17))
    first = tmp_path / "ckpt.json"
    second = tmp_path / "ckpt2.json"
    policy.save_checkpoint(first, config, w)
    loaded_config, loaded = policy.load_checkpoint(first)
    assert loaded_config == config
    for name in w:
        assert np.array_equal(loaded[name].data, w[name].data)
    policy.save_checkpoint(second, loaded_config, loaded)
    assert filecmp.cmp(first, second, shallow=False)


def test_checkpoint_rejects_corruption(tmp_path):
    config = policy.PolicyConfig()
    w = policy.init_weights(config, nd.Rng(18))
    path = tmp_path / "ckpt.json"
    policy.save_checkpoint(path, config, w)
    import json

    good = json.loads(path.read_text())

    def dump(payload, name):
        p = tmp_path / name
        p.write_text(json.dumps(payload))
        return p

    bad = tmp_path / "garbage.json"
    bad.write_text("{not json")
    with pytest.raises(policy.CheckpointError, match="cannot read"):
        policy.load_checkpoint(bad)
    with pytest.raises(policy.CheckpointError, match="cannot read"):
        policy.load_checkpoint(tmp_path / "absent.json")

    wrong_tag = dict(good, format="something-else")
    with pytest.raises(policy.CheckpointError, match="not a policy checkpoint"):
        policy.load_checkpoint(dump(wrong_tag, "tag.json"))

    wrong_version = dict(good, format_version=99)
    with pytest.raises(policy.CheckpointError, match="version"):
        policy.load_checkpoint(dump(wrong_version, "version.json"))

    extra_field = dict(good, config=dict(good["config"], bogus=1))
    with pytest.raises(policy.CheckpointError, match="bogus"):
        policy.load_checkpoint(dump(extra_field, "extra.json"))

    short_config = dict(good, config={k: v for k, v in good["config"].items() if k != "eta"})
    with pytest.raises(policy.CheckpointError, match="eta"):
        policy.load_checkpoint(dump(short_config, "short.json"))

    missing_arr = dict(good, arrays={k: v for k, v in good["arrays"].items() if k != "embed.w"})
    with pytest.raises(policy.CheckpointError, match="embed.w"):
        policy.load_checkpoint(dump(missing_arr, "missing.json"))

    extra_arr = dict(good, arrays=dict(good["arrays"], rogue={"shape": [1], "data": [0.0]}))
    with pytest.raises(policy.CheckpointError, match="rogue"):
        policy.load_checkpoint(dump(extra_arr, "rogue.json"))

    bad_shape = dict(good, arrays=dict(good["arrays"]))
    bad_shape["arrays"]["embed.w"] = {"shape": [64, 3], "data": good["arrays"]["embed.w"]["data"]}
    with pytest.raises(policy.CheckpointError, match="shape"):
        policy.load_checkpoint(dump(bad_shape, "shape.json"))

    bad_count = dict(good, arrays=dict(good["arrays"]))
    bad_count["arrays"]["embed.b"] = {"shape": [64], "data": [0.0] * 63}
    with pytest.raises(policy.CheckpointError, match="element count"):
        policy.load_checkpoint(dump(bad_count, "count.json"))


def test_save_rejects_mismatched_weight_dict(tmp_path):
    config = policy.PolicyConfig()
    w = policy.init_weights(config, nd.Rng(19))
    del w["embed.b"]
    with pytest.raises(policy.CheckpointError, match="weight names"):
        policy.save_checkpoint(tmp_path / "x.json", config, w)


def test_parameter_list_order_is_name_sorted():
    w = policy.init_weights(FULL, nd.Rng(20))
    listed = policy.parameter_list(w)
    assert [id(a) for a in listed] == [id(w[n]) for n in sorted(w)]
