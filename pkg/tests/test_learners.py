import itertools

import numpy as np
import pytest

from taskcomm import nn
from taskcomm.codec import CodecConfig
from taskcomm.learners import (
    DqnLearner,
    LearnerConfig,
    MonotonicMixer,
    TeamLearner,
    dqn_target,
    epsilon_greedy,
    epsilon_schedule,
    qmix_mix,
    target_sync,
)
from taskcomm.replay import ReplayBuffer
from oracles import finite_difference, relative_error


# -- replay buffer --

def scalar_buffer(capacity):
    return ReplayBuffer(capacity, {"x": ((), np.float64)})


def test_buffer_evicts_oldest_first():
    buf = scalar_buffer(2)
    for v in (1.0, 2.0, 3.0):
        buf.push({"x": v})
    assert set(buf.column("x")) == {2.0, 3.0}
    assert len(buf) == 2


def test_buffer_size_never_exceeds_capacity():
    buf = scalar_buffer(5)
    for v in range(100):
        buf.push({"x": float(v)})
        assert len(buf) <= 5


def test_push_then_sample_single():
    buf = scalar_buffer(4)
    buf.push({"x": 42.0})
    batch = buf.sample(1, np.random.default_rng(0))
    assert batch["x"][0] == 42.0


def test_sampling_without_replacement_is_uniform():
    buf = scalar_buffer(20)
    for v in range(20):
        buf.push({"x": float(v)})
    rng = np.random.default_rng(1)
    counts = np.zeros(20)
    draws = 20_000
    for _ in range(draws):
        batch = buf.sample(5, rng)
        counts[batch["x"].astype(int)] += 1
    inclusion = counts / draws
    assert np.all(np.abs(inclusion - 0.25) < 0.02)


def test_full_batch_is_a_permutation():
    buf = scalar_buffer(8)
    for v in range(8):
        buf.push({"x": float(v)})
    batch = buf.sample(8, np.random.default_rng(2))
    assert sorted(batch["x"]) == [float(v) for v in range(8)]


def test_oversized_batch_rejected():
    buf = scalar_buffer(8)
    buf.push({"x": 0.0})
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(3))


# -- exploration --

def test_epsilon_zero_always_greedy():
    rng = np.random.default_rng(4)
    q = np.array([0.1, 0.9, 0.3])
    assert all(epsilon_greedy(q, 0.0, rng) == 1 for _ in range(100))


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(5)
    counts = np.zeros(4)
    draws = 100_000
    for _ in range(draws):
        counts[epsilon_greedy(np.array([5.0, 1.0, 1.0, 1.0]), 1.0, rng)] += 1
    assert np.all(np.abs(counts / draws - 0.25) < 0.02)


def test_greedy_tie_breaks_to_lowest_index():
    rng = np.random.default_rng(6)
    assert epsilon_greedy(np.array([2.0, 7.0, 7.0]), 0.0, rng) == 1


def test_epsilon_schedule_anneals_then_floors():
    config = LearnerConfig()
    n = 1000
    assert epsilon_schedule(0, n, config) == pytest.approx(1.0)
    assert epsilon_schedule(150, n, config) == pytest.approx(0.525)
    assert epsilon_schedule(300, n, config) == pytest.approx(0.05)
    assert epsilon_schedule(900, n, config) == pytest.approx(0.05)


# -- DQN pieces --

def test_dqn_target_terminal_is_reward():
    assert dqn_target(3.0, np.array([5.0, 9.0]), 1.0, 0.9) == pytest.approx(3.0)


def test_dqn_target_bootstraps_max():
    assert dqn_target(1.0, np.array([1.0, 2.0]), 0.0, 0.9) == pytest.approx(2.8)


def test_dqn_target_gamma_zero_is_reward():
    assert dqn_target(1.5, np.array([100.0, 7.0]), 0.0, 0.0) == pytest.approx(1.5)


def dqn_batch(rng, learner, batch=6, done=None):
    obs = rng.normal(0, 1, (batch, learner.spec[0].in_dim))
    actions = rng.integers(0, learner.n_actions, batch)
    rewards = rng.normal(0, 1, batch)
    next_obs = rng.normal(0, 1, (batch, learner.spec[0].in_dim))
    dones = np.full(batch, done, dtype=np.float64) if done is not None else rng.integers(0, 2, batch).astype(np.float64)
    return obs, actions, rewards, next_obs, dones


def test_dqn_update_loss_nonnegative_and_finite():
    rng = np.random.default_rng(7)
    learner = DqnLearner(nn.mlp_spec([4, 8, 3]), LearnerConfig(), rng)
    loss = learner.update(*dqn_batch(rng, learner))
    assert loss >= 0.0 and np.isfinite(loss)


def test_dqn_update_at_fixed_point_changes_nothing():
    # Terminal transitions whose rewards equal the current Q-values give zero
    # error, hence zero gradient and untouched parameters.
    rng = np.random.default_rng(8)
    learner = DqnLearner(nn.mlp_spec([4, 8, 3]), LearnerConfig(), rng)
    obs, actions, _, next_obs, _ = dqn_batch(rng, learner, done=1.0)
    q, _ = nn.forward(learner.spec, learner.params, obs)
    rewards = q[np.arange(len(actions)), actions]
    before = learner.params.copy()
    loss = learner.update(obs, actions, rewards, next_obs, np.ones(len(actions)))
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert np.array_equal(learner.params, before)


def test_dqn_update_single_transition_loss_decreases():
    rng = np.random.default_rng(9)
    learner = DqnLearner(nn.mlp_spec([4, 8, 3]), LearnerConfig(learning_rate=1e-3, target_sync_period=10_000), rng)
    obs = rng.normal(0, 1, (1, 4))
    batch = (obs, np.array([1]), np.array([2.0]), obs, np.array([1.0]))
    losses = [learner.update(*batch) for _ in range(100)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_dqn_loss_stays_finite_over_ten_thousand_random_updates():
    rng = np.random.default_rng(10)
    learner = DqnLearner(nn.mlp_spec([4, 8, 3]), LearnerConfig(), rng)
    losses = np.array([learner.update(*dqn_batch(rng, learner, batch=4)) for _ in range(10_000)])
    assert np.isfinite(losses).all()


# -- target sync --

def test_hard_sync_copies_exactly():
    online, target = np.arange(5.0), np.zeros(5)
    target_sync(online, target, "hard")
    assert np.array_equal(target, online)


def test_soft_sync_tau_one_equals_hard():
    online, target = np.arange(5.0), np.ones(5)
    target_sync(online, target, "soft", tau=1.0)
    assert np.array_equal(target, online)


def test_soft_sync_tau_zero_is_noop():
    online, target = np.arange(5.0), np.ones(5)
    target_sync(online, target, "soft", tau=0.0)
    assert np.array_equal(target, np.ones(5))


def test_soft_sync_blends():
    online, target = np.full(3, 2.0), np.zeros(3)
    target_sync(online, target, "soft", tau=0.25)
    assert np.allclose(target, 0.5)


# -- monotonic mixer --

def make_mixer(n_agents=4, state_dim=6, seed=0):
    mixer = MonotonicMixer(n_agents, state_dim, embed_dim=8, hyper_hidden=8)
    params = mixer.init_params(np.random.default_rng(seed))
    return mixer, params


def test_mixer_monotone_in_every_agent_value():
    rng = np.random.default_rng(11)
    mixer, _ = make_mixer()
    for _ in range(200):
        params = rng.normal(0, 1, mixer.n_params)
        state = rng.normal(0, 1, 6)
        q = rng.normal(0, 3, 4)

        def q_tot(qv):
            return qmix_mix(qv, state, mixer, params)

        grad = finite_difference(q_tot, q, eps=1e-6)
        assert (grad >= -1e-9).all()


def test_mixer_increase_never_decreases_q_tot():
    rng = np.random.default_rng(12)
    mixer, _ = make_mixer()
    for _ in range(300):
        params = rng.normal(0, 1, mixer.n_params)
        state = rng.normal(0, 1, 6)
        q = rng.normal(0, 3, 4)
        base = qmix_mix(q, state, mixer, params)
        bumped = q.copy()
        i = int(rng.integers(4))
        bumped[i] += float(rng.uniform(0.01, 5.0))
        assert qmix_mix(bumped, state, mixer, params) >= base - 1e-12


def test_mixer_degenerate_constant_head_returns_bias():
    mixer, params = make_mixer()
    params[...] = 0.0
    _, head_bias = nn.param_views(mixer.spec, params)[-1]
    head_bias[-1] = 3.25  # final head slot is the state bias b2
    for q in (np.zeros(4), np.full(4, 9.0), np.array([-5.0, 2.0, 0.0, 1.0])):
        assert qmix_mix(q, np.ones(6), mixer, params) == pytest.approx(3.25)


def test_mixer_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    mixer, _ = make_mixer(n_agents=3, state_dim=4)
    for _ in range(10):
        params = rng.normal(0, 1, mixer.n_params)
        states = rng.normal(0, 1, (5, 4))
        qs = rng.normal(0, 2, (5, 3))
        upstream = rng.normal(0, 1, 5)

        def loss(p):
            out, _ = mixer.forward(qs, states, p)
            return float(upstream @ out)

        out, cache = mixer.forward(qs, states, params)
        grad, dqs = mixer.backward(cache, upstream)
        assert relative_error(grad, finite_difference(loss, params)) < 1e-4

        def loss_q(qflat):
            out2, _ = mixer.forward(qflat.reshape(5, 3), states, params)
            return float(upstream @ out2)

        assert relative_error(dqs.ravel(), finite_difference(loss_q, qs.ravel())) < 1e-4


def test_per_agent_argmax_attains_joint_maximum():
    # Monotone mixing means maximizing each agent's value maximizes the mixed
    # value; verified by exhaustive enumeration of joint actions.
    rng = np.random.default_rng(14)
    n_agents, n_actions = 3, 4
    mixer, _ = make_mixer(n_agents=n_agents, state_dim=5)
    for _ in range(50):
        params = rng.normal(0, 1, mixer.n_params)
        state = rng.normal(0, 1, 5)
        q_table = rng.normal(0, 2, (n_agents, n_actions))
        greedy = q_table.max(axis=1)
        best = qmix_mix(greedy, state, mixer, params)
        joint = np.array(list(itertools.product(range(n_actions), repeat=n_agents)))
        per_agent = q_table[np.arange(n_agents), joint]  # (5**n, n_agents)
        all_tot, _ = mixer.forward(per_agent, np.tile(state, (len(joint), 1)), params)
        assert best >= all_tot.max() - 1e-9


# -- team learner --

def tiny_team(seed=0):
    codec_config = CodecConfig(feature_dim=3, hidden_dim=5, activation_penalty=1e-3)
    config = LearnerConfig(agent_hidden_dim=6, mix_embed_dim=4, hyper_hidden_dim=5, learning_rate=1e-3)
    learner = TeamLearner(obs_dim=7, n_agents=3, n_actions=4, state_dim=5, max_steps=50,
                          codec_config=codec_config, config=config, rng=np.random.default_rng(seed))
    return learner


def team_batch(learner, rng, batch=4, done=None):
    n, f = learner.n_agents, learner.feature_dim
    return {
        "raw_obs": rng.normal(0, 1, (batch, n, learner.obs_dim)),
        "cached_feats": rng.normal(0, 1, (batch, n, f)),
        "ages": rng.integers(0, 10, (batch, n)).astype(np.float64),
        "actions": rng.integers(0, learner.n_actions, (batch, n)),
        "reward": rng.normal(0, 1, batch),
        "done": (np.full(batch, done, dtype=np.float64) if done is not None
                 else rng.integers(0, 2, batch).astype(np.float64)),
        "global_state": rng.normal(0, 1, (batch, 5)),
        "next_raw_obs": rng.normal(0, 1, (batch, n, learner.obs_dim)),
        "next_cached_feats": rng.normal(0, 1, (batch, n, f)),
        "next_ages": rng.integers(0, 10, (batch, n)).astype(np.float64),
        "next_global_state": rng.normal(0, 1, (batch, 5)),
    }


def test_team_update_loss_nonnegative():
    learner = tiny_team()
    rng = np.random.default_rng(15)
    assert learner.update(team_batch(learner, rng)) >= 0.0


def test_terminal_batch_targets_equal_rewards():
    learner = tiny_team()
    rng = np.random.default_rng(16)
    batch = team_batch(learner, rng, done=1.0)
    assert np.allclose(learner.bootstrap_targets(batch), batch["reward"])


def test_team_gradient_matches_finite_differences_end_to_end():
    # Covers every parameter group at once: encoder -> fused input -> shared
    # Q-network -> monotonic mixer.
    learner = tiny_team()
    rng = np.random.default_rng(17)
    batch = team_batch(learner, rng, batch=3)
    params = learner.params.copy()
    loss, grad = learner.loss_and_grad(batch, params)
    fd = finite_difference(lambda p: learner.loss_and_grad(batch, p)[0], params)
    assert relative_error(grad, fd) < 1e-4
    # slice-wise too, so a dead parameter group cannot hide in the norm
    for part in ("enc_params", "q_params", "mix_params"):
        got = getattr(learner, part)(grad)
        want = getattr(learner, part)(fd)
        assert relative_error(got, want) < 1e-4
        assert np.linalg.norm(want) > 0.0


def test_team_update_moves_every_parameter_group():
    learner = tiny_team()
    rng = np.random.default_rng(18)
    before = learner.params.copy()
    learner.update(team_batch(learner, rng))
    for part in ("enc_params", "q_params", "mix_params"):
        assert not np.array_equal(getattr(learner, part)(before), getattr(learner, part)(learner.params))


def test_team_target_sync_after_period():
    learner = tiny_team()
    learner.config = learner.config  # frozen dataclass; use default period 500
    rng = np.random.default_rng(19)
    learner.update(team_batch(learner, rng))
    assert not np.array_equal(learner.params, learner.target_params)
    for _ in range(499):
        learner.update(team_batch(learner, rng))
    assert np.array_equal(learner.params, learner.target_params)


def test_team_losses_stay_finite_over_random_updates():
    learner = tiny_team()
    rng = np.random.default_rng(20)
    for _ in range(300):
        assert np.isfinite(learner.update(team_batch(learner, rng)))


def test_rollout_helpers_shapes_and_consistency():
    learner = tiny_team()
    rng = np.random.default_rng(21)
    raw = rng.normal(0, 1, (3, 7))
    feats = learner.features(raw)
    assert feats.shape == (3, 3)
    cached = rng.normal(0, 1, (3, 3))
    ages = np.array([0.0, 2.0, 5.0])
    fused = learner.fuse_step(feats, cached, ages)
    assert fused.shape == (3, learner.fused_dim)
    q = learner.agent_q_values(fused)
    assert q.shape == (3, 4)
    # fuse_step agrees with the reference single-agent fusion
    from taskcomm.codec import FeatureCache, SemanticFeature, fuse

    cache = FeatureCache(3)
    for s in range(3):
        cache.store(SemanticFeature(vector=cached[s], importance=0.0, gen_step=0, sender=s))
    for i in range(3):
        own = SemanticFeature(vector=feats[i], importance=0.0, gen_step=0, sender=i)
        assert np.allclose(fused[i], fuse(own, cache, ages, max_steps=50))
