"""Episode orchestration: the sense / transmit / execute cycle.

Per step: every agent encodes its local observation into a feature with an
importance score; the access point sees the channel realization plus those
scores and assigns the two uplink subchannels (learned policy or a baseline);
delivered features refresh the shared cache and the age table; agents fuse
own + cached features and act; the environment advances. The team reward is
the environment reward minus lambda_time * step communication time (and
optionally minus lambda_aoi * mean age).

Transitions are completed one step later, once the next decision inputs
(post-delivery) exist, then pushed into a single replay buffer feeding both
the team update and, in learned mode, the scheduler update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .aoi import AoiTable, summarize
from .codec import CodecConfig
from .gridworld import CAPTURED, GridConfig, GridWorld, observation_dim, trajectory_line
from .learners import DqnLearner, LearnerConfig, TeamLearner, epsilon_greedy, epsilon_greedy_rows
from .replay import ReplayBuffer
from . import nn
from .wireless import (
    WirelessConfig,
    apply_schedule,
    decode_schedule_action,
    encode_schedule_action,
    n_schedule_actions,
    sample_channel,
    schedule_max_rate,
    schedule_random,
    trace_rows,
)

SCHEDULER_MODES = ("learned", "random", "max_rate")


@dataclass
class EpisodeMetrics:
    episode: int
    success: bool
    episode_total_time: float
    captures: int
    steps: int
    mean_aoi: float
    peak_aoi: float
    td_loss_team: float
    td_loss_ap: float
    epsilon: float


def global_state_dim(grid: GridConfig, wireless: WirelessConfig) -> int:
    return 3 * grid.width * grid.height + grid.n_agents * wireless.n_subchannels


def global_state_planes(state, grid: GridConfig) -> np.ndarray:
    """Occupancy planes (agents, active preys, obstacles) as flat uint8."""
    planes = np.zeros((3, grid.height, grid.width), dtype=np.uint8)
    for r, c in state.agent_pos:
        planes[0, r, c] = 1
    for pos in state.prey_pos:
        if pos is not CAPTURED:
            planes[1, pos[0], pos[1]] = 1
    planes[2] = state.obstacles
    return planes.reshape(-1)


def ap_observation_dim(grid: GridConfig, wireless: WirelessConfig) -> int:
    return grid.n_agents * wireless.n_subchannels + grid.n_agents


def buffer_fields(grid: GridConfig, wireless: WirelessConfig, codec: CodecConfig) -> dict:
    n = grid.n_agents
    planes = 4 * grid.fov * grid.fov
    return {
        "raw_planes": ((n, planes), np.uint8),
        "self_pos": ((n, 2), np.float32),
        "cached_feats": ((n, codec.feature_dim), np.float32),
        "ages": ((n,), np.uint16),
        "actions": ((n,), np.uint8),
        "ap_obs": ((ap_observation_dim(grid, wireless),), np.float32),
        "ap_action": ((), np.uint8),
        "reward": ((), np.float64),
        "done": ((), np.uint8),
        "global_occ": ((3 * grid.height * grid.width,), np.uint8),
        "global_gains": ((n * wireless.n_subchannels,), np.float32),
        "next_raw_planes": ((n, planes), np.uint8),
        "next_self_pos": ((n, 2), np.float32),
        "next_cached_feats": ((n, codec.feature_dim), np.float32),
        "next_ages": ((n,), np.uint16),
        "next_ap_obs": ((ap_observation_dim(grid, wireless),), np.float32),
        "next_global_occ": ((3 * grid.height * grid.width,), np.uint8),
        "next_global_gains": ((n * wireless.n_subchannels,), np.float32),
    }


def team_batch_view(batch: dict, buffers=None) -> dict:
    """Float64 views of a sampled batch in the layout TeamLearner expects.

    With a buffers dict (preallocated float64 arrays) the conversions write
    in place instead of allocating; the result is then only valid until the
    next call with the same buffers.
    """
    planes_dim = batch["raw_planes"].shape[2]

    def raw(name, planes, selfpos):
        if buffers is None:
            return np.concatenate([planes.astype(np.float64), selfpos.astype(np.float64)], axis=2)
        out = buffers[name]
        np.copyto(out[:, :, :planes_dim], planes, casting="unsafe")
        np.copyto(out[:, :, planes_dim:], selfpos, casting="unsafe")
        return out

    def gstate(name, occ, gains):
        if buffers is None:
            return np.concatenate([occ.astype(np.float64), gains.astype(np.float64)], axis=1)
        out = buffers[name]
        np.copyto(out[:, :occ.shape[1]], occ, casting="unsafe")
        np.copyto(out[:, occ.shape[1]:], gains, casting="unsafe")
        return out

    return {
        "raw_obs": raw("raw_obs", batch["raw_planes"], batch["self_pos"]),
        "cached_feats": batch["cached_feats"].astype(np.float64),
        "ages": batch["ages"].astype(np.float64),
        "actions": batch["actions"],
        "reward": batch["reward"],
        "done": batch["done"].astype(np.float64),
        "global_state": gstate("global_state", batch["global_occ"], batch["global_gains"]),
        "next_raw_obs": raw("next_raw_obs", batch["next_raw_planes"], batch["next_self_pos"]),
        "next_cached_feats": batch["next_cached_feats"].astype(np.float64),
        "next_ages": batch["next_ages"].astype(np.float64),
        "next_global_state": gstate("next_global_state", batch["next_global_occ"], batch["next_global_gains"]),
    }


def make_view_buffers(batch_size, n_agents, obs_dim, state_dim) -> dict:
    return {
        "raw_obs": np.empty((batch_size, n_agents, obs_dim)),
        "next_raw_obs": np.empty((batch_size, n_agents, obs_dim)),
        "global_state": np.empty((batch_size, state_dim)),
        "next_global_state": np.empty((batch_size, state_dim)),
    }


class TrainingRun:
    """All mutable pieces of one experiment: learners, replay, RNG streams."""

    def __init__(self, grid: GridConfig, wireless: WirelessConfig, codec: CodecConfig,
                 learner: LearnerConfig, scheduler_mode: str, seed: int, stream_salt: int = 0):
        if scheduler_mode not in SCHEDULER_MODES:
            raise ValueError(f"scheduler_mode must be one of {SCHEDULER_MODES}")
        self.grid = grid
        self.wireless = wireless
        self.codec = codec
        self.learner_config = learner
        self.scheduler_mode = scheduler_mode
        self.seed = seed

        # Fixed spawn order keeps every stream reproducible per (config, seed);
        # the salt separates training streams from evaluation streams.
        root = np.random.SeedSequence([seed, stream_salt])
        (s_init, s_env, s_chan, s_team, s_ap, s_replay) = root.spawn(6)
        self.env_seed_rng = np.random.default_rng(s_env)
        self.chan_rng = np.random.default_rng(s_chan)
        self.team_rng = np.random.default_rng(s_team)
        self.ap_rng = np.random.default_rng(s_ap)
        self.replay_rng = np.random.default_rng(s_replay)

        init_rng = np.random.default_rng(s_init)
        obs_dim = observation_dim(grid)
        self.team = TeamLearner(
            obs_dim=obs_dim,
            n_agents=grid.n_agents,
            n_actions=5,
            state_dim=global_state_dim(grid, wireless),
            max_steps=grid.max_steps,
            codec_config=codec,
            config=learner,
            rng=init_rng,
        )
        ap_spec = nn.mlp_spec([
            ap_observation_dim(grid, wireless),
            learner.ap_hidden_dim,
            learner.ap_hidden_dim,
            n_schedule_actions(grid.n_agents),
        ])
        self.ap = DqnLearner(ap_spec, replace(learner, gamma=learner.ap_gamma), init_rng)
        self._snr = wireless.tx_power / wireless.noise_power
        self.buffer = ReplayBuffer(learner.buffer_capacity, buffer_fields(grid, wireless, codec))
        self.global_step = 0
        self.team_updates = 0
        self.ap_updates = 0
        self._view_buffers = make_view_buffers(
            learner.batch_size, grid.n_agents, obs_dim, global_state_dim(grid, wireless))
        self._raw_buf = np.empty((grid.n_agents, obs_dim))
        self._zero_next = {
            name: np.zeros(shape, dtype=dtype)
            for name, (shape, dtype) in buffer_fields(grid, wireless, codec).items()
            if name.startswith("next_")
        }

    def make_env(self, obstacle_mode=None) -> GridWorld:
        grid = self.grid if obstacle_mode is None else replace(self.grid, obstacle_mode=obstacle_mode)
        return GridWorld(grid)

    # -- scheduling --

    def _schedule(self, channel, ap_obs, epsilon, warmup=False):
        if self.scheduler_mode == "random" or (self.scheduler_mode == "learned" and warmup):
            action = schedule_random(channel, self.ap_rng)
            return action, encode_schedule_action(action, self.grid.n_agents)
        if self.scheduler_mode == "max_rate":
            action = schedule_max_rate(channel, self.wireless.budget)
            return action, encode_schedule_action(action, self.grid.n_agents)
        idx = epsilon_greedy(self.ap.q_values(ap_obs), epsilon, self.ap_rng)
        return decode_schedule_action(idx, self.grid.n_agents), idx

    # -- one episode --

    def run_episode(self, env: GridWorld, episode: int, epsilon: float, learn: bool,
                    env_seed=None, ap_warmup=False, trajectory_sink=None,
                    channel_trace_sink=None) -> EpisodeMetrics:
        grid, wcfg, lcfg = self.grid, self.wireless, self.learner_config
        n = grid.n_agents
        f = self.codec.feature_dim

        if env_seed is None:
            env_seed = int(self.env_seed_rng.integers(2**63))
        state = env.reset(seed=env_seed)

        aoi = AoiTable(n)
        cache_vec = np.zeros((n, f), dtype=np.float64)
        cache_gen = np.full(n, -1, dtype=np.int64)
        aoi_snaps = []
        comm_time_total = 0.0
        team_losses = []
        ap_losses = []
        pending = None
        min_fill = max(lcfg.batch_size, lcfg.min_buffer)

        plane_dim = self._raw_buf.shape[1] - 2
        while True:
            t = state.step
            channel = sample_channel(n, wcfg.n_subchannels, self.chan_rng, step=t)
            raw = self._raw_buf
            for i in range(n):
                obs = env.observe(state, i)
                raw[i, :plane_dim] = obs.planes.reshape(-1)
                raw[i, plane_dim:] = obs.self_pos
            feats = self.team.features(raw)
            deltas = np.where(cache_gen[:, None] >= 0, feats - cache_vec, feats)
            importance = np.sqrt((deltas * deltas).sum(axis=1))
            # channel state enters the scheduler as per-link spectral
            # efficiency log2(1 + snr*gain) and importance as log1p(norm):
            # both are fixed bijections that bound the tails, so the greedy
            # scheduler extrapolates sanely outside the training distribution
            ap_obs = np.concatenate([np.log2(1.0 + self._snr * channel.gains).ravel(),
                                     np.log1p(importance)])
            gains32 = channel.gains.ravel().astype(np.float32)
            g_occ = global_state_planes(state, grid)

            action, action_idx = self._schedule(channel, ap_obs, epsilon, warmup=ap_warmup)
            report = apply_schedule(action, channel, wcfg.payload_bits, wcfg.budget, wcfg.deadline_s)
            if channel_trace_sink is not None:
                for row in trace_rows(self.global_step, channel, action, report):
                    channel_trace_sink(row)

            aoi.advance()
            for sender in sorted(report.delivered):
                cache_vec[sender] = feats[sender]
                cache_gen[sender] = t
                aoi.record_delivery(sender, gen_step=t, now=t)
            ages = np.where(cache_gen >= 0, t - cache_gen, t).astype(np.float64)

            raw_planes = raw[:, :-2].astype(np.uint8)
            self_pos = raw[:, -2:].astype(np.float32)
            if pending is not None:
                pending.update(
                    next_raw_planes=raw_planes,
                    next_self_pos=self_pos,
                    next_cached_feats=cache_vec.astype(np.float32),
                    next_ages=ages.astype(np.uint16),
                    next_ap_obs=ap_obs.astype(np.float32),
                    next_global_occ=g_occ,
                    next_global_gains=gains32,
                )
                self.buffer.push(pending)
                pending = None

            fused = self.team.fuse_step(feats, cache_vec, ages)
            q_rows = self.team.agent_q_values(fused)
            actions = epsilon_greedy_rows(q_rows, epsilon, self.team_rng)

            result = env.step(state, actions)
            aoi_snaps.append(aoi.snapshot())
            comm_time_total += report.step_comm_time

            reward = result.reward - lcfg.lambda_time * report.step_comm_time
            if lcfg.lambda_aoi > 0.0:
                off = aoi.age[~np.eye(n, dtype=bool)]
                reward -= lcfg.lambda_aoi * float(off.mean())

            if trajectory_sink is not None:
                trajectory_sink(trajectory_line(state, actions, reward, result.done))

            pending = dict(
                raw_planes=raw_planes,
                self_pos=self_pos,
                cached_feats=cache_vec.astype(np.float32),
                ages=ages.astype(np.uint16),
                actions=np.asarray(actions, dtype=np.uint8),
                ap_obs=ap_obs.astype(np.float32),
                ap_action=action_idx,
                reward=reward,
                done=int(result.done),
            )
            pending.update(global_occ=g_occ, global_gains=gains32)

            self.global_step += 1
            if learn and len(self.buffer) >= min_fill and self.global_step % lcfg.update_period == 0:
                batch = self.buffer.sample(lcfg.batch_size, self.replay_rng)
                team_losses.append(self.team.update(team_batch_view(batch, self._view_buffers)))
                self.team_updates += 1
                if self.scheduler_mode == "learned":
                    ap_losses.append(self.ap.update(
                        batch["ap_obs"].astype(np.float64),
                        batch["ap_action"].astype(np.int64),
                        batch["reward"],
                        batch["next_ap_obs"].astype(np.float64),
                        batch["done"].astype(np.float64),
                    ))
                    self.ap_updates += 1

            state = result.next_state
            if result.done:
                pending.update(self._zero_next)
                self.buffer.push(pending)
                pending = None
                break

        aoi_summary = summarize(aoi_snaps)
        steps = state.step
        return EpisodeMetrics(
            episode=episode,
            success=state.all_captured,
            episode_total_time=steps * wcfg.step_duration_s + comm_time_total,
            captures=state.captured_count,
            steps=steps,
            mean_aoi=aoi_summary.mean,
            peak_aoi=float(aoi_summary.peak),
            td_loss_team=float(np.mean(team_losses)) if team_losses else 0.0,
            td_loss_ap=float(np.mean(ap_losses)) if ap_losses else 0.0,
            epsilon=epsilon,
        )
