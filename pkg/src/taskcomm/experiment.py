"""Training and evaluation runs: metrics CSVs, checkpoints, reproducibility.

Every byte written is a pure function of (config, seed): rows are formatted
with fixed precision, checkpoints are a deterministic binary container, and
all randomness descends from named seed streams. Evaluation restores a
checkpoint, switches the obstacle mode, sets epsilon to zero and never
touches learner state.
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import ExperimentConfig
from .learners import epsilon_schedule
from .trainer import EpisodeMetrics, TrainingRun

METRICS_COLUMNS = "episode,success,episode_total_time,captures,steps,mean_aoi,peak_aoi,td_loss_team,td_loss_ap,epsilon"
METRICS_COMMENT = (
    "# columns: episode index; success flag (all preys captured); episode total time in seconds "
    "(steps * step_duration + summed per-step communication time); captured preys; environment steps; "
    "mean/peak age of information in steps; mean team TD loss; mean scheduler TD loss; exploration epsilon. "
    "Floats carry 9 significant digits."
)
CHANNEL_TRACE_COLUMNS = "step,agent,subchannel,gain,rate,time,delivered"

_CHECKPOINT_MAGIC = b"TCCKPT1\n"


class CheckpointMismatchError(RuntimeError):
    """Checkpoint contents do not fit the configured network shapes."""


def _fmt(value) -> str:
    return f"{value:.9g}"


def metrics_row(m: EpisodeMetrics) -> str:
    return ",".join([
        str(m.episode),
        str(int(m.success)),
        _fmt(m.episode_total_time),
        str(m.captures),
        str(m.steps),
        _fmt(m.mean_aoi),
        _fmt(m.peak_aoi),
        _fmt(m.td_loss_team),
        _fmt(m.td_loss_ap),
        _fmt(m.epsilon),
    ])


# -- checkpoints --

def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def save_checkpoint(run: TrainingRun, path, episode: int):
    """Deterministic container: length-prefixed JSON index + raw blobs."""
    blobs = {
        "team_enc": nn.serialize_params(run.team.enc_spec, run.team.enc_params()),
        "team_q": nn.serialize_params(run.team.q_spec, run.team.q_params()),
        "team_mix": nn.serialize_params(run.team.mixer.spec, run.team.mix_params()),
        "team_enc_target": nn.serialize_params(run.team.enc_spec, run.team.enc_params(run.team.target_params)),
        "team_q_target": nn.serialize_params(run.team.q_spec, run.team.q_params(run.team.target_params)),
        "team_mix_target": nn.serialize_params(run.team.mixer.spec, run.team.mix_params(run.team.target_params)),
        "ap_params": nn.serialize_params(run.ap.spec, run.ap.params),
        "ap_target": nn.serialize_params(run.ap.spec, run.ap.target_params),
    }
    for name, opt in (("team_opt", run.team.optimizer), ("ap_opt", run.ap.optimizer)):
        for key, arr in opt.state_arrays().items():
            blobs[f"{name}_{key}"] = np.ascontiguousarray(arr).astype("<f8" if arr.dtype.kind == "f" else "<i8").tobytes()
    meta = {
        "episode": episode,
        "seed": run.seed,
        "scheduler_mode": run.scheduler_mode,
        "global_step": run.global_step,
        "team_updates": run.team_updates,
        "ap_updates": run.ap_updates,
        "rng": {
            "env": _rng_state(run.env_seed_rng),
            "chan": _rng_state(run.chan_rng),
            "team": _rng_state(run.team_rng),
            "ap": _rng_state(run.ap_rng),
            "replay": _rng_state(run.replay_rng),
        },
    }
    index = {"entries": [{"name": n, "nbytes": len(b)} for n, b in sorted(blobs.items())], "meta": meta}
    header = json.dumps(index, sort_keys=True, default=int).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(header)))
        handle.write(header)
        for name, _ in sorted(blobs.items()):
            handle.write(blobs[name])


def read_checkpoint(path):
    with open(path, "rb") as handle:
        magic = handle.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise CheckpointMismatchError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", handle.read(4))
        index = json.loads(handle.read(hlen).decode("utf-8"))
        blobs = {}
        for entry in index["entries"]:
            blobs[entry["name"]] = handle.read(entry["nbytes"])
    return index["meta"], blobs


def load_checkpoint(run: TrainingRun, path, restore_rng=True):
    """Restore parameters, optimizer state and (optionally) RNG streams."""
    meta, blobs = read_checkpoint(path)
    targets = [
        ("team_enc", run.team.enc_spec, run.team.enc_params()),
        ("team_q", run.team.q_spec, run.team.q_params()),
        ("team_mix", run.team.mixer.spec, run.team.mix_params()),
        ("team_enc_target", run.team.enc_spec, run.team.enc_params(run.team.target_params)),
        ("team_q_target", run.team.q_spec, run.team.q_params(run.team.target_params)),
        ("team_mix_target", run.team.mixer.spec, run.team.mix_params(run.team.target_params)),
        ("ap_params", run.ap.spec, run.ap.params),
        ("ap_target", run.ap.spec, run.ap.target_params),
    ]
    for name, spec, dest in targets:
        if name not in blobs:
            raise CheckpointMismatchError(f"checkpoint is missing {name}")
        stored_spec, values = nn.deserialize_params(blobs[name])
        if stored_spec != list(spec):
            raise CheckpointMismatchError(
                f"{name}: stored layers {stored_spec} do not match configured {list(spec)}")
        dest[...] = values
    for prefix, opt, params in (("team_opt", run.team.optimizer, run.team.params),
                                ("ap_opt", run.ap.optimizer, run.ap.params)):
        arrays = {}
        for key in ("t", "m", "v"):
            blob = blobs.get(f"{prefix}_{key}")
            if blob is None:
                continue
            dtype = "<i8" if key == "t" else "<f8"
            arr = np.frombuffer(blob, dtype=dtype).copy()
            if key != "t" and arr.shape != params.shape:
                raise CheckpointMismatchError(f"{prefix}_{key} length {arr.shape} does not match parameters")
            arrays[key] = arr
        if arrays:
            opt.load_state(arrays)
    if restore_rng:
        for name, rng in (("env", run.env_seed_rng), ("chan", run.chan_rng), ("team", run.team_rng),
                          ("ap", run.ap_rng), ("replay", run.replay_rng)):
            rng.bit_generator.state = meta["rng"][name]
    run.global_step = meta["global_step"]
    run.team_updates = meta["team_updates"]
    run.ap_updates = meta["ap_updates"]
    return meta


# -- runs --

def _build_run(config: ExperimentConfig, seed: int, stream_salt: int) -> TrainingRun:
    return TrainingRun(
        grid=config.grid,
        wireless=config.wireless,
        codec=config.codec,
        learner=config.learner,
        scheduler_mode=config.scheduler_mode,
        seed=seed,
        stream_salt=stream_salt,
    )


def _open_sinks(config, out_dir):
    trajectory_sink = channel_sink = None
    files = []
    if config.export_trajectories:
        traj = open(out_dir / "trajectories.jsonl", "w", encoding="utf-8")
        files.append(traj)
        trajectory_sink = lambda line: traj.write(line + "\n")
    if config.export_channel_trace:
        trace = open(out_dir / "channel_trace.csv", "w", encoding="utf-8")
        trace.write(CHANNEL_TRACE_COLUMNS + "\n")
        files.append(trace)
        channel_sink = lambda row: trace.write(
            f"{row[0]},{row[1]},{row[2]},{_fmt(row[3])},{_fmt(row[4])},{_fmt(row[5])},{row[6]}\n")
    return trajectory_sink, channel_sink, files


def run_train(config: ExperimentConfig, seed: int, output_dir, progress=False):
    """Train for n_train_episodes; returns the per-seed output directory."""
    out = Path(output_dir) / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    run = _build_run(config, seed, stream_salt=0)
    env = run.make_env()
    trajectory_sink, channel_sink, files = _open_sinks(config, out)
    csv_path = out / "metrics_train.csv"
    ap_warmup_end = int(config.learner.ap_warmup_frac * config.n_train_episodes)
    with open(csv_path, "w", encoding="utf-8") as csv:
        csv.write(METRICS_COMMENT + "\n")
        csv.write(METRICS_COLUMNS + "\n")
        for episode in range(config.n_train_episodes):
            eps = epsilon_schedule(episode, config.n_train_episodes, config.learner)
            metrics = run.run_episode(env, episode, eps, learn=True, ap_warmup=episode < ap_warmup_end,
                                      trajectory_sink=trajectory_sink, channel_trace_sink=channel_sink)
            csv.write(metrics_row(metrics) + "\n")
            if (episode + 1) % config.checkpoint_period == 0:
                save_checkpoint(run, out / f"checkpoint_ep{episode + 1}.bin", episode + 1)
            if progress and (episode + 1) % 1000 == 0:
                print(f"[seed {seed}] episode {episode + 1}/{config.n_train_episodes}", file=sys.stderr)
    for handle in files:
        handle.close()
    save_checkpoint(run, out / "checkpoint_final.bin", config.n_train_episodes)
    return out


def run_eval(config: ExperimentConfig, checkpoint_path, output_dir, progress=False):
    """Greedy evaluation of a checkpoint under the eval obstacle mode."""
    probe_meta, _ = read_checkpoint(checkpoint_path)
    seed = int(probe_meta["seed"])
    run = _build_run(config, seed, stream_salt=1)
    # parameters come from the checkpoint; the salted streams stay fresh so
    # evaluation does not depend on how long training ran
    load_checkpoint(run, checkpoint_path, restore_rng=False)
    updates_before = (run.team_updates, run.ap_updates)

    out = Path(output_dir) / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    env = run.make_env(config.eval_obstacle_mode)
    rows = []
    times = []
    successes = 0
    csv_path = out / "metrics_eval.csv"
    with open(csv_path, "w", encoding="utf-8") as csv:
        csv.write(METRICS_COMMENT + "\n")
        csv.write(METRICS_COLUMNS + "\n")
        for episode in range(config.n_eval_episodes):
            metrics = run.run_episode(env, episode, epsilon=0.0, learn=False)
            csv.write(metrics_row(metrics) + "\n")
            rows.append(metrics)
            times.append(metrics.episode_total_time)
            successes += int(metrics.success)
            if progress and (episode + 1) % 200 == 0:
                print(f"[seed {seed}] eval episode {episode + 1}/{config.n_eval_episodes}", file=sys.stderr)
        csv.write(
            "# summary"
            f" mean_episode_total_time={_fmt(float(np.mean(times)))}"
            f" median_episode_total_time={_fmt(float(np.median(times)))}"
            f" success_rate={_fmt(successes / len(times))}\n"
        )
    assert (run.team_updates, run.ap_updates) == updates_before, "evaluation must not update learners"
    return csv_path
