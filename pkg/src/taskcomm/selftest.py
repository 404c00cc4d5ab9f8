"""Built-in invariant and oracle checks, runnable without pytest.

A condensed version of the test suite's property checks: channel statistics,
schedule enumeration, gradient correctness, mixer monotonicity, age
accounting and end-to-end determinism. Prints one PASS/FAIL line per check
and exits nonzero on any failure.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import nn
from .aoi import AoiTable
from .codec import CodecConfig
from .config import ExperimentConfig
from .gridworld import GridConfig, GridWorld
from .learners import LearnerConfig, MonotonicMixer, TeamLearner, qmix_mix
from .trainer import TrainingRun
from .wireless import LinkBudget, sample_channel, schedule_max_rate


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def check_channel_statistics(fast):
    n = 100_000 if fast else 1_000_000
    rng = np.random.default_rng(0)
    gains = rng.standard_normal((n, 2))
    gains = (gains[:, 0] ** 2 + gains[:, 1] ** 2) / 2.0
    if abs(gains.mean() - 1.0) >= 0.01:
        return f"gain mean {gains.mean():.4f} outside 1.0 +/- 0.01"
    # one-sample KS statistic against the unit exponential CDF
    xs = np.sort(gains)
    cdf = 1.0 - np.exp(-xs)
    k = np.arange(1, n + 1)
    d = max(np.max(k / n - cdf), np.max(cdf - (k - 1) / n))
    critical = 1.6276 / math.sqrt(n)
    if d >= critical:
        return f"KS statistic {d:.5f} >= 1% critical value {critical:.5f}"
    return None


def check_max_rate_against_brute_force(fast):
    rng = np.random.default_rng(1)
    budget = LinkBudget()
    trials = 1000 if fast else 10_000
    for _ in range(trials):
        channel = sample_channel(4, 2, rng)
        got = schedule_max_rate(channel, budget).assignment
        best, best_total = None, -np.inf
        for pair in itertools.permutations(range(4), 2):
            total = sum(
                budget.bandwidth_hz * math.log2(1 + budget.tx_power * channel.gains[a, c] / budget.noise_power)
                for c, a in enumerate(pair)
            )
            if total > best_total:
                best, best_total = pair, total
        if got != best:
            return f"argmax mismatch: {got} vs brute force {best}"
    return None


def check_gradients(fast):
    rng = np.random.default_rng(2)
    for _ in range(10 if fast else 30):
        spec = nn.mlp_spec([4, 5, 3], hidden_activation=str(rng.choice(["relu", "elu", "abs"])))
        params = rng.normal(0, 1, nn.n_params(spec))
        x = rng.normal(0, 1, 4)
        readout = rng.normal(0, 1, 3)
        _, cache = nn.forward(spec, params, x)
        grad, _ = nn.backward(spec, params, cache, readout)
        fd = _fd(lambda p: float(readout @ nn.forward(spec, p, x)[0]), params, eps=1e-5)
        denom = max(np.linalg.norm(fd), 1e-12)
        if np.linalg.norm(grad - fd) / denom >= 1e-4:
            return "analytic gradient disagrees with finite differences"
    return None


def check_mixer_monotonicity(fast):
    rng = np.random.default_rng(3)
    mixer = MonotonicMixer(4, 6, embed_dim=8, hyper_hidden=8)
    for _ in range(100 if fast else 500):
        params = rng.normal(0, 1, mixer.n_params)
        state = rng.normal(0, 1, 6)
        q = rng.normal(0, 3, 4)
        grad = _fd(lambda qv: qmix_mix(qv, state, mixer, params), q)
        if (grad < -1e-9).any():
            return f"negative sensitivity {grad.min():.3e}"
    return None


def check_aoi_accounting(fast):
    rng = np.random.default_rng(4)
    for _ in range(300 if fast else 2000):
        n = int(rng.integers(2, 5))
        table = AoiTable(n)
        last_gen = {}
        for now in range(1, int(rng.integers(3, 15))):
            table.advance()
            if rng.random() < 0.5:
                sender = int(rng.integers(n))
                table.record_delivery(sender, now, now)
                last_gen[sender] = now
            for r in range(n):
                for s in range(n):
                    want = 0 if r == s else now - last_gen.get(s, 0)
                    if table.age[r, s] != want:
                        return f"age[{r},{s}] = {table.age[r, s]}, expected {want}"
    return None


def check_episode_determinism(fast):
    del fast
    config = ExperimentConfig(
        grid=GridConfig(width=8, height=8, n_agents=2, n_preys=1, fov=3, max_steps=30),
        codec=CodecConfig(feature_dim=4, hidden_dim=8),
        learner=LearnerConfig(batch_size=8, min_buffer=8, update_period=4,
                              agent_hidden_dim=8, ap_hidden_dim=8, mix_embed_dim=4, hyper_hidden_dim=4),
    )

    def run_once():
        run = TrainingRun(config.grid, config.wireless, config.codec, config.learner, "learned", seed=5)
        env = run.make_env()
        rows = []
        for episode in range(6):
            m = run.run_episode(env, episode, epsilon=0.5, learn=True)
            rows.append((m.steps, m.episode_total_time, m.td_loss_team, m.td_loss_ap))
        return rows

    if run_once() != run_once():
        return "identical seeds produced different episodes"
    return None


CHECKS = [
    ("channel statistics (mean + KS)", check_channel_statistics),
    ("max-rate schedule vs brute force", check_max_rate_against_brute_force),
    ("gradients vs finite differences", check_gradients),
    ("mixer monotonicity", check_mixer_monotonicity),
    ("age-of-information accounting", check_aoi_accounting),
    ("episode determinism", check_episode_determinism),
]


def run_selftest(fast=False) -> int:
    failures = 0
    for name, check in CHECKS:
        problem = check(fast)
        if problem is None:
            print(f"PASS {name}")
        else:
            print(f"FAIL {name}: {problem}")
            failures += 1
    return 1 if failures else 0
