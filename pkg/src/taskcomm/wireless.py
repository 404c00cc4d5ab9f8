"""Uplink channel model and subchannel allocation policies.

One access point serves n_agents over n_subchannels orthogonal uplink slots
per step (two by default). Power gains are block Rayleigh fading, i.i.d. per
link per step with unit mean, so SNR = tx_power * gain / noise_power. A
scheduled message is delivered when payload_bits / rate fits within the
deadline; late messages are dropped (no queueing, the next step regenerates
a fresh feature). Downlink broadcast of delivered messages is modeled as
free.

Allocation policies:
- schedule_random: uniform over all ordered assignments of distinct agents.
- schedule_max_rate: exhaustive argmax of the summed link rates.
- the learned scheduler lives in the training stack and acts on the same
  enumerated action space via decode_schedule_action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# A message that cannot meet its deadline takes "forever".
TIMEOUT = math.inf


@dataclass(frozen=True)
class LinkBudget:
    tx_power: float = 1.0
    noise_power: float = 0.1
    bandwidth_hz: float = 512.0


@dataclass(frozen=True)
class WirelessConfig:
    # bandwidth = payload / deadline: a link clears its message within the
    # deadline exactly when it sustains one bit per Hz, so the subchannel
    # assignment genuinely decides delivery times (and occasional drops).
    n_subchannels: int = 2
    tx_power: float = 1.0
    noise_power: float = 0.1
    bandwidth_hz: float = 512.0
    payload_bits: int = 512
    deadline_s: float = 1.0
    step_duration_s: float = 1.0

    @property
    def budget(self) -> LinkBudget:
        return LinkBudget(self.tx_power, self.noise_power, self.bandwidth_hz)

    def validate(self):
        problems = []
        if self.n_subchannels < 1:
            problems.append("n_subchannels must be >= 1")
        if self.noise_power <= 0:
            problems.append("noise_power must be > 0")
        if self.tx_power < 0:
            problems.append("tx_power must be >= 0")
        if self.bandwidth_hz <= 0:
            problems.append("bandwidth_hz must be > 0")
        if self.payload_bits <= 0:
            problems.append("payload_bits must be > 0")
        if self.deadline_s <= 0:
            problems.append("deadline_s must be > 0")
        if self.step_duration_s <= 0:
            problems.append("step_duration_s must be > 0")
        return problems


@dataclass
class ChannelState:
    gains: np.ndarray  # (n_agents, n_subchannels), power gains >= 0
    step: int = 0


@dataclass(frozen=True)
class ScheduleAction:
    """Per-subchannel agent assignment; agents are all distinct."""

    assignment: tuple

    def __post_init__(self):
        if len(set(self.assignment)) != len(self.assignment):
            raise ValueError("schedule assigns the same agent to two subchannels")


@dataclass
class TransmissionReport:
    delivered: set
    per_link_time: dict  # agent -> seconds (TIMEOUT when the deadline is missed)
    step_comm_time: float = 0.0
    info: dict = field(default_factory=dict)


def sample_channel(n_agents, n_subchannels, rng, step=0) -> ChannelState:
    """Fresh block-fading realization: squared magnitude of a unit-variance
    circularly symmetric complex draw per link, i.e. exponential with mean 1."""
    if n_agents < 1 or n_subchannels < 1:
        raise ValueError("counts must be >= 1")
    parts = rng.standard_normal((n_agents, n_subchannels, 2))
    gains = (parts[..., 0] ** 2 + parts[..., 1] ** 2) / 2.0
    return ChannelState(gains=gains, step=step)


def achievable_rate(gain, tx_power, noise_power, bandwidth_hz) -> float:
    """Shannon rate of one link in bits/second."""
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth_hz must be > 0")
    if gain < 0 or tx_power < 0:
        raise ValueError("gain and tx_power must be >= 0")
    return bandwidth_hz * math.log2(1.0 + tx_power * gain / noise_power)


def transmission_time(payload_bits, rate, deadline_s):
    """Seconds to push payload_bits at rate, or TIMEOUT past the deadline."""
    if payload_bits <= 0:
        raise ValueError("payload_bits must be > 0")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0.0:
        return TIMEOUT
    t = payload_bits / rate
    return t if t <= deadline_s else TIMEOUT


def n_schedule_actions(n_agents: int) -> int:
    return n_agents * (n_agents - 1)


def decode_schedule_action(index: int, n_agents: int) -> ScheduleAction:
    """Bijective enumeration of ordered distinct pairs, lexicographic order."""
    if not 0 <= index < n_schedule_actions(n_agents):
        raise ValueError(f"schedule index {index} out of range for {n_agents} agents")
    first = index // (n_agents - 1)
    rem = index % (n_agents - 1)
    second = rem + (rem >= first)
    return ScheduleAction(assignment=(first, second))


def encode_schedule_action(action: ScheduleAction, n_agents: int) -> int:
    first, second = action.assignment
    return first * (n_agents - 1) + (second - (second > first))


def schedule_random(channel: ChannelState, rng) -> ScheduleAction:
    """Uniform over all valid assignments; ignores the channel realization."""
    n_agents = channel.gains.shape[0]
    if n_agents < 2:
        raise ValueError("need at least 2 agents to fill 2 subchannels")
    return decode_schedule_action(int(rng.integers(n_schedule_actions(n_agents))), n_agents)


def _pair_enumeration(n_agents):
    idx = np.arange(n_schedule_actions(n_agents))
    first = idx // (n_agents - 1)
    rem = idx % (n_agents - 1)
    second = rem + (rem >= first)
    return first, second


def schedule_max_rate(channel: ChannelState, budget: LinkBudget) -> ScheduleAction:
    """Exhaustive argmax of the summed rates; ties break to the smallest
    action index."""
    gains = channel.gains
    n_agents = gains.shape[0]
    if n_agents < 2:
        raise ValueError("need at least 2 agents to fill 2 subchannels")
    snr = budget.tx_power * gains / budget.noise_power
    rates = budget.bandwidth_hz * np.log2(1.0 + snr)
    first, second = _pair_enumeration(n_agents)
    totals = rates[first, 0] + rates[second, 1]
    best = int(np.argmax(totals))
    return decode_schedule_action(best, n_agents)


def apply_schedule(action: ScheduleAction, channel: ChannelState, payload_bits, budget: LinkBudget, deadline_s) -> TransmissionReport:
    """Run the two scheduled uplinks and report delivery and timing.

    step_comm_time is the slowest delivered link (0 when nothing lands);
    the downlink broadcast of delivered features costs nothing.
    """
    per_link_time = {}
    delivered = set()
    rates = {}
    for subchannel, agent in enumerate(action.assignment):
        gain = float(channel.gains[agent, subchannel])
        rate = achievable_rate(gain, budget.tx_power, budget.noise_power, budget.bandwidth_hz)
        t = transmission_time(payload_bits, rate, deadline_s)
        per_link_time[agent] = t
        rates[agent] = rate
        if t <= deadline_s:
            delivered.add(agent)
    step_comm_time = max((per_link_time[a] for a in delivered), default=0.0)
    return TransmissionReport(
        delivered=delivered,
        per_link_time=per_link_time,
        step_comm_time=step_comm_time,
        info={"rates": rates},
    )


def trace_rows(step, channel: ChannelState, action: ScheduleAction, report: TransmissionReport):
    """Rows for the channel trace CSV: one per (agent, subchannel) link."""
    rows = []
    for subchannel in range(channel.gains.shape[1]):
        scheduled = action.assignment[subchannel] if subchannel < len(action.assignment) else None
        for agent in range(channel.gains.shape[0]):
            rate = report.info["rates"].get(agent, 0.0) if agent == scheduled else 0.0
            t = report.per_link_time.get(agent, 0.0) if agent == scheduled else 0.0
            rows.append((step, agent, subchannel, float(channel.gains[agent, subchannel]), rate, t, int(agent in report.delivered and agent == scheduled)))
    return rows
