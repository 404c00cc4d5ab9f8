"""Discrete-time predator/prey grid world.

Rules of the world:
- Rectangular grid with static obstacles, several predator agents and several
  randomly walking preys. Agents and preys occupy distinct cells.
- All agents move simultaneously. A move into an obstacle, out of bounds,
  into a cell another agent also targets, or onto an agent that is not
  vacating, resolves to "stay". Two agents may swap cells (simultaneous
  move), but can never stack.
- After agents move, each active prey takes a uniform random step among its
  legal moves: stay, or any in-bounds free cell (not an obstacle, not an
  agent after the agent phase, not another prey). Preys move in index order,
  each seeing the positions already taken.
- A prey is captured when an agent occupies its cell after both phases.
  Captured preys leave the grid permanently.
- Team reward per step: capture_bonus * (new captures) - step_cost. Any
  communication cost is added by the orchestrator, not here.

Each agent observes a fov x fov window centered on itself with four binary
planes (agents, preys, obstacles, out-of-bounds) plus its own normalized
position.

All randomness flows through one generator owned by the environment
instance, so a (config, seed, action sequence) triple fully determines the
trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

# Action encoding shared by the whole stack.
ACTION_NAMES = ("up", "down", "left", "right", "stay")
N_ACTIONS = 5
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

# Marker for a prey that has been captured and removed from the grid.
CAPTURED = None

OBSTACLE_MODES = ("fixed_regular", "dynamic_density")


class PlacementError(RuntimeError):
    """Not enough free cells to place all agents and preys."""


class ConnectivityError(RuntimeError):
    """Obstacle generation could not produce a 4-connected free region."""


@dataclass(frozen=True)
class GridConfig:
    width: int = 20
    height: int = 20
    n_agents: int = 4
    n_preys: int = 4
    fov: int = 7
    obstacle_mode: str = "fixed_regular"
    obstacle_density: float = 0.10
    max_steps: int = 200
    seed: int = 0
    capture_bonus: float = 10.0
    step_cost: float = 0.1
    preys_move: bool = True

    def validate(self):
        problems = []
        if self.width < 1 or self.height < 1:
            problems.append("grid dimensions must be >= 1")
        if self.n_agents < 1:
            problems.append("n_agents must be >= 1")
        if self.n_preys < 1:
            problems.append("n_preys must be >= 1")
        if self.fov % 2 == 0:
            problems.append("fov must be odd")
        if self.fov > min(self.width, self.height):
            problems.append("fov must be <= min(width, height)")
        if not 0.0 <= self.obstacle_density <= 0.3:
            problems.append("obstacle_density must be in [0, 0.3]")
        if self.max_steps < 1:
            problems.append("max_steps must be >= 1")
        if self.obstacle_mode not in OBSTACLE_MODES:
            problems.append(f"obstacle_mode must be one of {OBSTACLE_MODES}")
        return problems


@dataclass
class GridState:
    agent_pos: list
    prey_pos: list  # (row, col) or CAPTURED
    obstacles: np.ndarray  # bool (height, width)
    step: int = 0
    captured_count: int = 0

    @property
    def all_captured(self) -> bool:
        return all(p is CAPTURED for p in self.prey_pos)


@dataclass
class AgentObservation:
    planes: np.ndarray  # (4, fov, fov): agents, preys, obstacles, out-of-bounds
    self_pos: np.ndarray  # (2,) normalized to [0, 1]


@dataclass
class StepResult:
    next_state: GridState
    reward: float
    per_agent_captures: list
    done: bool
    info: dict = field(default_factory=dict)


def _free_cells_connected(obstacles) -> bool:
    """True when the free cells form one 4-connected component."""
    free = ~obstacles
    n_free = int(free.sum())
    if n_free == 0:
        return False
    height, width = obstacles.shape
    start = tuple(np.argwhere(free)[0])
    seen = np.zeros_like(free)
    seen[start] = True
    stack = [start]
    count = 1
    while stack:
        r, c = stack.pop()
        for dr, dc in _DELTAS[:4]:
            nr, nc = r + dr, c + dc
            if 0 <= nr < height and 0 <= nc < width and free[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                count += 1
                stack.append((nr, nc))
    return count == n_free


def _lattice_obstacles(width, height, density):
    """Deterministic border-free lattice with an exact cell count.

    Picks the sparsest spacing (p, q) whose interior lattice still reaches
    round(density * width * height) cells, then keeps the first cells in
    row-major order. Spacing ties break to the lexicographically smallest
    (p, q).
    """
    grid = np.zeros((height, width), dtype=bool)
    target = int(round(density * width * height))
    if target == 0:
        return grid
    rows_max, cols_max = height - 2, width - 2
    best = None
    for p in range(1, max(rows_max, 1) + 1):
        n_rows = rows_max // p
        if n_rows == 0:
            break
        for q in range(1, max(cols_max, 1) + 1):
            count = n_rows * (cols_max // q)
            if count >= target and (best is None or count < best[0] or (count == best[0] and (p, q) < best[1:])):
                best = (count, p, q)
    if best is None:
        raise ValueError(f"density {density} unreachable with a border-free lattice on {width}x{height}")
    _, p, q = best
    placed = 0
    for r in range(p, rows_max + 1, p):
        for c in range(q, cols_max + 1, q):
            grid[r, c] = True
            placed += 1
            if placed == target:
                return grid
    return grid


def generate_obstacles(mode, density, width, height, rng):
    """Build an obstacle grid; free cells are guaranteed 4-connected.

    fixed_regular ignores rng and lays a deterministic lattice at the given
    density. dynamic_density draws a fresh density from [0.05, 0.20] and sets
    cells independently, retrying (fresh draw each time) until the free cells
    are connected.

    Raises ConnectivityError after 100 failed retries.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if mode == "fixed_regular":
        grid = _lattice_obstacles(width, height, density)
        if not _free_cells_connected(grid):
            raise ConnectivityError("fixed lattice disconnected the free cells")
        return grid
    if mode != "dynamic_density":
        raise ValueError(f"unknown obstacle mode {mode!r}")
    for _ in range(100):
        drawn = rng.uniform(0.05, 0.20)
        grid = rng.random((height, width)) < drawn
        if _free_cells_connected(grid):
            return grid
    raise ConnectivityError("no connected obstacle layout found in 100 retries")


def observe(state: GridState, config: GridConfig, agent_id: int) -> AgentObservation:
    """fov x fov window centered on the agent, plus normalized self position."""
    if not 0 <= agent_id < config.n_agents:
        raise IndexError(f"agent_id {agent_id} out of range")
    fov = config.fov
    half = fov // 2
    ar, ac = state.agent_pos[agent_id]
    planes = np.zeros((4, fov, fov), dtype=np.float64)
    r0, c0 = ar - half, ac - half
    height, width = config.height, config.width

    # overlap rectangle between the window and the grid
    lo_r, hi_r = max(0, r0), min(height, r0 + fov)
    lo_c, hi_c = max(0, c0), min(width, c0 + fov)
    planes[3] = 1.0
    planes[3, lo_r - r0:hi_r - r0, lo_c - c0:hi_c - c0] = 0.0
    planes[2, lo_r - r0:hi_r - r0, lo_c - c0:hi_c - c0] = state.obstacles[lo_r:hi_r, lo_c:hi_c]

    for r, c in state.agent_pos:
        if lo_r <= r < hi_r and lo_c <= c < hi_c:
            planes[0, r - r0, c - c0] = 1.0
    for pos in state.prey_pos:
        if pos is CAPTURED:
            continue
        r, c = pos
        if lo_r <= r < hi_r and lo_c <= c < hi_c:
            planes[1, r - r0, c - c0] = 1.0

    denom_r = max(height - 1, 1)
    denom_c = max(width - 1, 1)
    self_pos = np.array([ar / denom_r, ac / denom_c], dtype=np.float64)
    return AgentObservation(planes=planes, self_pos=self_pos)


def flatten_observation(obs: AgentObservation) -> np.ndarray:
    return np.concatenate([obs.planes.ravel(), obs.self_pos])


def observation_dim(config: GridConfig) -> int:
    return 4 * config.fov * config.fov + 2


class GridWorld:
    """Stateful wrapper owning the episode RNG.

    reset(seed) regenerates obstacles per the configured mode and places
    agents and preys uniformly at random on distinct free cells. step()
    advances the world one tick; it never mutates the state it is given.
    """

    def __init__(self, config: GridConfig):
        problems = config.validate()
        if problems:
            raise ValueError("invalid grid config: " + "; ".join(problems))
        self.config = config
        self._rng = np.random.default_rng(config.seed)

    def reset(self, seed=None) -> GridState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.config
        obstacles = generate_obstacles(cfg.obstacle_mode, cfg.obstacle_density, cfg.width, cfg.height, self._rng)
        free = np.argwhere(~obstacles)
        needed = cfg.n_agents + cfg.n_preys
        if len(free) < needed:
            raise PlacementError(f"{len(free)} free cells cannot hold {needed} agents and preys")
        picks = self._rng.choice(len(free), size=needed, replace=False)
        cells = [tuple(int(v) for v in free[i]) for i in picks]
        return GridState(
            agent_pos=cells[: cfg.n_agents],
            prey_pos=cells[cfg.n_agents:],
            obstacles=obstacles,
            step=0,
            captured_count=0,
        )

    def observe(self, state: GridState, agent_id: int) -> AgentObservation:
        return observe(state, self.config, agent_id)

    def _legal(self, obstacles, r, c) -> bool:
        cfg = self.config
        return 0 <= r < cfg.height and 0 <= c < cfg.width and not obstacles[r, c]

    def step(self, state: GridState, joint_actions) -> StepResult:
        cfg = self.config
        if state.step >= cfg.max_steps or state.all_captured:
            raise ValueError("episode is done; reset before stepping")
        if len(joint_actions) != cfg.n_agents:
            raise ValueError(f"expected {cfg.n_agents} actions, got {len(joint_actions)}")

        cur = list(state.agent_pos)
        tgt = []
        blocked = 0
        for (r, c), a in zip(cur, joint_actions):
            a = int(a)
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"action {a} out of range")
            dr, dc = _DELTAS[a]
            nr, nc = r + dr, c + dc
            if self._legal(state.obstacles, nr, nc):
                tgt.append((nr, nc))
            else:
                tgt.append((r, c))
                blocked += a != 4

        # Simultaneous-move conflicts: any cell wanted by more than one agent
        # (movers tying, or a mover aiming at a non-vacating agent) makes the
        # movers involved stay. Repeat until stable; order-independent.
        while True:
            counts = {}
            for t in tgt:
                counts[t] = counts.get(t, 0) + 1
            reverted = False
            for i in range(cfg.n_agents):
                if tgt[i] != cur[i] and counts[tgt[i]] > 1:
                    tgt[i] = cur[i]
                    reverted = True
            if not reverted:
                break
        agent_pos = tgt

        prey_pos = list(state.prey_pos)
        if cfg.preys_move:
            agent_cells = set(agent_pos)
            occupied = {p for p in prey_pos if p is not CAPTURED}
            for k, pos in enumerate(prey_pos):
                if pos is CAPTURED:
                    continue
                legal = [pos]
                for dr, dc in _DELTAS[:4]:
                    cand = (pos[0] + dr, pos[1] + dc)
                    if self._legal(state.obstacles, *cand) and cand not in occupied and cand not in agent_cells:
                        legal.append(cand)
                pick = legal[int(self._rng.integers(len(legal)))]
                occupied.discard(pos)
                occupied.add(pick)
                prey_pos[k] = pick

        agent_at = {pos: i for i, pos in enumerate(agent_pos)}
        per_agent_captures = [0] * cfg.n_agents
        new_captures = 0
        for k, pos in enumerate(prey_pos):
            if pos is not CAPTURED and pos in agent_at:
                per_agent_captures[agent_at[pos]] += 1
                prey_pos[k] = CAPTURED
                new_captures += 1

        next_state = GridState(
            agent_pos=agent_pos,
            prey_pos=prey_pos,
            obstacles=state.obstacles,
            step=state.step + 1,
            captured_count=state.captured_count + new_captures,
        )
        reward = cfg.capture_bonus * new_captures - cfg.step_cost
        done = next_state.all_captured or next_state.step >= cfg.max_steps
        info = {"new_captures": new_captures, "blocked_moves": int(blocked)}
        return StepResult(next_state, reward, per_agent_captures, done, info)


def init_episode(config: GridConfig, seed: int) -> GridState:
    """One-shot episode initialization: deterministic given (config, seed)."""
    return GridWorld(replace(config, seed=seed)).reset(seed)


def trajectory_line(state: GridState, joint_actions, reward, done) -> str:
    """One line-delimited JSON record for trajectory export / replay."""
    record = {
        "step": state.step,
        "agents": [list(p) for p in state.agent_pos],
        "preys": [list(p) if p is not CAPTURED else None for p in state.prey_pos],
        "actions": [int(a) for a in joint_actions],
        "reward": float(reward),
        "done": bool(done),
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))
