"""Discrete route-graph navigation environment.

A recorded traversal (one pose per camera frame) is discretized into a
chain of nodes, optionally closed into a loop. An agent walks the chain
with three actions (forward, backward, stay) and earns a sparse +1 reward
only on reaching the goal node, within a horizon that scales with the
goal's geodesic distance. Observations are produced by a pluggable
provider (see ``percept.ObservationModel``) so the same world can be
driven with clean, synthetic, or corrupted sensor channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EpisodeFinished,
    InfeasibleLevel,
    InvalidParameter,
    InvalidRoute,
    OutOfRange,
    ParseError,
)

FORWARD = 0
BACKWARD = 1
STAY = 2
N_ACTIONS = 3
ACTION_NAMES = ("forward", "backward", "stay")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass
class RoutePose:
    """One frame of the traversal: planar position and heading."""

    frame_index: int
    x: float
    y: float
    heading: float


@dataclass
class RouteGraph:
    """The navigable world: poses as nodes, chain (or loop) adjacency."""

    nodes: list
    adjacency: list
    is_loop: bool
    extent: float
    positions: np.ndarray = field(repr=False)  # (N, 2) float64
    headings: np.ndarray = field(repr=False)  # (N,) float64

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class EnvConfig:
    """Episode rules: horizon policy, action set size, goal encoding.

    The horizon for an episode with goal distance d is
    ``max(horizon_min, horizon_scale * d)``.
    """

    horizon_min: int = 50
    horizon_scale: int = 4
    goal_modality: str = "visual"  # visual | pose | both
    n_actions: int = N_ACTIONS

    def __post_init__(self):
        if self.goal_modality not in ("visual", "pose", "both"):
            raise InvalidParameter(f"unknown goal_modality {self.goal_modality!r}")
        if self.n_actions != N_ACTIONS:
            raise InvalidParameter("action set is fixed at forward/backward/stay")
        if self.horizon_min < 1 or self.horizon_scale < 0:
            raise InvalidParameter("horizon policy must give T >= 1")

    def horizon(self, goal_distance: int) -> int:
        return max(self.horizon_min, self.horizon_scale * goal_distance)


@dataclass
class CurriculumLevel:
    """Goal-distance band [d_min, d_max] goals are sampled from."""

    d_min: int
    d_max: int

    def __post_init__(self):
        if not (1 <= self.d_min <= self.d_max):
            raise InvalidParameter(
                f"need 1 <= d_min <= d_max, got ({self.d_min}, {self.d_max})")


@dataclass
class EpisodeState:
    current_node: int
    goal_node: int
    steps_taken: int
    done: bool
    start_node: int
    horizon: int


@dataclass
class Observation:
    """Per-step agent input; all vectors float32."""

    motion: np.ndarray  # (6,)
    visual: np.ndarray  # (d,)
    goal: np.ndarray  # (d_goal,)
    prev_action: np.ndarray  # (n_actions,) one-hot, zeros on episode start


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


def _pairwise_extent(positions: np.ndarray) -> float:
    """Max pairwise euclidean distance, chunked to bound memory."""
    n = positions.shape[0]
    best = 0.0
    step = 512
    for lo in range(0, n, step):
        block = positions[lo:lo + step]
        d2 = ((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def build_route(poses, is_loop: bool = False) -> RouteGraph:
    """Assemble a chain/loop route graph from an ordered pose list.

    Frame indices must be unique and contiguous from 0; poses may arrive
    in any order and are sorted by index.
    """
    if len(poses) < 2:
        raise InvalidRoute(f"need at least 2 poses, got {len(poses)}")
    indices = [p.frame_index for p in poses]
    if len(set(indices)) != len(indices):
        raise InvalidRoute("duplicate frame indices")
    if sorted(indices) != list(range(len(poses))):
        raise InvalidRoute("frame indices must be contiguous from 0")
    ordered = sorted(poses, key=lambda p: p.frame_index)
    n = len(ordered)
    adjacency = []
    for i in range(n):
        nbrs = []
        if i > 0:
            nbrs.append(i - 1)
        elif is_loop:
            nbrs.append(n - 1)
        if i < n - 1:
            nbrs.append(i + 1)
        elif is_loop:
            nbrs.append(0)
        adjacency.append(sorted(set(nbrs)))
    positions = np.array([[p.x, p.y] for p in ordered], dtype=np.float64)
    headings = np.array([wrap_angle(p.heading) for p in ordered], dtype=np.float64)
    extent = _pairwise_extent(positions)
    return RouteGraph(nodes=ordered, adjacency=adjacency, is_loop=is_loop,
                      extent=extent, positions=positions, headings=headings)


def geodesic(graph: RouteGraph, a: int, b: int) -> int:
    """Shortest-path length in edges between two nodes."""
    n = graph.n_nodes
    if not (0 <= a < n) or not (0 <= b < n):
        raise OutOfRange(f"node ids ({a}, {b}) outside [0, {n})")
    d = abs(a - b)
    if graph.is_loop:
        d = min(d, n - d)
    return d


def max_geodesic(graph: RouteGraph) -> int:
    """Largest geodesic distance between any node pair."""
    return graph.n_nodes // 2 if graph.is_loop else graph.n_nodes - 1


def _node_distances(graph: RouteGraph, start: int) -> np.ndarray:
    idx = np.arange(graph.n_nodes)
    d = np.abs(idx - start)
    if graph.is_loop:
        d = np.minimum(d, graph.n_nodes - d)
    return d


def goal_candidates(graph: RouteGraph, start: int, level: CurriculumLevel) -> np.ndarray:
    """Node ids whose geodesic distance from start lies in the level band."""
    d = _node_distances(graph, start)
    return np.nonzero((d >= level.d_min) & (d <= level.d_max))[0]


def feasible_starts(graph: RouteGraph, level: CurriculumLevel) -> np.ndarray:
    """Start nodes from which at least one in-band goal exists."""
    idx = np.arange(graph.n_nodes)
    if graph.is_loop:
        reach = np.full(graph.n_nodes, graph.n_nodes // 2)
    else:
        reach = np.maximum(idx, graph.n_nodes - 1 - idx)
    return np.nonzero(reach >= level.d_min)[0]


def write_route_poses(poses, path) -> None:
    """Write poses as text lines ``index x y heading``."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# route poses: index x y heading\n")
        for p in poses:
            fh.write(f"{p.frame_index} {p.x!r} {p.y!r} {p.heading!r}\n")


def load_route_poses(path):
    """Parse a route pose text file; '#' starts a comment line."""
    poses = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.split()
            if len(tokens) != 4:
                raise ParseError(f"line {lineno}: expected 4 fields, got {len(tokens)}")
            try:
                idx = int(tokens[0])
                x, y, heading = (float(t) for t in tokens[1:])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            poses.append(RoutePose(idx, x, y, heading))
    return poses


class RouteEnv:
    """Stateful episode driver over a route graph.

    Instances are independent; a single instance is stepped by one caller
    at a time. Observations come from the injected provider, which must
    expose ``observe(node, move, prev_action, goal_node) -> Observation``
    where ``move`` is the signed route direction of the last transition
    (+1 forward, -1 backward, 0 stay/reset).
    """

    def __init__(self, graph: RouteGraph, config: EnvConfig, obs_model):
        self.graph = graph
        self.config = config
        self.obs_model = obs_model
        self.state: EpisodeState | None = None
        self._prev_action = np.zeros(config.n_actions, dtype=np.float32)

    def reset(self, level: CurriculumLevel, rng: np.random.Generator):
        """Sample a start and an in-band goal; returns (state, observation)."""
        starts = feasible_starts(self.graph, level)
        if len(starts) == 0:
            raise InfeasibleLevel(
                f"no start admits a goal at distance [{level.d_min}, {level.d_max}]")
        start = int(starts[rng.integers(len(starts))])
        cands = goal_candidates(self.graph, start, level)
        goal = int(cands[rng.integers(len(cands))])
        dist = geodesic(self.graph, start, goal)
        self.state = EpisodeState(
            current_node=start, goal_node=goal, steps_taken=0, done=False,
            start_node=start, horizon=self.config.horizon(dist))
        self._prev_action = np.zeros(self.config.n_actions, dtype=np.float32)
        obs = self.obs_model.observe(start, 0, self._prev_action, goal)
        return self.state, obs

    def _move(self, node: int, action: int):
        """Apply the transition rule; returns (new_node, signed_move)."""
        n = self.graph.n_nodes
        if action == STAY:
            return node, 0
        delta = 1 if action == FORWARD else -1
        nxt = node + delta
        if self.graph.is_loop:
            return nxt % n, delta
        if 0 <= nxt < n:
            return nxt, delta
        return node, 0  # off-route move at a chain endpoint: no-op

    def step(self, action: int) -> StepResult:
        state = self.state
        if state is None or state.done:
            raise EpisodeFinished("episode is finished; call reset()")
        if action not in (FORWARD, BACKWARD, STAY):
            raise OutOfRange(f"action {action} not in [0, {N_ACTIONS})")
        new_node, move = self._move(state.current_node, action)
        state.current_node = new_node
        state.steps_taken += 1
        reached = new_node == state.goal_node
        reward = 1.0 if reached else 0.0
        state.done = reached or state.steps_taken >= state.horizon
        onehot = np.zeros(self.config.n_actions, dtype=np.float32)
        onehot[action] = 1.0
        self._prev_action = onehot
        obs = self.obs_model.observe(new_node, move, onehot, state.goal_node)
        info = {
            "reached_goal": reached,
            "geodesic_to_goal": geodesic(self.graph, new_node, state.goal_node),
        }
        return StepResult(observation=obs, reward=reward, done=state.done, info=info)
