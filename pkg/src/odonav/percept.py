"""Observation channels: visual embeddings and dead-reckoned ego-motion.

Both channels the navigation agent consumes are handled here as data, not
as networks: per-frame visual embeddings (loaded from disk or synthesized)
and frame-to-frame relative motion (derived from route poses or ingested).
Each channel has a parametric corruption model, a severity-controlled
embedding shift emulating appearance change (day/night style condition
transitions), and a scale-bias + Gaussian noise model emulating odometry
of varying precision, plus the trajectory-error metric used to quantify
the latter.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    InvalidInput,
    InvalidParameter,
    MissingChannel,
    OutOfRange,
    ParseError,
    VersionError,
)
from .routeworld import RouteGraph, RoutePose, wrap_angle

log = logging.getLogger("odonav.percept")

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
MOTION_DIM = 6
POSE_GOAL_DIM = 4
UNIT_NORM_TOL = 1e-5


# ---------------------------------------------------------------------------
# feature matrices

def write_fmat(matrix: np.ndarray, path) -> None:
    """Write a feature matrix in the FMAT container.

    Layout: magic "FMAT", little-endian u32 version=1, u32 rows, u32 cols,
    then rows*cols little-endian float32, row-major.
    """
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInput(f"need a non-empty 2-d matrix, got shape {matrix.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<III", FMAT_VERSION, rows, cols))
        fh.write(arr.tobytes())


def load_fmat(path) -> np.ndarray:
    """Load an FMAT file; rows far from unit norm are renormalized with a warning."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"file too short for FMAT header ({len(blob)} bytes)")
    if blob[:4] != FMAT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != FMAT_VERSION:
        raise VersionError(f"unsupported FMAT version {version}")
    if rows == 0 or cols == 0:
        raise FormatError(f"degenerate shape {rows}x{cols}")
    expected = 16 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(f"payload size {len(blob) - 16}, expected {expected - 16}")
    mat = np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, cols)
    mat = np.ascontiguousarray(mat, dtype=np.float32)
    norms = np.linalg.norm(mat, axis=1)
    off = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if off.any():
        log.warning("%d/%d feature rows off unit norm (max dev %.3g); renormalizing",
                    int(off.sum()), rows, float(np.abs(norms - 1.0).max()))
        safe = np.where(norms[off] > 0, norms[off], 1.0)
        mat[off] = mat[off] / safe[:, None]
    return mat


def synth_route_features(n: int, d: int, smooth_l: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Synthesize unit-norm per-frame embeddings with local similarity.

    White Gaussian noise is smoothed circularly along the frame axis with a
    Gaussian kernel of width ``smooth_l``, so nearby frames look alike and
    distant frames decorrelate; wraparound keeps loop routes seamless.
    """
    if n < 2 or d < 2 or smooth_l < 1:
        raise InvalidParameter(f"need n>=2, d>=2, smooth_l>=1, got ({n}, {d}, {smooth_l})")
    noise = rng.standard_normal((n, d))
    offsets = (np.arange(n) + n // 2) % n - n // 2
    kernel = np.exp(-0.5 * (offsets / float(smooth_l)) ** 2)
    smoothed = np.fft.irfft(
        np.fft.rfft(noise, axis=0) * np.fft.rfft(kernel)[:, None], n=n, axis=0)
    return _unit_rows(smoothed).astype(np.float32)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.where(norms > 0, norms, 1.0)


@dataclass
class AppearanceShift:
    """Severity-controlled corruption of visual embeddings.

    Severity 0 is the identity. At severity 1 every row is replaced by a
    mixture of one global direction (weight ``sqrt(global_fraction)``,
    shared by all frames, emulating a scene-wide condition change) and
    independent per-frame noise. Deterministic per seed.
    """

    severity: float
    global_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.severity <= 1.0):
            raise InvalidParameter(f"severity {self.severity} outside [0, 1]")
        if not (0.0 <= self.global_fraction <= 1.0):
            raise InvalidParameter(f"global_fraction {self.global_fraction} outside [0, 1]")


def apply_appearance_shift(features: np.ndarray, shift: AppearanceShift) -> np.ndarray:
    """Blend embeddings toward a global direction plus per-frame noise."""
    feats = np.asarray(features, dtype=np.float32)
    if shift.severity == 0.0:
        return feats.copy()
    n, d = feats.shape
    rng = np.random.default_rng(shift.seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    per_frame = _unit_rows(rng.standard_normal((n, d)))
    s = shift.severity
    corruption = (math.sqrt(shift.global_fraction) * u[None, :]
                  + math.sqrt(1.0 - shift.global_fraction) * per_frame)
    mixed = (1.0 - s) * feats + s * corruption
    norms = np.linalg.norm(mixed, axis=1, keepdims=True)
    mixed = np.where(norms > 1e-12, mixed / np.where(norms > 0, norms, 1.0), u[None, :])
    return mixed.astype(np.float32)


# ---------------------------------------------------------------------------
# ego-motion

@dataclass
class OdometrySequence:
    """Per-step relative motion: signed arc step dd, heading increment dtheta."""

    dd: np.ndarray
    dtheta: np.ndarray

    def __post_init__(self):
        self.dd = np.asarray(self.dd, dtype=np.float64)
        self.dtheta = np.asarray(self.dtheta, dtype=np.float64)
        if self.dd.shape != self.dtheta.shape or self.dd.ndim != 1:
            raise InvalidInput("dd and dtheta must be equal-length 1-d arrays")

    def __len__(self) -> int:
        return len(self.dd)

    @property
    def mean_step(self) -> float:
        if len(self.dd) == 0:
            return 1.0
        m = float(np.abs(self.dd).mean())
        return m if m > 0 else 1.0


def _relative_motion(a: RoutePose, b: RoutePose):
    """(dd, dtheta) taking pose a to pose b under rotate-then-translate."""
    dtheta = wrap_angle(b.heading - a.heading)
    dx = b.x - a.x
    dy = b.y - a.y
    dist = math.hypot(dx, dy)
    along = dx * math.cos(b.heading) + dy * math.sin(b.heading)
    return (dist if along >= 0 else -dist), dtheta


def poses_to_odometry(poses) -> OdometrySequence:
    """Relative motions between consecutive poses (N-1 steps for N poses)."""
    if len(poses) < 2:
        raise InvalidInput(f"need at least 2 poses, got {len(poses)}")
    steps = [_relative_motion(poses[t], poses[t + 1]) for t in range(len(poses) - 1)]
    dd, dtheta = zip(*steps)
    return OdometrySequence(np.array(dd), np.array(dtheta))


def route_odometry(graph: RouteGraph) -> OdometrySequence:
    """Odometry along a route; loops get the closing wrap step appended."""
    odo = poses_to_odometry(graph.nodes)
    if graph.is_loop:
        wrap_dd, wrap_dtheta = _relative_motion(graph.nodes[-1], graph.nodes[0])
        odo = OdometrySequence(np.append(odo.dd, wrap_dd),
                               np.append(odo.dtheta, wrap_dtheta))
    return odo


def integrate_odometry(odo: OdometrySequence, start: RoutePose):
    """Dead-reckon a pose track from relative motions.

    heading[t+1] = wrap(heading[t] + dtheta[t]);
    position[t+1] = position[t] + dd[t] * (cos, sin)(heading[t+1]).
    Returns len(odo)+1 poses, frame indices from 0.
    """
    headings = start.heading + np.cumsum(odo.dtheta)
    xs = start.x + np.cumsum(odo.dd * np.cos(headings))
    ys = start.y + np.cumsum(odo.dd * np.sin(headings))
    track = [RoutePose(0, start.x, start.y, wrap_angle(start.heading))]
    for t in range(len(odo)):
        track.append(RoutePose(t + 1, float(xs[t]), float(ys[t]),
                               wrap_angle(float(headings[t]))))
    return track


@dataclass
class NoiseModel:
    """Parametric odometry error: multiplicative step noise, additive
    heading noise, and a systematic step-scale bias."""

    sigma_d: float = 0.0
    sigma_theta: float = 0.0
    bias_scale: float = 0.0

    def __post_init__(self):
        if self.sigma_d < 0 or self.sigma_theta < 0:
            raise InvalidParameter("noise sigmas must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.sigma_d == 0 and self.sigma_theta == 0 and self.bias_scale == 0


def corrupt_odometry(odo: OdometrySequence, noise: NoiseModel,
                     rng: np.random.Generator) -> OdometrySequence:
    """dd' = dd*(1 + bias + N(0, sigma_d^2)); dtheta' = dtheta + N(0, sigma_theta^2)."""
    eps_d = rng.normal(0.0, noise.sigma_d, size=len(odo))
    eps_t = rng.normal(0.0, noise.sigma_theta, size=len(odo))
    return OdometrySequence(odo.dd * (1.0 + noise.bias_scale + eps_d),
                            odo.dtheta + eps_t)


def write_odometry(odo: OdometrySequence, path) -> None:
    """Write relative motions as text lines ``dd dtheta``."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# odometry steps: dd dtheta\n")
        for dd, dtheta in zip(odo.dd, odo.dtheta):
            fh.write(f"{float(dd)!r} {float(dtheta)!r}\n")


def load_odometry(path) -> OdometrySequence:
    """Parse an odometry text file; '#' starts a comment line."""
    dd = []
    dtheta = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.split()
            if len(tokens) != 2:
                raise ParseError(f"line {lineno}: expected 2 fields, got {len(tokens)}")
            try:
                dd.append(float(tokens[0]))
                dtheta.append(float(tokens[1]))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return OdometrySequence(np.array(dd), np.array(dtheta))


def _positions_of(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        return np.asarray(poses, dtype=np.float64).reshape(len(poses), -1)[:, :2]
    return np.array([[p.x, p.y] for p in poses], dtype=np.float64)


def ate_rmse(estimated, reference) -> float:
    """Root-mean-square positional error between two equal-length tracks.

    No alignment is applied; tracks are expected to share their origin.
    """
    est = _positions_of(estimated)
    ref = _positions_of(reference)
    if est.shape != ref.shape:
        raise InvalidInput(f"track length mismatch: {est.shape} vs {ref.shape}")
    if len(est) == 0:
        raise InvalidInput("empty trajectories")
    return float(np.sqrt(((est - ref) ** 2).sum(axis=1).mean()))


def motion_state_at(track, t: int, extent: float, mean_step: float) -> np.ndarray:
    """Six-component motion state at frame t of a dead-reckoned track.

    Layout: [x/L, y/L, sin(h), cos(h), dd/mean_step, dtheta], where the
    last two describe the forward step arriving at t (zeros at t = 0).
    """
    if not (0 <= t < len(track)):
        raise OutOfRange(f"t={t} outside [0, {len(track)})")
    pose = track[t]
    if t == 0:
        dd, dtheta = 0.0, 0.0
    else:
        dd, dtheta = _relative_motion(track[t - 1], track[t])
    scale = extent if extent > 0 else 1.0
    step = mean_step if mean_step > 0 else 1.0
    return np.array([pose.x / scale, pose.y / scale,
                     math.sin(pose.heading), math.cos(pose.heading),
                     dd / step, dtheta], dtype=np.float32)


# ---------------------------------------------------------------------------
# KITTI ingestion

def ingest_kitti_poses(path):
    """Read 3x4 row-major pose matrices (12 floats per line) as route poses.

    Planar projection onto the camera ground plane: position = (t_x, t_z),
    heading = atan2(R[0][2], R[2][2]).
    """
    poses = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            tokens = text.split()
            if len(tokens) != 12:
                raise ParseError(f"line {lineno}: expected 12 numeric tokens, "
                                 f"got {len(tokens)}")
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            heading = math.atan2(vals[2], vals[10])
            poses.append(RoutePose(len(poses), vals[3], vals[11], heading))
    return poses


# ---------------------------------------------------------------------------
# goal encoding and the per-node observation provider

def _pose_goal_vec(x: float, y: float, heading: float, extent: float) -> np.ndarray:
    scale = extent if extent > 0 else 1.0
    return np.array([x / scale, y / scale, math.sin(heading), math.cos(heading)],
                    dtype=np.float32)


def goal_observation(graph: RouteGraph, features, goal_node: int,
                     modality: str) -> np.ndarray:
    """Goal vector for an episode: embedding row, normalized pose, or both."""
    if not (0 <= goal_node < graph.n_nodes):
        raise OutOfRange(f"goal node {goal_node} outside [0, {graph.n_nodes})")
    if modality in ("visual", "both") and features is None:
        raise MissingChannel(f"goal modality {modality!r} needs visual features")
    parts = []
    if modality in ("visual", "both"):
        parts.append(np.asarray(features[goal_node], dtype=np.float32))
    if modality in ("pose", "both"):
        node = graph.nodes[goal_node]
        parts.append(_pose_goal_vec(node.x, node.y, node.heading, graph.extent))
    if not parts:
        raise InvalidParameter(f"unknown goal modality {modality!r}")
    return np.concatenate(parts)


def goal_dim(visual_dim: int, modality: str) -> int:
    if modality == "visual":
        return visual_dim
    if modality == "pose":
        return POSE_GOAL_DIM
    if modality == "both":
        return visual_dim + POSE_GOAL_DIM
    raise InvalidParameter(f"unknown goal modality {modality!r}")


@dataclass
class Scene:
    """A route with its clean observation sources."""

    graph: RouteGraph
    features: np.ndarray  # (N, d) float32, training condition
    odometry: OdometrySequence  # relative motion, wrap step included on loops

    def __post_init__(self):
        if self.features.shape[0] != self.graph.n_nodes:
            raise InvalidInput(
                f"{self.features.shape[0]} feature rows for "
                f"{self.graph.n_nodes} route nodes")
        expected = self.graph.n_nodes - (0 if self.graph.is_loop else 1)
        if len(self.odometry) != expected:
            raise InvalidInput(f"odometry length {len(self.odometry)}, "
                               f"expected {expected}")

    @classmethod
    def build(cls, graph: RouteGraph, features: np.ndarray) -> "Scene":
        return cls(graph=graph, features=np.asarray(features, dtype=np.float32),
                   odometry=route_odometry(graph))


class ObservationModel:
    """Per-node observation source for a route environment.

    Holds the (possibly appearance-shifted) runtime embeddings, the clean
    goal embeddings, and a dead-reckoned pose track integrated from the
    (possibly corrupted) odometry. The motion state reads position and
    heading off the track and signs the step components by the direction
    the agent actually moved.
    """

    def __init__(self, graph: RouteGraph, features_runtime: np.ndarray,
                 features_goal: np.ndarray, odometry: OdometrySequence,
                 modality: str):
        n = graph.n_nodes
        self.graph = graph
        self.modality = modality
        self.features_runtime = np.asarray(features_runtime, dtype=np.float32)
        self.features_goal = np.asarray(features_goal, dtype=np.float32)
        self.odometry = odometry
        track = integrate_odometry(
            OdometrySequence(odometry.dd[:n - 1], odometry.dtheta[:n - 1]),
            graph.nodes[0])
        self.track = track
        self.track_xy = np.array([[p.x, p.y] for p in track], dtype=np.float64)
        self.track_heading = np.array([p.heading for p in track], dtype=np.float64)
        self.extent = graph.extent if graph.extent > 0 else 1.0
        self.mean_step = odometry.mean_step

    @classmethod
    def build(cls, scene: Scene, modality: str, shift: AppearanceShift | None = None,
              noise: NoiseModel | None = None,
              noise_rng: np.random.Generator | None = None) -> "ObservationModel":
        runtime = scene.features
        if shift is not None:
            runtime = apply_appearance_shift(scene.features, shift)
        odo = scene.odometry
        if noise is not None and not noise.is_zero:
            if noise_rng is None:
                raise InvalidParameter("a noise rng is required with a nonzero model")
            odo = corrupt_odometry(odo, noise, noise_rng)
        return cls(scene.graph, runtime, scene.features, odo, modality)

    @property
    def visual_dim(self) -> int:
        return self.features_runtime.shape[1]

    @property
    def goal_dim(self) -> int:
        return goal_dim(self.visual_dim, self.modality)

    def track_ate(self) -> float:
        """Positional RMSE of the dead-reckoned track vs the route poses."""
        return ate_rmse(self.track_xy, self.graph.positions)

    def goal_vec(self, goal_node: int) -> np.ndarray:
        parts = []
        if self.modality in ("visual", "both"):
            parts.append(self.features_goal[goal_node])
        if self.modality in ("pose", "both"):
            parts.append(_pose_goal_vec(self.track_xy[goal_node, 0],
                                        self.track_xy[goal_node, 1],
                                        float(self.track_heading[goal_node]),
                                        self.extent))
        return np.concatenate(parts)

    def _step_delta(self, node: int, move: int):
        if move == 0:
            return 0.0, 0.0
        n = self.graph.n_nodes
        if move > 0:
            edge = (node - 1) % n if self.graph.is_loop else node - 1
            sign = 1.0
        else:
            edge = node % n if self.graph.is_loop else node
            sign = -1.0
        return sign * float(self.odometry.dd[edge]), sign * float(self.odometry.dtheta[edge])

    def motion_vec(self, node: int, move: int) -> np.ndarray:
        dd, dtheta = self._step_delta(node, move)
        h = float(self.track_heading[node])
        return np.array([self.track_xy[node, 0] / self.extent,
                         self.track_xy[node, 1] / self.extent,
                         math.sin(h), math.cos(h),
                         dd / self.mean_step, dtheta], dtype=np.float32)

    def observe(self, node: int, move: int, prev_action: np.ndarray,
                goal_node: int):
        from .routeworld import Observation
        return Observation(motion=self.motion_vec(node, move),
                           visual=self.features_runtime[node],
                           goal=self.goal_vec(goal_node),
                           prev_action=prev_action)
