"""Command-line surface: config files, checkpoints, experiment commands.

Config files are UTF-8 ``key = value`` lines with dotted section keys
('#' starts a comment); unknown keys are rejected to catch typos. Every
command is deterministic given the config and seed list. Log verbosity
comes from the ODONAV_LOG environment variable (error | info | debug).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import os
import struct
import sys

import numpy as np

from . import evalharness, percept, policynet, ppo, routeworld
from .errors import ConfigError, FormatError, OdonavError, VersionError

log = logging.getLogger("odonav.cli")

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1

# key -> (type tag, default); tags: int, float, bool, str, ints, floats
CONFIG_REGISTRY = {
    "route.kind": ("str", "synthetic"),  # synthetic | file
    "route.n": ("int", 100),
    "route.seed": ("int", 0),
    "route.loop": ("bool", True),
    "route.waviness": ("float", 0.15),
    "route.path": ("str", ""),
    "features.kind": ("str", "synthetic"),  # synthetic | file
    "features.dim": ("int", 64),
    "features.smooth": ("int", 5),
    "features.seed": ("int", 0),
    "features.path": ("str", ""),
    "channels": ("str", "full"),  # full | motion | vision
    "goal.modality": ("str", "both"),  # visual | pose | both
    "env.horizon_min": ("int", 50),
    "env.horizon_scale": ("int", 4),
    "net.enc_units": ("int", 512),
    "net.hidden_units": ("int", 256),
    "curriculum.base": ("int", 5),
    "curriculum.growth": ("int", 2),
    "curriculum.max_distance": ("int", 0),  # 0 -> route max geodesic
    "curriculum.window": ("int", 100),
    "curriculum.threshold": ("float", 0.8),
    "ppo.gamma": ("float", 0.99),
    "ppo.gae_lambda": ("float", 0.95),
    "ppo.clip": ("float", 0.2),
    "ppo.value_coef": ("float", 0.5),
    "ppo.entropy_coef": ("float", 0.01),
    "ppo.lr": ("float", 2.5e-4),
    "ppo.adam_beta1": ("float", 0.9),
    "ppo.adam_beta2": ("float", 0.999),
    "ppo.adam_eps": ("float", 1e-5),
    "ppo.rollout_len": ("int", 128),
    "ppo.n_envs": ("int", 8),
    "ppo.epochs": ("int", 4),
    "ppo.minibatches": ("int", 4),
    "ppo.chunk_len": ("int", 16),
    "ppo.grad_clip_norm": ("float", 0.5),
    "ppo.total_episodes": ("int", 2000),
    "run.seeds": ("ints", (0, 1, 2, 3, 4, 5)),
    "run.out": ("str", "out"),
    "eval.episodes": ("int", 100),
    "eval.mode": ("str", "greedy"),
    "sweep.severities": ("floats", (0.0, 0.2, 0.4, 0.6, 0.8)),
    "sweep.noise_sigma_d": ("float", 0.05),
    "sweep.noise_sigma_theta": ("float", 0.02),
    "sweep.noise_bias": ("float", 0.02),
    "sweep.noise_scales": ("floats", (0.0, 0.5, 1.0, 2.0, 4.0)),
    "checkpoint.every": ("int", 0),
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(key: str, text: str):
    tag = CONFIG_REGISTRY[key][0]
    text = text.strip()
    try:
        if tag == "int":
            return int(text)
        if tag == "float":
            return float(text)
        if tag == "bool":
            return _parse_bool(text)
        if tag == "ints":
            return tuple(int(t) for t in text.split(",") if t.strip() != "")
        if tag == "floats":
            return tuple(float(t) for t in text.split(",") if t.strip() != "")
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def _format_value(key: str, value) -> str:
    tag = CONFIG_REGISTRY[key][0]
    if tag in ("ints", "floats"):
        return ",".join(repr(v) if tag == "floats" else str(v) for v in value)
    if tag == "bool":
        return "true" if value else "false"
    if tag == "float":
        return repr(value)
    return str(value)


def default_config() -> dict:
    return {k: v for k, (_, v) in CONFIG_REGISTRY.items()}


def apply_config_lines(cfg: dict, lines, source: str = "<config>",
                       extra: dict | None = None) -> dict:
    """Apply ``key = value`` lines onto a config dict.

    Keys outside the registry are errors unless they start with "meta.",
    which go to ``extra`` (checkpoint echoes carry metadata that way).
    """
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key.startswith("meta."):
            if extra is not None:
                extra[key] = value.strip()
            continue
        if key not in CONFIG_REGISTRY:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        cfg[key] = _parse_value(key, value)
    return cfg


def load_config(path: str | None, overrides=()) -> dict:
    cfg = default_config()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                apply_config_lines(cfg, fh, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    apply_config_lines(cfg, list(overrides), source="<override>")
    return cfg


def config_echo(cfg: dict, meta: dict | None = None) -> str:
    """Serialize a config (plus meta lines) as sorted key = value text."""
    lines = [f"{k} = {_format_value(k, cfg[k])}" for k in sorted(cfg)]
    for k in sorted(meta or {}):
        lines.append(f"{k} = {meta[k]}")
    return "\n".join(lines) + "\n"


def parse_echo(echo: str):
    """Inverse of config_echo: returns (config dict, meta dict)."""
    cfg = default_config()
    meta: dict = {}
    apply_config_lines(cfg, echo.splitlines(), source="<echo>", extra=meta)
    return cfg, meta


# ---------------------------------------------------------------------------
# synthetic worlds

def synth_route_poses(n: int, seed: int, loop: bool = True,
                      waviness: float = 0.15):
    """Random smooth route with ~1 m steps; headings follow displacement.

    Loops are wavy circles (a few random low-order radial harmonics);
    chains take the arc. Headings are set to the direction of the
    incoming displacement so dead reckoning reproduces the route exactly.
    """
    rng = np.random.default_rng(seed)
    radius = n / (2.0 * math.pi)
    phi = 2.0 * math.pi * np.arange(n) / n if loop else \
        math.pi * np.arange(n) / n
    r = np.full(n, radius)
    for harmonic in (2, 3, 5):
        amp = waviness * radius * rng.uniform(0.2, 1.0) / harmonic
        phase = rng.uniform(0, 2 * math.pi)
        r += amp * np.sin(harmonic * phi + phase)
    xs = r * np.cos(phi)
    ys = r * np.sin(phi)
    headings = np.empty(n)
    dx = np.diff(xs)
    dy = np.diff(ys)
    headings[1:] = np.arctan2(dy, dx)
    if loop:
        headings[0] = math.atan2(ys[0] - ys[-1], xs[0] - xs[-1])
    else:
        headings[0] = headings[1]
    return [routeworld.RoutePose(i, float(xs[i]), float(ys[i]),
                                 float(headings[i])) for i in range(n)]


def build_scene(cfg: dict) -> percept.Scene:
    if cfg["route.kind"] == "synthetic":
        poses = synth_route_poses(cfg["route.n"], cfg["route.seed"],
                                  cfg["route.loop"], cfg["route.waviness"])
    elif cfg["route.kind"] == "file":
        if not cfg["route.path"]:
            raise ConfigError("route.kind = file requires route.path")
        poses = routeworld.load_route_poses(cfg["route.path"])
    else:
        raise ConfigError(f"unknown route.kind {cfg['route.kind']!r}")
    graph = routeworld.build_route(poses, is_loop=cfg["route.loop"])
    if cfg["features.kind"] == "synthetic":
        feats = percept.synth_route_features(
            graph.n_nodes, cfg["features.dim"], cfg["features.smooth"],
            np.random.default_rng(cfg["features.seed"]))
    elif cfg["features.kind"] == "file":
        if not cfg["features.path"]:
            raise ConfigError("features.kind = file requires features.path")
        feats = percept.load_fmat(cfg["features.path"])
    else:
        raise ConfigError(f"unknown features.kind {cfg['features.kind']!r}")
    return percept.Scene.build(graph, feats)


def build_env_config(cfg: dict) -> routeworld.EnvConfig:
    return routeworld.EnvConfig(horizon_min=cfg["env.horizon_min"],
                                horizon_scale=cfg["env.horizon_scale"],
                                goal_modality=cfg["goal.modality"])


def build_dims(cfg: dict, visual_dim: int) -> policynet.NetDims:
    return policynet.dims_for_experiment(
        visual_dim, cfg["goal.modality"], cfg["channels"],
        enc_units=cfg["net.enc_units"], hidden_units=cfg["net.hidden_units"])


def build_ppo_config(cfg: dict, seed: int) -> ppo.PPOConfig:
    return ppo.PPOConfig(
        gamma=cfg["ppo.gamma"], gae_lambda=cfg["ppo.gae_lambda"],
        clip=cfg["ppo.clip"], value_coef=cfg["ppo.value_coef"],
        entropy_coef=cfg["ppo.entropy_coef"], lr=cfg["ppo.lr"],
        adam_beta1=cfg["ppo.adam_beta1"], adam_beta2=cfg["ppo.adam_beta2"],
        adam_eps=cfg["ppo.adam_eps"], rollout_len=cfg["ppo.rollout_len"],
        n_envs=cfg["ppo.n_envs"], epochs=cfg["ppo.epochs"],
        minibatches=cfg["ppo.minibatches"], chunk_len=cfg["ppo.chunk_len"],
        grad_clip_norm=cfg["ppo.grad_clip_norm"],
        total_episodes=cfg["ppo.total_episodes"], seed=seed)


def build_curriculum(cfg: dict, graph: routeworld.RouteGraph) -> ppo.CurriculumState:
    route_max = routeworld.max_geodesic(graph)
    cap = cfg["curriculum.max_distance"] or route_max
    cap = min(cap, route_max)
    caps = ppo.curriculum_caps(cap, base=min(cfg["curriculum.base"], cap),
                               growth=cfg["curriculum.growth"])
    return ppo.CurriculumState(caps=caps, window_size=cfg["curriculum.window"],
                               threshold=cfg["curriculum.threshold"])


# ---------------------------------------------------------------------------
# checkpoint container

def _dims_meta(dims: policynet.NetDims) -> dict:
    return {
        "meta.motion_dim": str(dims.motion_dim),
        "meta.visual_dim": str(dims.visual_dim),
        "meta.goal_visual_dim": str(dims.goal_visual_dim),
        "meta.goal_pose_dim": str(dims.goal_pose_dim),
        "meta.enc_units": str(dims.enc_units),
        "meta.hidden_units": str(dims.hidden_units),
        "meta.n_actions": str(dims.n_actions),
        "meta.motion_on": str(int(dims.motion_on)),
        "meta.visual_on": str(int(dims.visual_on)),
    }


def _dims_from_meta(meta: dict) -> policynet.NetDims:
    try:
        return policynet.NetDims(
            motion_dim=int(meta["meta.motion_dim"]),
            visual_dim=int(meta["meta.visual_dim"]),
            goal_visual_dim=int(meta["meta.goal_visual_dim"]),
            goal_pose_dim=int(meta["meta.goal_pose_dim"]),
            enc_units=int(meta["meta.enc_units"]),
            hidden_units=int(meta["meta.hidden_units"]),
            n_actions=int(meta["meta.n_actions"]),
            motion_on=bool(int(meta["meta.motion_on"])),
            visual_on=bool(int(meta["meta.visual_on"])))
    except KeyError as exc:
        raise FormatError(f"checkpoint echo lacks {exc} line") from None


class Checkpoint:
    """Trained parameters plus the config echo that produced them."""

    def __init__(self, params: policynet.PolicyParams, config: dict,
                 meta: dict):
        self.params = params
        self.config = config
        self.meta = meta

    @property
    def episodes(self) -> int:
        return int(self.meta.get("meta.episodes", "0"))

    @property
    def seed(self) -> int:
        return int(self.meta.get("meta.seed", "0"))


def save_checkpoint(path, params: policynet.PolicyParams, config: dict,
                    episodes: int = 0, seed: int = 0,
                    rng_digest: str = "") -> None:
    """Write the binary checkpoint container.

    Layout: magic "CKPT", LE u32 version, LE u32 echo byte length, UTF-8
    ``key = value`` echo, LE u32 tensor count, then per tensor: LE u32
    name length, UTF-8 name, LE u32 rows, LE u32 cols, LE float32 payload.
    """
    meta = _dims_meta(params.dims)
    meta["meta.episodes"] = str(episodes)
    meta["meta.seed"] = str(seed)
    meta["meta.rng_digest"] = rng_digest or "0" * 16
    echo = config_echo(config, meta).encode("utf-8")
    tensors = [(name, np.ascontiguousarray(arr, dtype="<f4"))
               for name, arr in params.named()]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            fh.write(mat.tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated checkpoint (wanted {n} bytes at "
                              f"offset {self.pos}, have {len(self.blob)})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    rd = _Reader(blob)
    if rd.take(4) != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    version = rd.u32()
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    echo = rd.take(rd.u32()).decode("utf-8")
    config, meta = parse_echo(echo)
    dims = _dims_from_meta(meta)
    tensors = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        rows = rd.u32()
        cols = rd.u32()
        payload = rd.take(rows * cols * 4)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    if rd.pos != len(blob):
        raise FormatError(f"{len(blob) - rd.pos} trailing bytes in checkpoint")
    params = policynet.init_params(dims, np.random.default_rng(0))
    for name, arr in params.named():
        if name not in tensors:
            raise FormatError(f"checkpoint missing tensor {name!r}")
        loaded = np.ascontiguousarray(tensors[name], dtype=np.float32)
        setattr(params, name, loaded.reshape(arr.shape))
    return Checkpoint(params, config, meta)


# ---------------------------------------------------------------------------
# commands

def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(
                 os.environ.get("ODONAV_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_gen(cfg: dict, out_dir: str) -> int:
    """Write route poses, FMAT features, and derived odometry files."""
    os.makedirs(out_dir, exist_ok=True)
    scene = build_scene(cfg)
    routeworld.write_route_poses(scene.graph.nodes,
                                 os.path.join(out_dir, "route_poses.txt"))
    percept.write_fmat(scene.features, os.path.join(out_dir, "features.fmat"))
    percept.write_odometry(scene.odometry,
                           os.path.join(out_dir, "odometry.txt"))
    log.info("wrote route (%d nodes), features %s, odometry (%d steps) to %s",
             scene.graph.n_nodes, scene.features.shape, len(scene.odometry),
             out_dir)
    return 0


def cmd_ingest(pose_path: str, out_dir: str) -> int:
    """Convert a 3x4-matrix pose file to the route pose text format."""
    poses = percept.ingest_kitti_poses(pose_path)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "route_poses.txt")
    routeworld.write_route_poses(poses, out_path)
    log.info("ingested %d poses -> %s", len(poses), out_path)
    return 0


def run_training(cfg: dict, seed: int, out_dir: str) -> str:
    """One training run; returns the final checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    scene = build_scene(cfg)
    dims = build_dims(cfg, scene.features.shape[1])
    curve_path = os.path.join(out_dir, "curve.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")

    def hook(params, episodes, tag):
        name = "checkpoint_diag.bin" if tag == "diagnostic" else f"checkpoint_{tag}.bin"
        save_checkpoint(os.path.join(out_dir, name), params, cfg,
                        episodes=episodes, seed=seed)

    setup = ppo.TrainSetup(
        scene=scene, env_config=build_env_config(cfg), dims=dims,
        ppo=build_ppo_config(cfg, seed),
        curriculum=build_curriculum(cfg, scene.graph),
        curve_path=curve_path, checkpoint_hook=hook,
        checkpoint_every=cfg["checkpoint.every"])
    result = ppo.train(setup)
    save_checkpoint(ckpt_path, result.params, cfg, episodes=result.episodes,
                    seed=seed, rng_digest=result.rng_digest)
    log.info("seed %d: %d episodes, final level %d/%d -> %s", seed,
             result.episodes, result.curriculum.level,
             result.curriculum.n_levels, ckpt_path)
    return ckpt_path


def cmd_train(cfg: dict, out_dir: str) -> int:
    for seed in cfg["run.seeds"]:
        run_training(cfg, seed, os.path.join(out_dir, f"seed_{seed}"))
    return 0


def _deploy_one(ckpt: Checkpoint, cfg: dict, n_episodes: int, mode: str,
                rng_seed: int) -> evalharness.SuccessStats:
    scene = build_scene(cfg)
    env_config = build_env_config(cfg)
    model = percept.ObservationModel.build(scene, env_config.goal_modality)
    level = build_curriculum(cfg, scene.graph).max_range()
    return evalharness.deploy(ckpt.params, scene.graph, env_config, model,
                              level, n_episodes, mode,
                              np.random.default_rng(rng_seed))


def _load_checkpoints(paths):
    if not paths:
        raise ConfigError("at least one --checkpoint is required")
    return [load_checkpoint(p) for p in paths]


def _sweep_cfg(ckpt: Checkpoint, cfg_path, overrides) -> dict:
    """Deployment config: the checkpoint echo unless --config overrides it."""
    if cfg_path:
        return load_config(cfg_path, overrides)
    cfg = dict(ckpt.config)
    apply_config_lines(cfg, list(overrides), source="<override>")
    return cfg


def cmd_deploy(ckpt_paths, cfg_path, overrides, out_dir: str) -> int:
    pairs = []
    for ckpt in _load_checkpoints(ckpt_paths):
        cfg = _sweep_cfg(ckpt, cfg_path, overrides)
        stats = _deploy_one(ckpt, cfg, cfg["eval.episodes"],
                            cfg["eval.mode"], ckpt.seed)
        pairs.append((ckpt.seed, stats))
        log.info("seed %d: success %.3f over %d episodes", ckpt.seed,
                 stats.success_rate, stats.episodes)
    merged = evalharness.aggregate_stats(pairs)
    evalharness.export_report(merged, out_dir)
    log.info("pooled success %.3f -> %s", merged.success_rate, out_dir)
    return 0


def _aggregate_sweeps(sweeps) -> evalharness.SweepResult:
    """Pool per-seed sweeps point-by-point (params must align)."""
    n_points = len(sweeps[0][1].points)
    merged = []
    for i in range(n_points):
        param = sweeps[0][1].points[i].param
        ates = [s.points[i].ate_m for _, s in sweeps
                if s.points[i].ate_m is not None]
        stats = evalharness.aggregate_stats(
            [(seed, s.points[i].stats) for seed, s in sweeps])
        merged.append(evalharness.SweepPoint(
            param=param, ate_m=float(np.mean(ates)) if ates else None,
            stats=stats))
    return evalharness.SweepResult(merged)


def cmd_sweep_appearance(ckpt_paths, cfg_path, overrides, out_dir: str) -> int:
    sweeps = []
    for ckpt in _load_checkpoints(ckpt_paths):
        cfg = _sweep_cfg(ckpt, cfg_path, overrides)
        scene = build_scene(cfg)
        env_config = build_env_config(cfg)
        level = build_curriculum(cfg, scene.graph).max_range()
        sweep = evalharness.appearance_sweep(
            ckpt.params, scene, env_config, cfg["sweep.severities"],
            cfg["eval.episodes"], cfg["eval.mode"], seed=ckpt.seed,
            level=level)
        sweeps.append((ckpt.seed, sweep))
    merged = _aggregate_sweeps(sweeps)
    evalharness.export_report(merged, out_dir, param_label="appearance severity")
    for p in merged.points:
        log.info("severity %.2f: success %.3f", p.param, p.stats.success_rate)
    return 0


def cmd_sweep_noise(ckpt_paths, cfg_path, overrides, out_dir: str) -> int:
    sweeps = []
    for ckpt in _load_checkpoints(ckpt_paths):
        cfg = _sweep_cfg(ckpt, cfg_path, overrides)
        scene = build_scene(cfg)
        env_config = build_env_config(cfg)
        level = build_curriculum(cfg, scene.graph).max_range()
        base = percept.NoiseModel(sigma_d=cfg["sweep.noise_sigma_d"],
                                  sigma_theta=cfg["sweep.noise_sigma_theta"],
                                  bias_scale=cfg["sweep.noise_bias"])
        grid = evalharness.scaled_noise_grid(base, cfg["sweep.noise_scales"])
        sweep = evalharness.noise_sweep(
            ckpt.params, scene, env_config, grid, cfg["eval.episodes"],
            cfg["eval.mode"], seed=ckpt.seed, level=level,
            noise_seed=1000 + ckpt.seed)
        sweeps.append((ckpt.seed, sweep))
    merged = _aggregate_sweeps(sweeps)
    evalharness.export_report(merged, out_dir, param_label="noise scale")
    for p in merged.points:
        log.info("scale %.2f (ate %.2f m): success %.3f", p.param,
                 p.ate_m if p.ate_m is not None else float("nan"),
                 p.stats.success_rate)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odonav",
        description="goal-driven route navigation: training, deployment, "
                    "and robustness sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (repeatable)")
        if checkpoint:
            p.add_argument("--checkpoint", action="append", default=[],
                           metavar="PATH", help="checkpoint file (repeatable)")

    common(sub.add_parser("gen", help="write synthetic route/feature/odometry files"))
    p_ing = sub.add_parser("ingest", help="convert a 3x4 pose matrix file")
    p_ing.add_argument("poses", help="pose file, 12 floats per line")
    p_ing.add_argument("--out", default=None)
    p_tr = sub.add_parser("train", help="train one run per seed")
    common(p_tr)
    p_tr.add_argument("--seed", default=None,
                      help="comma-separated seed list (overrides run.seeds)")
    common(sub.add_parser("deploy", help="deployment statistics"), checkpoint=True)
    common(sub.add_parser("sweep-appearance",
                          help="success vs appearance severity"), checkpoint=True)
    common(sub.add_parser("sweep-noise",
                          help="success vs odometry noise"), checkpoint=True)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            return cmd_ingest(args.poses, args.out or "out")
        overrides = list(args.override)
        if args.command in ("gen", "train"):
            cfg = load_config(args.config, overrides)
            if getattr(args, "seed", None):
                cfg["run.seeds"] = _parse_value("run.seeds", args.seed)
            out_dir = args.out or cfg["run.out"]
            if args.command == "gen":
                return cmd_gen(cfg, out_dir)
            return cmd_train(cfg, out_dir)
        out_dir = args.out or "out"
        if args.command == "deploy":
            return cmd_deploy(args.checkpoint, args.config, overrides, out_dir)
        if args.command == "sweep-appearance":
            return cmd_sweep_appearance(args.checkpoint, args.config,
                                        overrides, out_dir)
        if args.command == "sweep-noise":
            return cmd_sweep_noise(args.checkpoint, args.config, overrides,
                                   out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (OdonavError, OSError) as exc:
        print(f"error:{type(exc).__name__}:{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
