"""Deployment of trained policies and the robustness studies.

Three studies mirror the training-time channel ablations: plain greedy
deployment statistics, success under increasing appearance shift of the
visual channel (goal embeddings stay at the training condition), and
success under increasing odometry corruption (motion states and pose
goals regenerate from the corrupted dead-reckoned track, paired with the
measured trajectory error).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import policynet
from .errors import InvalidInput, InvalidParameter, IoError
from .percept import AppearanceShift, NoiseModel, ObservationModel, Scene
from .routeworld import CurriculumLevel, EnvConfig, RouteEnv, geodesic


@dataclass
class SuccessStats:
    """Deployment outcomes over a batch of episodes.

    ``mean_steps``/``median_steps``/``efficiency`` cover successful
    episodes only (efficiency = geodesic(start, goal) / steps, in (0, 1]);
    they are None when nothing succeeded. ``per_seed`` maps seed ->
    success rate for aggregated multi-seed statistics.
    """

    episodes: int
    successes: int
    success_rate: float
    mean_steps: float | None
    median_steps: float | None
    efficiency: float | None
    per_seed: dict | None = None
    steps_success: np.ndarray = field(default=None, repr=False)
    geo_success: np.ndarray = field(default=None, repr=False)


@dataclass
class SweepPoint:
    param: float
    ate_m: float | None
    stats: SuccessStats


@dataclass
class SweepResult:
    points: list

    def __post_init__(self):
        params = [p.param for p in self.points]
        if any(b <= a for a, b in zip(params, params[1:])):
            raise InvalidParameter(f"sweep params must strictly increase: {params}")


def _stats_from_outcomes(success, steps, geo) -> SuccessStats:
    success = np.asarray(success, dtype=bool)
    steps = np.asarray(steps, dtype=np.int64)
    geo = np.asarray(geo, dtype=np.int64)
    n = success.size
    wins = int(success.sum())
    s_steps = steps[success]
    s_geo = geo[success]
    if wins:
        eff = float((s_geo / s_steps).mean())
        mean_steps = float(s_steps.mean())
        median_steps = float(np.median(s_steps))
    else:
        eff = mean_steps = median_steps = None
    return SuccessStats(episodes=n, successes=wins, success_rate=wins / n,
                        mean_steps=mean_steps, median_steps=median_steps,
                        efficiency=eff, steps_success=s_steps, geo_success=s_geo)


def deploy(params: policynet.PolicyParams, graph, env_config: EnvConfig,
           obs_model: ObservationModel, level: CurriculumLevel,
           n_episodes: int, mode: str, rng: np.random.Generator,
           policy_fn=None) -> SuccessStats:
    """Run episodes under the trained policy and collect success statistics.

    Episodes run batched in lockstep (they are independent); all resets
    draw from ``rng`` up front, so results are deterministic per seed and
    independent of batch internals. ``policy_fn(env_idx, state) -> action``
    overrides the network when given (used by scripted-oracle tests).
    """
    if n_episodes < 1:
        raise InvalidInput(f"n_episodes must be >= 1, got {n_episodes}")
    if mode not in ("greedy", "stochastic"):
        raise InvalidParameter(f"unknown mode {mode!r}")
    envs = [RouteEnv(graph, env_config, obs_model) for _ in range(n_episodes)]
    obs = []
    geo0 = []
    for env in envs:
        state, ob = env.reset(level, rng)
        obs.append(ob)
        geo0.append(geodesic(graph, state.start_node, state.goal_node))
    B = n_episodes
    H = params.dims.hidden_units
    h = np.zeros((B, H), np.float32)
    c = np.zeros_like(h)
    alive = np.ones(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    ones = np.ones((1, B), np.float32)
    while alive.any():
        motion = np.stack([o.motion for o in obs])
        visual = np.stack([o.visual for o in obs])
        goal = np.stack([o.goal for o in obs])
        prev = np.stack([o.prev_action for o in obs])
        logits, _, h, c, _ = policynet.forward_sequence(
            params, motion[None], visual[None], goal[None], prev[None],
            ones, h, c)
        if mode == "greedy":
            actions = np.argmax(logits[0], axis=1)
        else:
            actions, _, _ = policynet.sample_actions(logits[0], rng)
        for b in np.nonzero(alive)[0]:
            action = int(actions[b])
            if policy_fn is not None:
                action = policy_fn(b, envs[b].state)
            result = envs[b].step(action)
            obs[b] = result.observation
            if result.done:
                alive[b] = False
                success[b] = result.info["reached_goal"]
                steps[b] = envs[b].state.steps_taken
    return _stats_from_outcomes(success, steps, geo0)


def aggregate_stats(pairs) -> SuccessStats:
    """Pool per-seed deployments into one SuccessStats with a breakdown."""
    if not pairs:
        raise InvalidInput("nothing to aggregate")
    success = []
    steps = []
    geo = []
    per_seed = {}
    episodes = 0
    wins = 0
    for seed, st in pairs:
        per_seed[int(seed)] = st.success_rate
        episodes += st.episodes
        wins += st.successes
        if st.steps_success is not None and len(st.steps_success):
            steps.append(st.steps_success)
            geo.append(st.geo_success)
    steps_all = np.concatenate(steps) if steps else np.empty(0, np.int64)
    geo_all = np.concatenate(geo) if geo else np.empty(0, np.int64)
    flags = np.concatenate([np.ones(len(steps_all), bool),
                            np.zeros(episodes - len(steps_all), bool)])
    pad = np.ones(episodes - len(steps_all), np.int64)
    merged = _stats_from_outcomes(
        flags, np.concatenate([steps_all, pad]), np.concatenate([geo_all, pad]))
    merged.per_seed = per_seed
    return merged


def _point_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, index]))


def appearance_sweep(params: policynet.PolicyParams, scene: Scene,
                     env_config: EnvConfig, severities, n_episodes: int,
                     mode: str, seed: int, level: CurriculumLevel,
                     global_fraction: float = 0.5,
                     shift_seed: int = 7) -> SweepResult:
    """Deploy under increasing embedding corruption of the visual channel.

    Goal embeddings and odometry stay at the training condition. Every
    point reuses the same deployment seed, so the severity-0 point
    reproduces a plain deployment exactly.
    """
    points = []
    for sev in severities:
        shift = AppearanceShift(severity=float(sev),
                                global_fraction=global_fraction,
                                seed=shift_seed)
        model = ObservationModel.build(scene, env_config.goal_modality,
                                       shift=shift)
        stats = deploy(params, scene.graph, env_config, model, level,
                       n_episodes, mode, np.random.default_rng(seed))
        points.append(SweepPoint(param=float(sev), ate_m=None, stats=stats))
    return SweepResult(points)


def noise_sweep(params: policynet.PolicyParams, scene: Scene,
                env_config: EnvConfig, grid, n_episodes: int, mode: str,
                seed: int, level: CurriculumLevel,
                noise_seed: int = 11) -> SweepResult:
    """Deploy with motion states regenerated from corrupted odometry.

    ``grid`` is a list of (param_value, NoiseModel) with strictly
    increasing param values. Each point integrates a fresh corrupted
    track, records its positional RMSE against the route, and deploys
    with the same seed as every other point.
    """
    points = []
    for i, (param, model) in enumerate(grid):
        obs_model = ObservationModel.build(scene, env_config.goal_modality,
                                           noise=model,
                                           noise_rng=_point_rng(noise_seed, i))
        stats = deploy(params, scene.graph, env_config, obs_model, level,
                       n_episodes, mode, np.random.default_rng(seed))
        points.append(SweepPoint(param=float(param),
                                 ate_m=obs_model.track_ate(), stats=stats))
    return SweepResult(points)


def scaled_noise_grid(base: NoiseModel, scales) -> list:
    """(scale, NoiseModel) grid points from a base model and multipliers."""
    return [(float(s), NoiseModel(sigma_d=base.sigma_d * s,
                                  sigma_theta=base.sigma_theta * s,
                                  bias_scale=base.bias_scale * s))
            for s in scales]


# ---------------------------------------------------------------------------
# report files

def stats_to_dict(stats: SuccessStats) -> dict:
    out = {
        "episodes": stats.episodes,
        "successes": stats.successes,
        "success_rate": stats.success_rate,
        "mean_steps": stats.mean_steps,
        "median_steps": stats.median_steps,
        "efficiency": stats.efficiency,
    }
    if stats.per_seed:
        for seed in sorted(stats.per_seed):
            out[f"seed_{seed}_success_rate"] = stats.per_seed[seed]
    return out


def load_stats(path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), "g")


def sweep_to_csv_lines(sweep: SweepResult) -> list:
    lines = ["param,ate_m,success_rate,mean_steps,efficiency"]
    for p in sweep.points:
        lines.append(",".join([
            _fmt(p.param), _fmt(p.ate_m), _fmt(p.stats.success_rate),
            _fmt(p.stats.mean_steps), _fmt(p.stats.efficiency)]))
    return lines


def svg_line_chart(xs, ys, xlabel: str, ylabel: str,
                   width: int = 640, height: int = 400) -> str:
    """Self-contained SVG polyline chart; deterministic for fixed inputs."""
    ml, mr, mt, mb = 60, 20, 20, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(1.0, max(ys))
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(x):
        return ml + (x - x_lo) / x_span * pw

    def py(y):
        return mt + ph - (y - y_lo) / y_span * ph

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    marks = "".join(
        f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#1f6fb2"/>'
        for x, y in zip(xs, ys))
    xticks = "".join(
        f'<line x1="{px(x):.2f}" y1="{mt + ph}" x2="{px(x):.2f}" '
        f'y2="{mt + ph + 4}" stroke="#333"/>'
        f'<text x="{px(x):.2f}" y="{mt + ph + 16}" font-size="10" '
        f'text-anchor="middle">{x:g}</text>' for x in xs)
    yticks = "".join(
        f'<line x1="{ml - 4}" y1="{py(v):.2f}" x2="{ml}" y2="{py(v):.2f}" '
        f'stroke="#333"/>'
        f'<text x="{ml - 7}" y="{py(v) + 3:.2f}" font-size="10" '
        f'text-anchor="end">{v:g}</text>'
        for v in (y_lo, (y_lo + y_hi) / 2, y_hi))
    return (
        f'<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        f'stroke="#333"/>'
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="#333"/>'
        f'{xticks}{yticks}'
        f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" '
        f'stroke-width="2"/>{marks}'
        f'<text x="{ml + pw / 2:.0f}" y="{height - 8}" font-size="12" '
        f'text-anchor="middle">{xlabel}</text>'
        f'<text x="14" y="{mt + ph / 2:.0f}" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2:.0f})">'
        f'{ylabel}</text>'
        f'</svg>\n')


def export_report(result, out_dir, param_label: str = "parameter") -> list:
    """Write report files for a SuccessStats or SweepResult; returns paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        if isinstance(result, SuccessStats):
            path = os.path.join(out_dir, "stats.json")
            with open(path, "w", encoding="ascii") as fh:
                json.dump(stats_to_dict(result), fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(path)
        elif isinstance(result, SweepResult):
            csv_path = os.path.join(out_dir, "sweep.csv")
            with open(csv_path, "w", encoding="ascii") as fh:
                fh.write("\n".join(sweep_to_csv_lines(result)) + "\n")
            written.append(csv_path)
            svg_path = os.path.join(out_dir, "sweep.svg")
            xs = [p.param for p in result.points]
            ys = [p.stats.success_rate for p in result.points]
            with open(svg_path, "w", encoding="ascii") as fh:
                fh.write(svg_line_chart(xs, ys, param_label, "success rate"))
            written.append(svg_path)
            json_path = os.path.join(out_dir, "stats.json")
            payload = {"points": [
                {"param": p.param, "ate_m": p.ate_m, **stats_to_dict(p.stats)}
                for p in result.points]}
            with open(json_path, "w", encoding="ascii") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(json_path)
        else:
            raise InvalidInput(f"cannot export {type(result).__name__}")
        return written
    except OSError as exc:
        raise IoError(str(exc)) from None
