"""Recurrent PPO: rollout collection, GAE, clipped-surrogate updates with
Adam, and a success-gated curriculum over goal distance.

Minibatching is chunk-based: rollouts are cut into fixed-length chunks
with their initial hidden states recorded at collection time, and
backpropagation through time stops at chunk boundaries. Episode resets
inside a chunk are replayed exactly during updates via a per-step hidden
mask. Single-env runs with a fixed seed are bit-deterministic.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import policynet
from .errors import InvalidParameter, NumericalError, ShapeError
from .kernels import gae_scan
from .percept import Scene, ObservationModel
from .routeworld import CurriculumLevel, EnvConfig, RouteEnv


@dataclass
class PPOConfig:
    """Optimization hyperparameters; all tunable via experiment config."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 2.5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-5
    rollout_len: int = 128
    n_envs: int = 8
    epochs: int = 4
    minibatches: int = 4
    chunk_len: int = 16
    grad_clip_norm: float = 0.5
    total_episodes: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise InvalidParameter("gamma and gae_lambda must lie in [0, 1]")
        if self.clip <= 0:
            raise InvalidParameter("clip must be > 0")
        if min(self.value_coef, self.entropy_coef, self.lr,
               self.grad_clip_norm) < 0:
            raise InvalidParameter("coefficients must be >= 0")
        if self.rollout_len % self.chunk_len != 0:
            raise InvalidParameter(
                f"rollout_len {self.rollout_len} not divisible by "
                f"chunk_len {self.chunk_len}")
        if min(self.n_envs, self.epochs, self.minibatches, self.chunk_len) < 1:
            raise InvalidParameter("counts must be >= 1")


# ---------------------------------------------------------------------------
# curriculum

def curriculum_caps(max_distance: int, base: int = 5, growth: int = 2):
    """Goal-distance caps per level: base, base*growth, ... up to max_distance."""
    if max_distance < 1:
        raise InvalidParameter("max_distance must be >= 1")
    caps = []
    cap = base
    while cap < max_distance:
        caps.append(cap)
        cap *= growth
    caps.append(max_distance)
    return caps


@dataclass
class CurriculumState:
    """Level pointer plus the rolling success window gating promotion."""

    caps: list
    level: int = 1  # 1-based
    window_size: int = 100
    threshold: float = 0.8
    window: deque = field(default_factory=deque)

    def __post_init__(self):
        if not self.caps or any(c < 1 for c in self.caps):
            raise InvalidParameter("caps must be a non-empty list of >= 1")
        if sorted(set(self.caps)) != list(self.caps):
            raise InvalidParameter("caps must be strictly increasing")

    @property
    def n_levels(self) -> int:
        return len(self.caps)

    def level_range(self) -> CurriculumLevel:
        return CurriculumLevel(1, self.caps[self.level - 1])

    def max_range(self) -> CurriculumLevel:
        return CurriculumLevel(1, self.caps[-1])


def curriculum_advance(state: CurriculumState, success: bool) -> CurriculumState:
    """Record one finished episode; promote when the window clears the bar.

    Promotion empties the window; the top level never demotes.
    """
    state.window.append(1.0 if success else 0.0)
    while len(state.window) > state.window_size:
        state.window.popleft()
    if (state.level < state.n_levels
            and len(state.window) == state.window_size
            and sum(state.window) / state.window_size >= state.threshold):
        state.level += 1
        state.window.clear()
    return state


# ---------------------------------------------------------------------------
# GAE and the clipped objective

def compute_gae(rewards, values, dones, bootstrap_value, gamma: float,
                lam: float):
    """Generalized advantage estimation over (T,) or (T, B) arrays.

    delta[t] = r[t] + gamma*V[t+1]*(1-done[t]) - V[t];
    A[t] = delta[t] + gamma*lam*(1-done[t])*A[t+1]; returns = A + V.
    Computed in float64; done flags stop both bootstrap and recursion.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if r.shape != v.shape or r.shape != d.shape:
        raise ShapeError(f"shape mismatch: rewards {r.shape}, values {v.shape}, "
                         f"dones {d.shape}")
    squeeze = r.ndim == 1
    if squeeze:
        r, v, d = r[:, None], v[:, None], d[:, None]
    boot = np.asarray(bootstrap_value, dtype=np.float64).reshape(r.shape[1])
    adv = np.empty_like(r)
    gae_scan(np.ascontiguousarray(r), np.ascontiguousarray(v),
             np.ascontiguousarray(1.0 - d), boot.copy(),
             float(gamma), float(lam), adv)
    returns = adv + v
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std normalization over the whole update batch."""
    a = np.asarray(adv, dtype=np.float64)
    return (a - a.mean()) / (a.std() + 1e-8)


def ppo_loss(new_logp, old_logp, advantages, values_pred, returns, entropy,
             config: PPOConfig):
    """Clipped-surrogate PPO loss over one minibatch (float64).

    loss = -mean(min(rho*A, clip(rho)*A)) + value_coef*mean((V-R)^2)
           - entropy_coef*mean(H), rho = exp(new_logp - old_logp).

    Returns (loss, stats, sample_grads) where sample_grads holds the
    per-sample derivatives d_logp, d_value, d_entropy of the loss, for
    backpropagation into the network heads.
    """
    nl = np.asarray(new_logp, dtype=np.float64).ravel()
    ol = np.asarray(old_logp, dtype=np.float64).ravel()
    adv = np.asarray(advantages, dtype=np.float64).ravel()
    vp = np.asarray(values_pred, dtype=np.float64).ravel()
    ret = np.asarray(returns, dtype=np.float64).ravel()
    ent = np.asarray(entropy, dtype=np.float64).ravel()
    n = nl.size
    if not all(a.size == n for a in (ol, adv, vp, ret, ent)):
        raise ShapeError("minibatch arrays must have equal sizes")

    ratio = np.exp(nl - ol)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
    chosen = np.minimum(unclipped, clipped)
    policy_loss = -chosen.mean()
    value_err = vp - ret
    value_loss = float((value_err ** 2).mean())
    entropy_mean = float(ent.mean())
    loss = float(policy_loss + config.value_coef * value_loss
                 - config.entropy_coef * entropy_mean)
    if not math.isfinite(loss):
        raise NumericalError("non-finite PPO loss")

    use_unclipped = unclipped <= clipped
    d_logp = np.where(use_unclipped, -ratio * adv / n, 0.0)
    d_value = config.value_coef * 2.0 * value_err / n
    d_entropy = np.full(n, -config.entropy_coef / n)
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy_mean,
        "clip_fraction": float((~use_unclipped).mean()),
        "approx_kl": float(((ratio - 1.0) - (nl - ol)).mean()),
    }
    return loss, stats, {"d_logp": d_logp, "d_value": d_value,
                         "d_entropy": d_entropy}


def logits_gradient(logits, actions, d_logp, d_entropy):
    """Chain per-sample d_logp / d_entropy back to action logits.

    dlogp(a)/dlogits = onehot(a) - softmax; dH/dlogits_j = -p_j(logp_j + H).
    """
    logp = policynet.log_softmax(logits)
    p = np.exp(logp)
    flat = p.reshape(-1, p.shape[-1])
    a = np.asarray(actions).ravel()
    onehot = np.zeros_like(flat)
    onehot[np.arange(flat.shape[0]), a] = 1.0
    ent = -(flat * logp.reshape(flat.shape)).sum(axis=1, keepdims=True)
    d_from_logp = d_logp.reshape(-1, 1) * (onehot - flat)
    d_from_ent = d_entropy.reshape(-1, 1) * (-flat * (logp.reshape(flat.shape) + ent))
    return (d_from_logp + d_from_ent).reshape(logits.shape)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init(cls, params: policynet.PolicyParams) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.named()},
                   v={k: np.zeros_like(a) for k, a in params.named()})


def clip_gradient_norm(grads: policynet.PolicyParams, max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm <= max_norm."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                          for _, g in grads.named()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for _, g in grads.named():
            g *= scale
    return total


def adam_step(params: policynet.PolicyParams, grads: policynet.PolicyParams,
              state: AdamState, config: PPOConfig) -> policynet.PolicyParams:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.named():
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params


# ---------------------------------------------------------------------------
# rollout collection

@dataclass
class EpisodeRecord:
    episode: int
    level: int
    success: bool
    ret: float
    steps: int


@dataclass
class Rollout:
    """One collection batch: (T, B) tensors plus per-chunk initial states."""

    motion: np.ndarray
    visual: np.ndarray
    goal: np.ndarray
    prev_action: np.ndarray
    mask: np.ndarray  # (T, B) 1.0 keep hidden / 0.0 reset before step
    actions: np.ndarray  # (T, B) int64
    log_probs: np.ndarray  # (T, B)
    values: np.ndarray  # (T, B)
    rewards: np.ndarray  # (T, B)
    dones: np.ndarray  # (T, B)
    chunk_h: np.ndarray  # (n_chunks, B, H)
    chunk_c: np.ndarray
    bootstrap: np.ndarray  # (B,)


class Collector:
    """Steps a bank of environments under the current policy.

    Owns the persistent pieces that span rollouts: per-env episode state,
    LSTM hidden states, the curriculum, and the episode counter. Episodes
    reset in place on termination (hidden state zeroed via the mask,
    goals drawn at the curriculum's current level).
    """

    def __init__(self, scene: Scene, env_config: EnvConfig,
                 obs_model: ObservationModel, curriculum: CurriculumState,
                 ppo_config: PPOConfig, seed: int):
        self.config = ppo_config
        self.curriculum = curriculum
        seq = np.random.SeedSequence(seed)
        child = seq.spawn(ppo_config.n_envs + 1)
        self.policy_rng = np.random.default_rng(child[0])
        self.env_rngs = [np.random.default_rng(c) for c in child[1:]]
        self.envs = [RouteEnv(scene.graph, env_config, obs_model)
                     for _ in range(ppo_config.n_envs)]
        self.obs = []
        self.level_at_reset = []
        self.just_reset = np.ones(ppo_config.n_envs, dtype=bool)
        self.episode_count = 0
        for i, env in enumerate(self.envs):
            _, obs = env.reset(curriculum.level_range(), self.env_rngs[i])
            self.obs.append(obs)
            self.level_at_reset.append(curriculum.level)
        self._ep_return = np.zeros(ppo_config.n_envs)
        self._ep_steps = np.zeros(ppo_config.n_envs, dtype=int)

    def _stack_obs(self):
        motion = np.stack([o.motion for o in self.obs])
        visual = np.stack([o.visual for o in self.obs])
        goal = np.stack([o.goal for o in self.obs])
        prev = np.stack([o.prev_action for o in self.obs])
        return motion, visual, goal, prev

    def collect(self, params: policynet.PolicyParams, hidden_h, hidden_c):
        """Collect one rollout; returns (Rollout, finished episode records)."""
        cfg = self.config
        T, B = cfg.rollout_len, cfg.n_envs
        dims = params.dims
        n_chunks = T // cfg.chunk_len
        ro = Rollout(
            motion=np.empty((T, B, dims.motion_dim), np.float32),
            visual=np.empty((T, B, dims.visual_dim), np.float32),
            goal=np.empty((T, B, dims.goal_dim), np.float32),
            prev_action=np.empty((T, B, dims.n_actions), np.float32),
            mask=np.empty((T, B), np.float32),
            actions=np.empty((T, B), np.int64),
            log_probs=np.empty((T, B), np.float64),
            values=np.empty((T, B), np.float64),
            rewards=np.empty((T, B), np.float32),
            dones=np.empty((T, B), np.float32),
            chunk_h=np.empty((n_chunks, B, dims.hidden_units), np.float32),
            chunk_c=np.empty((n_chunks, B, dims.hidden_units), np.float32),
            bootstrap=np.empty(B, np.float64),
        )
        records = []
        h, c = hidden_h, hidden_c
        for t in range(T):
            if t % cfg.chunk_len == 0:
                ro.chunk_h[t // cfg.chunk_len] = h
                ro.chunk_c[t // cfg.chunk_len] = c
            motion, visual, goal, prev = self._stack_obs()
            mask_t = (~self.just_reset).astype(np.float32)
            logits, values, h, c, _ = policynet.forward_sequence(
                params, motion[None], visual[None], goal[None], prev[None],
                mask_t[None], h, c)
            actions, logp, _ = policynet.sample_actions(logits[0], self.policy_rng)
            ro.motion[t] = motion
            ro.visual[t] = visual
            ro.goal[t] = goal
            ro.prev_action[t] = prev
            ro.mask[t] = mask_t
            ro.actions[t] = actions
            ro.log_probs[t] = logp
            ro.values[t] = values[0]
            self.just_reset[:] = False
            for b, env in enumerate(self.envs):
                result = env.step(int(actions[b]))
                ro.rewards[t, b] = result.reward
                ro.dones[t, b] = 1.0 if result.done else 0.0
                self._ep_return[b] += result.reward
                self._ep_steps[b] += 1
                if result.done:
                    self.episode_count += 1
                    success = bool(result.info["reached_goal"])
                    records.append(EpisodeRecord(
                        episode=self.episode_count,
                        level=self.level_at_reset[b],
                        success=success,
                        ret=float(self._ep_return[b]),
                        steps=int(self._ep_steps[b])))
                    curriculum_advance(self.curriculum, success)
                    _, obs = env.reset(self.curriculum.level_range(),
                                       self.env_rngs[b])
                    self.obs[b] = obs
                    self.level_at_reset[b] = self.curriculum.level
                    self.just_reset[b] = True
                    self._ep_return[b] = 0.0
                    self._ep_steps[b] = 0
                else:
                    self.obs[b] = result.observation
        motion, visual, goal, prev = self._stack_obs()
        mask_t = (~self.just_reset).astype(np.float32)
        _, values, _, _, _ = policynet.forward_sequence(
            params, motion[None], visual[None], goal[None], prev[None],
            mask_t[None], h, c)
        ro.bootstrap[:] = values[0]
        return ro, records, h, c


# ---------------------------------------------------------------------------
# the training loop

@dataclass
class TrainSetup:
    scene: Scene
    env_config: EnvConfig
    dims: policynet.NetDims
    ppo: PPOConfig
    curriculum: CurriculumState
    curve_path: str | None = None
    checkpoint_hook: object = None  # fn(params, episodes, tag)
    checkpoint_every: int = 0


@dataclass
class TrainResult:
    params: policynet.PolicyParams
    curve: list
    episodes: int
    curriculum: CurriculumState
    adam: AdamState
    rng_digest: str = ""


class CurveWriter:
    """Streams finished-episode records to CSV, flushing every <=100 rows."""

    HEADER = "episode,level,success,return,steps"

    def __init__(self, path):
        self.fh = open(path, "w", encoding="ascii") if path else None
        if self.fh:
            self.fh.write(self.HEADER + "\n")
        self.pending = 0

    def write(self, rec: EpisodeRecord):
        if not self.fh:
            return
        self.fh.write(f"{rec.episode},{rec.level},{int(rec.success)},"
                      f"{rec.ret:g},{rec.steps}\n")
        self.pending += 1
        if self.pending >= 100:
            self.fh.flush()
            self.pending = 0

    def close(self):
        if self.fh:
            self.fh.flush()
            self.fh.close()
            self.fh = None


def _chunked(arr: np.ndarray, n_chunks: int, chunk_len: int):
    """(T, B, ...) -> (chunk_len, n_chunks*B, ...), chunk-major units."""
    tail = arr.shape[2:]
    out = arr.reshape(n_chunks, chunk_len, arr.shape[1], *tail)
    out = out.transpose(1, 0, 2, *range(3, out.ndim))
    return np.ascontiguousarray(out.reshape(chunk_len, -1, *tail))


def update_policy(params, adam, rollout: Rollout, config: PPOConfig,
                  perm_rng: np.random.Generator):
    """All PPO epochs/minibatches for one rollout; returns mean stats."""
    adv, returns = compute_gae(rollout.rewards, rollout.values, rollout.dones,
                               rollout.bootstrap, config.gamma,
                               config.gae_lambda)
    adv = normalize_advantages(adv)
    L = config.chunk_len
    n_chunks = rollout.rewards.shape[0] // L
    units = n_chunks * rollout.rewards.shape[1]
    data = {
        "motion": _chunked(rollout.motion, n_chunks, L),
        "visual": _chunked(rollout.visual, n_chunks, L),
        "goal": _chunked(rollout.goal, n_chunks, L),
        "prev_action": _chunked(rollout.prev_action, n_chunks, L),
        "mask": _chunked(rollout.mask, n_chunks, L),
        "actions": _chunked(rollout.actions, n_chunks, L),
        "old_logp": _chunked(rollout.log_probs, n_chunks, L),
        "adv": _chunked(adv, n_chunks, L),
        "returns": _chunked(returns, n_chunks, L),
    }
    h0 = rollout.chunk_h.reshape(units, -1)
    c0 = rollout.chunk_c.reshape(units, -1)
    stats_acc: dict = {}
    n_batches = 0
    for _ in range(config.epochs):
        perm = perm_rng.permutation(units)
        for idx in np.array_split(perm, config.minibatches):
            if idx.size == 0:
                continue
            logits, values, _, _, cache = policynet.forward_sequence(
                params, data["motion"][:, idx], data["visual"][:, idx],
                data["goal"][:, idx], data["prev_action"][:, idx],
                data["mask"][:, idx], h0[idx], c0[idx])
            logp_all = policynet.log_softmax(logits)
            acts = data["actions"][:, idx]
            new_logp = np.take_along_axis(logp_all, acts[..., None], axis=2)[..., 0]
            probs = np.exp(logp_all)
            entropy = -(probs * logp_all).sum(axis=2)
            loss, stats, sg = ppo_loss(
                new_logp, data["old_logp"][:, idx], data["adv"][:, idx],
                values, data["returns"][:, idx], entropy, config)
            d_logits = logits_gradient(logits, acts,
                                       sg["d_logp"], sg["d_entropy"])
            d_values = sg["d_value"].reshape(values.shape)
            grads, _ = policynet.backward_sequence(
                params, cache, d_logits.astype(params.dtype),
                d_values.astype(params.dtype))
            clip_gradient_norm(grads, config.grad_clip_norm)
            adam_step(params, grads, adam, config)
            stats["loss"] = loss
            for k, v in stats.items():
                stats_acc[k] = stats_acc.get(k, 0.0) + v
            n_batches += 1
    return {k: v / max(n_batches, 1) for k, v in stats_acc.items()}


def train(setup: TrainSetup) -> TrainResult:
    """Run PPO until the episode budget; streams the learning curve.

    A budget of zero returns the initialized parameters and an empty
    curve. A non-finite loss aborts after writing a diagnostic checkpoint
    through the checkpoint hook (tag "diagnostic").
    """
    cfg = setup.ppo
    seq = np.random.SeedSequence(cfg.seed)
    init_seed, collect_seed, perm_seed = (np.random.default_rng(s)
                                          for s in seq.spawn(3))
    params = policynet.init_params(setup.dims, init_seed)
    adam = AdamState.init(params)
    obs_model = ObservationModel.build(setup.scene,
                                       setup.env_config.goal_modality)
    writer = CurveWriter(setup.curve_path)
    curve: list = []
    rng_digest = hashlib.sha256(b"untrained").hexdigest()[:16]
    try:
        if cfg.total_episodes > 0:
            collector = Collector(setup.scene, setup.env_config, obs_model,
                                  setup.curriculum, cfg,
                                  seed=int(collect_seed.integers(2 ** 63)))
            perm_rng = np.random.default_rng(int(perm_seed.integers(2 ** 63)))
            h = np.zeros((cfg.n_envs, setup.dims.hidden_units), np.float32)
            c = np.zeros_like(h)
            next_checkpoint = setup.checkpoint_every
            while collector.episode_count < cfg.total_episodes:
                rollout, records, h, c = collector.collect(params, h, c)
                for rec in records:
                    curve.append(rec)
                    writer.write(rec)
                try:
                    update_policy(params, adam, rollout, cfg, perm_rng)
                except NumericalError:
                    if setup.checkpoint_hook:
                        setup.checkpoint_hook(params, collector.episode_count,
                                              "diagnostic")
                    raise
                if (setup.checkpoint_hook and setup.checkpoint_every > 0
                        and collector.episode_count >= next_checkpoint):
                    setup.checkpoint_hook(params, collector.episode_count,
                                          f"ep{collector.episode_count}")
                    next_checkpoint += setup.checkpoint_every
            episodes = collector.episode_count
            states = [repr(collector.policy_rng.bit_generator.state)]
            states += [repr(r.bit_generator.state) for r in collector.env_rngs]
            rng_digest = hashlib.sha256("|".join(states).encode()).hexdigest()[:16]
        else:
            episodes = 0
    finally:
        writer.close()
    return TrainResult(params=params, curve=curve, episodes=episodes,
                       curriculum=setup.curriculum, adam=adam,
                       rng_digest=rng_digest)


def smoothed_success(curve, window: int = 100) -> np.ndarray:
    """Trailing-window success rate per episode (window clipped at start)."""
    flags = np.array([1.0 if r.success else 0.0 for r in curve])
    if flags.size == 0:
        return flags
    csum = np.concatenate([[0.0], np.cumsum(flags)])
    idx = np.arange(1, flags.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)
