"""Recurrent actor-critic policy network with hand-derived gradients.

Architecture: each active observation channel (ego-motion, visual) passes
through its own 512-unit linear + tanh encoder; the goal vector is split
by modality and concatenated onto the matching channel's input before
encoding. Encoded channels plus the previous action one-hot feed a single
256-unit LSTM layer; an actor head produces action logits and a critic
head the scalar state value.

Reverse-mode gradients are derived for exactly this architecture (no
generic autodiff). Training runs in float32; the same code paths accept
float64 parameters, which the finite-difference test oracles rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import InvalidParameter, NumericalError, ShapeError

ENC_UNITS = 512
HIDDEN_UNITS = 256


@dataclass
class NetDims:
    """Input/layer sizes and the channel mask realizing ablations.

    ``goal_visual_dim``/``goal_pose_dim`` describe how the observation's
    goal vector splits: the leading ``goal_visual_dim`` entries ride into
    the visual encoder, the trailing ``goal_pose_dim`` into the motion
    encoder. A masked-off channel has no encoder at all, so its inputs
    (goal slice included) cannot influence the outputs.
    """

    motion_dim: int
    visual_dim: int
    goal_visual_dim: int
    goal_pose_dim: int
    enc_units: int = ENC_UNITS
    hidden_units: int = HIDDEN_UNITS
    n_actions: int = 3
    motion_on: bool = True
    visual_on: bool = True

    def __post_init__(self):
        if not (self.motion_on or self.visual_on):
            raise InvalidParameter("at least one observation channel must be on")
        for name in ("motion_dim", "visual_dim", "enc_units", "hidden_units",
                     "n_actions"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be >= 1")
        if self.goal_visual_dim < 0 or self.goal_pose_dim < 0:
            raise InvalidParameter("goal dims must be >= 0")
        goal_total = self.goal_visual_dim + self.goal_pose_dim
        goal_seen = ((self.motion_on and self.goal_pose_dim > 0)
                     or (self.visual_on and self.goal_visual_dim > 0))
        if goal_total > 0 and not goal_seen:
            raise InvalidParameter(
                "goal vector does not reach any active channel; "
                "change goal modality or the channel mask")

    @property
    def goal_dim(self) -> int:
        return self.goal_visual_dim + self.goal_pose_dim

    @property
    def motion_in(self) -> int:
        return self.motion_dim + self.goal_pose_dim

    @property
    def visual_in(self) -> int:
        return self.visual_dim + self.goal_visual_dim

    @property
    def lstm_in(self) -> int:
        n_ch = int(self.motion_on) + int(self.visual_on)
        return n_ch * self.enc_units + self.n_actions


def dims_for_experiment(visual_dim: int, goal_modality: str, channels: str,
                        motion_dim: int = 6, enc_units: int = ENC_UNITS,
                        hidden_units: int = HIDDEN_UNITS,
                        n_actions: int = 3) -> NetDims:
    """NetDims for a named channel setup: 'full', 'motion', or 'vision'."""
    if channels not in ("full", "motion", "vision"):
        raise InvalidParameter(f"unknown channel setup {channels!r}")
    gv = visual_dim if goal_modality in ("visual", "both") else 0
    gp = 4 if goal_modality in ("pose", "both") else 0
    return NetDims(motion_dim=motion_dim, visual_dim=visual_dim,
                   goal_visual_dim=gv, goal_pose_dim=gp,
                   enc_units=enc_units, hidden_units=hidden_units,
                   n_actions=n_actions,
                   motion_on=channels in ("full", "motion"),
                   visual_on=channels in ("full", "vision"))


@dataclass
class PolicyParams:
    """All learnable tensors; encoder fields are None for masked channels."""

    dims: NetDims
    enc_motion_w: np.ndarray | None
    enc_motion_b: np.ndarray | None
    enc_visual_w: np.ndarray | None
    enc_visual_b: np.ndarray | None
    lstm_wx: np.ndarray
    lstm_wh: np.ndarray
    lstm_b: np.ndarray
    actor_w: np.ndarray
    actor_b: np.ndarray
    critic_w: np.ndarray
    critic_b: np.ndarray

    _TENSOR_FIELDS = ("enc_motion_w", "enc_motion_b", "enc_visual_w",
                      "enc_visual_b", "lstm_wx", "lstm_wh", "lstm_b",
                      "actor_w", "actor_b", "critic_w", "critic_b")

    def named(self):
        """(name, array) pairs in fixed order, skipping absent encoders."""
        for name in self._TENSOR_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def map(self, fn) -> "PolicyParams":
        updates = {name: fn(arr) for name, arr in self.named()}
        return replace(self, **updates)

    def zeros_like(self) -> "PolicyParams":
        return self.map(np.zeros_like)

    def copy(self) -> "PolicyParams":
        return self.map(np.copy)

    @property
    def dtype(self):
        return self.lstm_wx.dtype

    def n_parameters(self) -> int:
        return sum(arr.size for _, arr in self.named())


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, dims: NetDims, dtype=np.float32) -> "HiddenState":
        return cls(h=np.zeros(dims.hidden_units, dtype=dtype),
                   c=np.zeros(dims.hidden_units, dtype=dtype))


def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """Orthogonal matrix init (QR of a Gaussian draw, sign-fixed)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(dims: NetDims, rng: np.random.Generator,
                dtype=np.float32) -> PolicyParams:
    """Orthogonal initialization; small actor gain, forget-gate bias 1."""
    E, H, A = dims.enc_units, dims.hidden_units, dims.n_actions

    def enc(in_dim):
        return (orthogonal(rng, (in_dim, E), gain=np.sqrt(2.0)).astype(dtype),
                np.zeros(E, dtype=dtype))

    enc_m = enc(dims.motion_in) if dims.motion_on else (None, None)
    enc_v = enc(dims.visual_in) if dims.visual_on else (None, None)
    z_dim = dims.lstm_in
    wx = np.hstack([orthogonal(rng, (z_dim, H)) for _ in range(4)]).astype(dtype)
    wh = np.hstack([orthogonal(rng, (H, H)) for _ in range(4)]).astype(dtype)
    b = np.zeros(4 * H, dtype=dtype)
    b[H:2 * H] = 1.0  # forget gate starts open
    return PolicyParams(
        dims=dims,
        enc_motion_w=enc_m[0], enc_motion_b=enc_m[1],
        enc_visual_w=enc_v[0], enc_visual_b=enc_v[1],
        lstm_wx=wx, lstm_wh=wh, lstm_b=b,
        actor_w=orthogonal(rng, (H, A), gain=0.01).astype(dtype),
        actor_b=np.zeros(A, dtype=dtype),
        critic_w=orthogonal(rng, (H, 1), gain=1.0).astype(dtype),
        critic_b=np.zeros(1, dtype=dtype),
    )


@dataclass
class ForwardCache:
    """Activations of one contiguous chunk, as needed for backprop."""

    x_motion: np.ndarray | None  # (T, B, motion_in)
    x_visual: np.ndarray | None  # (T, B, visual_in)
    enc_motion: np.ndarray | None  # (T, B, E) post-tanh
    enc_visual: np.ndarray | None
    z: np.ndarray  # (T, B, Z) LSTM input
    mask3: np.ndarray  # (T, B, 1)
    gates: np.ndarray  # (T, B, 4H)
    tanh_c: np.ndarray  # (T, B, H)
    h_prev: np.ndarray  # (T, B, H)
    c_prev: np.ndarray  # (T, B, H)
    h_out: np.ndarray  # (T, B, H)


def _check(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


def forward_sequence(params: PolicyParams, motion, visual, goal, prev_action,
                     mask, h0, c0):
    """Run a (T, B) chunk through encoders, LSTM, and both heads.

    ``mask`` (T, B) multiplies the carried hidden state before each step
    (0 resets it at an episode boundary). Returns
    (logits (T,B,A), values (T,B), h_last (B,H), c_last (B,H), cache).
    """
    dims = params.dims
    dtype = params.dtype
    motion = np.asarray(motion, dtype=dtype)
    visual = np.asarray(visual, dtype=dtype)
    goal = np.asarray(goal, dtype=dtype)
    prev_action = np.asarray(prev_action, dtype=dtype)
    T, B = prev_action.shape[:2]
    _check(motion.shape == (T, B, dims.motion_dim),
           f"motion shape {motion.shape}, expected {(T, B, dims.motion_dim)}")
    _check(visual.shape == (T, B, dims.visual_dim),
           f"visual shape {visual.shape}, expected {(T, B, dims.visual_dim)}")
    _check(goal.shape == (T, B, dims.goal_dim),
           f"goal shape {goal.shape}, expected {(T, B, dims.goal_dim)}")
    _check(prev_action.shape == (T, B, dims.n_actions),
           f"prev_action shape {prev_action.shape}")
    _check(h0.shape == (B, dims.hidden_units) and c0.shape == (B, dims.hidden_units),
           f"hidden shape {h0.shape}, expected {(B, dims.hidden_units)}")

    gv = dims.goal_visual_dim
    parts = []
    x_m = x_v = e_m = e_v = None
    if dims.motion_on:
        x_m = np.concatenate([motion, goal[..., gv:]], axis=2)
        flat = x_m.reshape(T * B, dims.motion_in)
        e_m = np.tanh(flat @ params.enc_motion_w + params.enc_motion_b)
        parts.append(e_m)
    if dims.visual_on:
        x_v = np.concatenate([visual, goal[..., :gv]], axis=2)
        flat = x_v.reshape(T * B, dims.visual_in)
        e_v = np.tanh(flat @ params.enc_visual_w + params.enc_visual_b)
        parts.append(e_v)
    parts.append(prev_action.reshape(T * B, dims.n_actions))
    z_flat = np.ascontiguousarray(np.concatenate(parts, axis=1))
    z = z_flat.reshape(T, B, dims.lstm_in)

    H = dims.hidden_units
    pre_x = (z_flat @ params.lstm_wx + params.lstm_b).reshape(T, B, 4 * H)
    mask3 = np.ascontiguousarray(np.asarray(mask, dtype=dtype).reshape(T, B, 1))
    gates = np.empty((T, B, 4 * H), dtype=dtype)
    cells = np.empty((T, B, H), dtype=dtype)
    tanh_c = np.empty((T, B, H), dtype=dtype)
    h_prev = np.empty((T, B, H), dtype=dtype)
    c_prev = np.empty((T, B, H), dtype=dtype)
    h_out = np.empty((T, B, H), dtype=dtype)
    hc_last = np.empty((2, B, H), dtype=dtype)
    kernels.lstm_scan_forward(
        np.ascontiguousarray(pre_x), mask3,
        np.ascontiguousarray(h0, dtype=dtype), np.ascontiguousarray(c0, dtype=dtype),
        params.lstm_wh, gates, cells, tanh_c, h_prev, c_prev, h_out, hc_last)

    h_flat = h_out.reshape(T * B, H)
    logits = (h_flat @ params.actor_w + params.actor_b).reshape(T, B, dims.n_actions)
    values = (h_flat @ params.critic_w + params.critic_b).reshape(T, B)
    cache = ForwardCache(x_motion=x_m, x_visual=x_v, enc_motion=e_m,
                         enc_visual=e_v, z=z, mask3=mask3, gates=gates,
                         tanh_c=tanh_c, h_prev=h_prev, c_prev=c_prev, h_out=h_out)
    return logits, values, hc_last[0], hc_last[1], cache


def backward_sequence(params: PolicyParams, cache: ForwardCache,
                      d_logits, d_values):
    """Exact gradients of a chunk loss w.r.t. parameters and inputs.

    ``d_logits`` (T,B,A) and ``d_values`` (T,B) are the loss gradients at
    the heads. Backpropagation runs through time across the chunk and
    stops at the chunk's initial hidden state (truncated BPTT). Returns
    (grads: PolicyParams, input_grads: dict).
    """
    dims = params.dims
    dtype = params.dtype
    T, B, H = cache.h_out.shape
    d_logits = np.asarray(d_logits, dtype=dtype)
    d_values = np.asarray(d_values, dtype=dtype)
    _check(d_logits.shape == (T, B, dims.n_actions),
           f"d_logits shape {d_logits.shape}, expected {(T, B, dims.n_actions)}")
    _check(d_values.shape == (T, B), f"d_values shape {d_values.shape}")

    h_flat = cache.h_out.reshape(T * B, H)
    dlog_flat = np.ascontiguousarray(d_logits.reshape(T * B, dims.n_actions))
    dval_flat = d_values.reshape(T * B, 1)
    d_actor_w = h_flat.T @ dlog_flat
    d_actor_b = dlog_flat.sum(axis=0)
    d_critic_w = h_flat.T @ dval_flat
    d_critic_b = dval_flat.sum(axis=0)
    d_h_out = (dlog_flat @ params.actor_w.T
               + dval_flat @ params.critic_w.T).reshape(T, B, H)

    dpre = np.empty((T, B, 4 * H), dtype=dtype)
    dhc0 = np.empty((2, B, H), dtype=dtype)
    w_h_t = np.ascontiguousarray(params.lstm_wh.T)
    zeros = np.zeros((B, H), dtype=dtype)
    kernels.lstm_scan_backward(cache.gates, cache.tanh_c, cache.c_prev, w_h_t,
                               cache.mask3, np.ascontiguousarray(d_h_out),
                               zeros, zeros, dpre, dhc0)

    dpre_flat = dpre.reshape(T * B, 4 * H)
    z_flat = cache.z.reshape(T * B, dims.lstm_in)
    d_lstm_wx = z_flat.T @ dpre_flat
    d_lstm_wh = cache.h_prev.reshape(T * B, H).T @ dpre_flat
    d_lstm_b = dpre_flat.sum(axis=0)
    dz = dpre_flat @ params.lstm_wx.T

    gv = dims.goal_visual_dim
    d_goal = np.zeros((T, B, dims.goal_dim), dtype=dtype)
    d_motion = np.zeros((T, B, dims.motion_dim), dtype=dtype)
    d_visual = np.zeros((T, B, dims.visual_dim), dtype=dtype)
    offset = 0
    grads = params.zeros_like()
    if dims.motion_on:
        d_e = dz[:, offset:offset + dims.enc_units]
        offset += dims.enc_units
        d_pre = d_e * (1.0 - cache.enc_motion ** 2)
        x_flat = cache.x_motion.reshape(T * B, dims.motion_in)
        grads.enc_motion_w = x_flat.T @ d_pre
        grads.enc_motion_b = d_pre.sum(axis=0)
        d_x = (d_pre @ params.enc_motion_w.T).reshape(T, B, dims.motion_in)
        d_motion = d_x[..., :dims.motion_dim]
        if dims.goal_pose_dim:
            d_goal[..., gv:] += d_x[..., dims.motion_dim:]
    if dims.visual_on:
        d_e = dz[:, offset:offset + dims.enc_units]
        offset += dims.enc_units
        d_pre = d_e * (1.0 - cache.enc_visual ** 2)
        x_flat = cache.x_visual.reshape(T * B, dims.visual_in)
        grads.enc_visual_w = x_flat.T @ d_pre
        grads.enc_visual_b = d_pre.sum(axis=0)
        d_x = (d_pre @ params.enc_visual_w.T).reshape(T, B, dims.visual_in)
        d_visual = d_x[..., :dims.visual_dim]
        if dims.goal_visual_dim:
            d_goal[..., :gv] += d_x[..., dims.visual_dim:]
    d_prev_action = dz[:, offset:].reshape(T, B, dims.n_actions)

    grads.lstm_wx = d_lstm_wx
    grads.lstm_wh = d_lstm_wh
    grads.lstm_b = d_lstm_b
    grads.actor_w = d_actor_w
    grads.actor_b = d_actor_b
    grads.critic_w = d_critic_w
    grads.critic_b = d_critic_b.reshape(1)
    input_grads = {"motion": d_motion, "visual": d_visual, "goal": d_goal,
                   "prev_action": d_prev_action, "h0": dhc0[0], "c0": dhc0[1]}
    return grads, input_grads


def forward(params: PolicyParams, obs, prev_action, hidden: HiddenState):
    """Single-step forward pass over one observation.

    Returns (logits (A,), value, new HiddenState, ForwardCache).
    """
    one = lambda v: np.asarray(v, dtype=params.dtype).reshape(1, 1, -1)
    mask = np.ones((1, 1), dtype=params.dtype)
    logits, values, h, c, cache = forward_sequence(
        params, one(obs.motion), one(obs.visual), one(obs.goal),
        one(prev_action), mask, hidden.h.reshape(1, -1), hidden.c.reshape(1, -1))
    return (logits[0, 0], float(values[0, 0]),
            HiddenState(h=h[0].copy(), c=c[0].copy()), cache)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax along the last axis (float64)."""
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _checked_log_probs(logits):
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite action logits")
    return log_softmax(logits)


def sample_action(logits, rng: np.random.Generator):
    """Draw one action from softmax(logits); returns (action, log_prob, entropy)."""
    logp = _checked_log_probs(logits)
    probs = np.exp(logp)
    u = rng.random()
    action = int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                     len(probs) - 1))
    entropy = float(-(probs * logp).sum())
    return action, float(logp[action]), entropy


def sample_actions(logits, rng: np.random.Generator):
    """Vectorized categorical sampling over (B, A) logits."""
    logp = _checked_log_probs(logits)
    probs = np.exp(logp)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    actions = np.minimum((cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)
    taken = np.take_along_axis(logp, actions[:, None], axis=1)[:, 0]
    entropy = -(probs * logp).sum(axis=1)
    return actions.astype(np.int64), taken, entropy


def greedy_action(logits) -> int:
    """Argmax action; ties break to the lowest index."""
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite action logits")
    return int(np.argmax(logits))


def action_entropy(logits) -> float:
    logp = _checked_log_probs(logits)
    return float(-(np.exp(logp) * logp).sum())
