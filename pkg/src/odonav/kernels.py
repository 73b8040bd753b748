"""Hot inner-loop kernels with a numba backend and a pure-numpy fallback.

Every kernel here is written once, in a numba-compatible vectorized style,
and compiled per backend from the same source, so both paths share one
implementation of the math. Selection is controlled by the ODONAV_NUMBA
environment variable, read at import time:

    ODONAV_NUMBA=0      pure numpy everywhere
    ODONAV_NUMBA=1      numba @njit everywhere (if numba is importable)
    unset / "auto"      per-kernel default from measurement: numba for the
                        scalar-recursion scans (advantage scan), numpy for
                        the BLAS/SIMD-bound LSTM scans

``benchmarks/bench_kernels.py`` times both backends of every kernel; the
"auto" defaults follow those numbers.

Dtype discipline: kernels preserve the dtype of their inputs (float32 for
training, float64 for gradient checks). Scalar constants are derived from
the input arrays because numba promotes python-float literals to float64.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ODONAV_NUMBA", "auto").strip().lower()

if _FLAG in ("0", "off", "false", "numpy"):
    _njit = None
else:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _njit = None

#: True when the numba backend is importable and not disabled by env flag.
NUMBA_AVAILABLE = _njit is not None


def _lstm_scan_forward(pre_x, mask3, h0, c0, w_h, gates, cells, tanh_c,
                       h_prev, c_prev, h_out, hc_last):
    """Recurrent half of an LSTM chunk forward pass.

    The input projection (x @ w_x + b) is hoisted out by the caller into
    ``pre_x`` (T, B, 4H); only the sequential recurrence runs here. Gate
    order along the last axis is [input, forget, cell, output]. ``mask3``
    (T, B, 1) zeroes the carried state before a step, implementing hidden
    resets at episode boundaries. All output arrays are caller-allocated.
    """
    T = pre_x.shape[0]
    H = h0.shape[1]
    one = np.ones_like(h0[0, :1])[0]
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        m = mask3[t]
        h_in = h * m
        c_in = c * m
        pre = h_in @ w_h + pre_x[t]
        i = one / (one + np.exp(-pre[:, :H]))
        f = one / (one + np.exp(-pre[:, H:2 * H]))
        g = np.tanh(pre[:, 2 * H:3 * H])
        o = one / (one + np.exp(-pre[:, 3 * H:]))
        c = f * c_in + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        cells[t] = c
        tanh_c[t] = tc
        h_prev[t] = h_in
        c_prev[t] = c_in
        h_out[t] = h
    hc_last[0] = h
    hc_last[1] = c


def _lstm_scan_backward(gates, tanh_c, c_prev, w_h_t, mask3, d_h_out,
                        dh_in, dc_in, dpre, dhc0):
    """Reverse-mode pass matching ``_lstm_scan_forward``.

    Fills ``dpre`` (T, B, 4H) with gradients w.r.t. the pre-activations;
    the caller turns those into weight/input gradients with two batched
    matmuls. ``dh_in``/``dc_in`` carry gradient flowing in from beyond the
    chunk (zeros under truncated backprop). ``dhc0`` receives the gradient
    w.r.t. the chunk's initial hidden and cell state.
    """
    T = d_h_out.shape[0]
    H = d_h_out.shape[2]
    one = np.ones_like(dh_in[0, :1])[0]
    dh_carry = dh_in.copy()
    dc_carry = dc_in.copy()
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = tanh_c[t]
        dh = d_h_out[t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * (one - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev[t]
        dpre[t, :, :H] = di * i * (one - i)
        dpre[t, :, H:2 * H] = df * f * (one - f)
        dpre[t, :, 2 * H:3 * H] = dg * (one - g * g)
        dpre[t, :, 3 * H:] = do * o * (one - o)
        m = mask3[t]
        dh_carry = (dpre[t] @ w_h_t) * m
        dc_carry = (dc * f) * m
    dhc0[0] = dh_carry
    dhc0[1] = dc_carry


def _gae_scan(rewards, values, notdones, bootstrap, gamma, lam, adv):
    """Backward recursion for generalized advantage estimation.

    adv[t] = delta[t] + gamma*lam*notdone[t]*adv[t+1], with
    delta[t] = r[t] + gamma*V[t+1]*notdone[t] - V[t]. All arrays are
    (T, B) float64; ``bootstrap`` (B,) is V of the state after the last
    step. ``notdones`` masks both the bootstrap and the recursion across
    episode boundaries.
    """
    T = rewards.shape[0]
    next_v = bootstrap.copy()
    next_a = np.zeros_like(bootstrap)
    for t in range(T - 1, -1, -1):
        nd = notdones[t]
        delta = rewards[t] + gamma * next_v * nd - values[t]
        next_a = delta + gamma * lam * nd * next_a
        adv[t] = next_a
        next_v = values[t]


_SOURCES = {
    "lstm_scan_forward": (_lstm_scan_forward, False),
    "lstm_scan_backward": (_lstm_scan_backward, False),
    "gae_scan": (_gae_scan, True),
}

_jit_cache: dict = {}


def numba_variant(name):
    """Jitted variant of a kernel, or None when numba is unavailable."""
    if _njit is None:
        return None
    if name not in _jit_cache:
        _jit_cache[name] = _njit(cache=True)(_SOURCES[name][0])
    return _jit_cache[name]


def numpy_variant(name):
    """The pure-numpy variant of a kernel (the shared source itself)."""
    return _SOURCES[name][0]


def _select(name):
    fn, numba_default = _SOURCES[name]
    if _njit is None:
        return fn
    if _FLAG in ("1", "on", "true", "numba") or numba_default:
        return numba_variant(name)
    return fn


lstm_scan_forward = _select("lstm_scan_forward")
lstm_scan_backward = _select("lstm_scan_backward")
gae_scan = _select("gae_scan")


def backend_info() -> str:
    """One-line description of the active kernel backends."""
    mode = _FLAG if _FLAG in ("0", "1") else "auto"
    picks = ", ".join(
        f"{name}={'numba' if _select(name) is not _SOURCES[name][0] else 'numpy'}"
        for name in _SOURCES
    )
    return f"ODONAV_NUMBA={mode} ({picks})"
