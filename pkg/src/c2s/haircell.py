"""Transmitter-pool inner hair cell with stochastic release.

Per channel the free transmitter q, cleft content c and reprocessing store w
obey

    dq/dt = y (1 - q) + n w - k q
    dc/dt = k q - l c - r c
    dw/dt = r c - n w

with permeability k(v) = g (v + A) / (v + A + B) for v + A > 0, else 0. Release
does not feed back on the pools, so all cells of a channel share one (q, c, w)
trajectory and differ only in their random draws. A cell emits an event at
step n with probability h c dt unless it fired within the refractory period.

Random numbers come from a counter-based generator: every draw is a pure
function of (seed, sample, channel, cell, step), so results do not depend on
evaluation order or on how work is split between processes.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ProbabilityOverflow
from .events import EventStream

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

MAX_RATE_DT = 0.5


@dataclass(frozen=True)
class HcParams:
    A: float = 5.0
    B: float = 300.0
    g_perm: float = 1000.0
    y_repl: float = 11.11
    l_loss: float = 1250.0
    r_reup: float = 16667.0
    n_repr: float = 250.0
    h_prob: float = 50000.0
    n_hc: int = 40
    refractory: float = 1e-3

    def __post_init__(self):
        for name in ("A", "B", "g_perm", "y_repl", "l_loss", "r_reup", "n_repr", "h_prob"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_hc < 1:
            raise ValueError("n_hc must be >= 1")
        if self.refractory < 0:
            raise ValueError("refractory must be >= 0")


def permeability(v, params=HcParams()):
    v = np.asarray(v, dtype=np.float64)
    s = v + params.A
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(s > 0, params.g_perm * s / (s + params.B), 0.0)
    return k if k.ndim else float(k)


def hc_steady_state(params=HcParams(), v=0.0):
    """Fixed point (q, c, w) of the pool dynamics at constant velocity v."""
    k = permeability(v, params)
    lr = params.l_loss + params.r_reup
    q = params.y_repl / (params.y_repl + k * params.l_loss / lr)
    c = k * q / lr
    w = params.r_reup * c / params.n_repr
    return float(q), float(c), float(w)


def n_substeps(params, dt):
    """Euler sub-steps per sample so that the fastest rate times the sub-step stays <= 0.5."""
    fastest = max(params.l_loss + params.r_reup, params.g_perm + params.y_repl, params.n_repr)
    return max(1, int(math.ceil(fastest * dt / MAX_RATE_DT - 1e-12)))


@numba.njit(cache=True)
def _pools_kernel(v, dt, nsub, A, B, g, y, l, r, n, q0, c0, w0, c_out, final):
    n_ch, n_t = v.shape
    h = dt / nsub
    lr = l + r
    neg = False
    for ch in range(n_ch):
        q = q0[ch]
        c = c0[ch]
        w = w0[ch]
        for t in range(n_t):
            s = v[ch, t] + A
            k = g * s / (s + B) if s > 0.0 else 0.0
            for _ in range(nsub):
                dq = y * (1.0 - q) + n * w - k * q
                dc = k * q - lr * c
                dw = r * c - n * w
                q += h * dq
                c += h * dc
                w += h * dw
            c_out[ch, t] = c
            if q < 0.0 or c < 0.0 or w < 0.0:
                neg = True
        final[ch, 0] = q
        final[ch, 1] = c
        final[ch, 2] = w
    return neg


def transmitter_pools(v, dt, params=HcParams(), state=None):
    """Integrate the pools by forward Euler.

    ``v`` has shape (T,) or (n_ch, T). Returns ``(c, final)`` where ``c[..., n]``
    is the cleft content after step n and ``final`` holds (q, c, w)
    after the last step. Initial state defaults to the resting fixed point.
    """
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    v2 = np.ascontiguousarray(v[None, :] if squeeze else v)
    n_ch = v2.shape[0]
    if state is None:
        state = hc_steady_state(params)
    st = np.broadcast_to(np.asarray(state, dtype=np.float64), (n_ch, 3))
    c_out = np.empty_like(v2)
    final = np.empty((n_ch, 3))
    neg = _pools_kernel(v2, float(dt), n_substeps(params, dt), params.A, params.B, params.g_perm,
                        params.y_repl, params.l_loss, params.r_reup, params.n_repr,
                        np.ascontiguousarray(st[:, 0]), np.ascontiguousarray(st[:, 1]),
                        np.ascontiguousarray(st[:, 2]), c_out, final)
    if neg:
        raise FloatingPointError("transmitter pools went negative; reduce dt")
    if squeeze:
        return c_out[0], final[0]
    return c_out, final


# --- counter-based random numbers -------------------------------------------

@numba.njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def _uniform(key, step):
    z = _mix64(key + (np.uint64(step) + np.uint64(1)) * _GOLDEN)
    return np.float64(z >> _S11) * _INV53


_MASK = (1 << 64) - 1


def _mix64_int(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(*parts):
    """Combine integers into one 64-bit key by chained splitmix64 mixing."""
    key = 0x243F6A8885A308D3
    for p in parts:
        key = _mix64_int(((key ^ (int(p) & _MASK)) + 0x9E3779B97F4A7C15) & _MASK)
    return np.uint64(key)


def cell_keys(seed, sample_idx, channel_idx, n_cells):
    base = derive_key(seed, sample_idx, channel_idx)
    return np.array([derive_key(base, i) for i in range(n_cells)], dtype=np.uint64)


def uniforms(key, n_steps):
    """The uniform draws a cell with ``key`` sees at steps 0..n_steps-1."""
    return _uniforms_kernel(np.uint64(key), n_steps)


@numba.njit(cache=True)
def _uniforms_kernel(key, n_steps):
    out = np.empty(n_steps)
    for t in range(n_steps):
        out[t] = _uniform(key, t)
    return out


@numba.njit(cache=True)
def _spike_raster(c, p_scale, keys, ref_steps, raster):
    n_cells = keys.size
    for i in range(n_cells):
        last = -(1 << 62)
        key = keys[i]
        for t in range(c.size):
            if t - last > ref_steps and _uniform(key, t) < p_scale * c[t]:
                raster[i, t] = 1
                last = t


@numba.njit(cache=True)
def _spike_counts(c, p_scale, keys, ref_steps, counts):
    n_ch, n_t = c.shape
    for ch in range(n_ch):
        for i in range(keys.shape[1]):
            last = -(1 << 62)
            key = keys[ch, i]
            for t in range(n_t):
                if t - last > ref_steps and _uniform(key, t) < p_scale * c[ch, t]:
                    counts[ch, t] += 1
                    last = t


def refractory_steps(params, dt):
    # events closer than the refractory period are denied; an interval of
    # exactly ref_steps samples still equals the period, so it is denied too
    return int(math.floor(params.refractory / dt + 1e-9))


def _check_probability(c, params, dt):
    p_max = params.h_prob * float(np.max(c, initial=0.0)) * dt
    if p_max > 1.0:
        raise ProbabilityOverflow(f"release probability {p_max:.3f} > 1; time step too large")


def release_raster(c, dt, params, keys):
    """Binary raster (n_cells, T) of release events for one channel's cleft trace."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    _check_probability(c, params, dt)
    raster = np.zeros((len(keys), c.size), dtype=np.uint8)
    _spike_raster(c, params.h_prob * dt, np.asarray(keys, dtype=np.uint64),
                  refractory_steps(params, dt), raster)
    return raster


def release_counts(c, dt, params, keys):
    """Per-step event counts (n_ch, T) summed over each channel's cells.

    ``c`` has shape (n_ch, T) and ``keys`` shape (n_ch, n_cells).
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    _check_probability(c, params, dt)
    counts = np.zeros(c.shape, dtype=np.uint16)
    _spike_counts(c, params.h_prob * dt, np.ascontiguousarray(keys, dtype=np.uint64),
                  refractory_steps(params, dt), counts)
    return counts


def simulate_hc(v_channel, dt, params=HcParams(), seed=0):
    """One hair cell driven by ``v_channel``; events carry unit id 0."""
    c, _ = transmitter_pools(v_channel, dt, params)
    raster = release_raster(c, dt, params, [np.uint64(seed & 0xFFFFFFFFFFFFFFFF)])
    steps = np.flatnonzero(raster[0])
    return EventStream(steps * dt, np.zeros(steps.size, dtype=np.uint32))


def simulate_channel(v_channel, dt, params=HcParams(), base_seed=0, channel_idx=0, sample_idx=0):
    """``params.n_hc`` independent cells on one channel; unit id = cell index."""
    c, _ = transmitter_pools(v_channel, dt, params)
    keys = cell_keys(base_seed, sample_idx, channel_idx, params.n_hc)
    raster = release_raster(c, dt, params, keys)
    cells, steps = np.nonzero(raster)
    return EventStream.from_unsorted(steps * dt, cells)
