"""Leaky integrate-and-fire dynamics.

Discrete time (classifier layers and reference simulations)::

    I[n+1] = kappa I[n] + W S_in[n] + V S[n]
    u[n+1] = u_leak + lambda (u_eff[n] - u_leak) + (1 - lambda) R I[n]
    S[n+1] = Theta(u[n+1] - u_thres)

with u_eff = u_reset where S = 1 and u otherwise. For the default
u_leak = u_reset = 0 and R = 1 this is lambda u (1 - S) + (1 - lambda) I.

Event time (bushy cells): the same continuous system is integrated exactly
between input events, and threshold crossings are located by bisection.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .errors import ShapeError
from .events import EventStream

BC_WEIGHT_TOTAL = 0.54
BC_INPUT_GAIN = 48.0
_CROSS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LifLayerConfig:
    n: int
    tau_mem: float
    tau_syn: float
    W: np.ndarray
    V: Optional[np.ndarray] = None
    tau_ref: float = 0.0
    u_leak: float = 0.0
    u_reset: float = 0.0
    u_thres: float = 1.0
    dt: float = 5e-4
    input_gain: float = 1.0

    def __post_init__(self):
        if self.tau_mem <= 0 or self.tau_syn <= 0 or self.dt <= 0:
            raise ValueError("tau_mem, tau_syn and dt must be positive")
        if self.tau_ref < 0:
            raise ValueError("tau_ref must be >= 0")
        if not self.u_thres > self.u_leak:
            raise ValueError("u_thres must exceed u_leak")
        W = np.asarray(self.W)
        if W.ndim != 2 or W.shape[0] != self.n:
            raise ShapeError(f"W must have shape ({self.n}, n_in), got {W.shape}")
        object.__setattr__(self, "W", W)
        if self.V is not None:
            V = np.asarray(self.V)
            if V.shape != (self.n, self.n):
                raise ShapeError(f"V must have shape ({self.n}, {self.n}), got {V.shape}")
            object.__setattr__(self, "V", V)

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def kappa(self):
        return math.exp(-self.dt / self.tau_syn)

    @property
    def lam(self):
        return math.exp(-self.dt / self.tau_mem)

    @property
    def ref_steps(self):
        return int(math.floor(self.tau_ref / self.dt + 1e-9))


@dataclass(frozen=True, eq=False)
class LifState:
    u: np.ndarray
    I: np.ndarray
    S: np.ndarray
    # last step index that is still clamped; -1 when free
    refr_until: np.ndarray = field(default=None)
    n_step: int = 0

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype), np.zeros(n, dtype), np.zeros(n, dtype),
                   np.full(n, -1, dtype=np.int64), 0)


def step(cfg, state, in_spikes):
    """Advance one time step; the spike indicator uses the updated potential."""
    x = np.asarray(in_spikes)
    if x.shape != (cfg.n_in,):
        raise ShapeError(f"expected {cfg.n_in} inputs, got shape {x.shape}")
    if state.u.shape != (cfg.n,):
        raise ShapeError("state does not match layer size")
    I_new = cfg.kappa * state.I + cfg.W @ x
    if cfg.V is not None:
        I_new = I_new + cfg.V @ state.S
    u_eff = np.where(state.S > 0, cfg.u_reset, state.u)
    u_new = cfg.u_leak + cfg.lam * (u_eff - cfg.u_leak) + (1 - cfg.lam) * cfg.input_gain * state.I
    k = state.n_step + 1
    refr = state.refr_until if state.refr_until is not None else np.full(cfg.n, -1, dtype=np.int64)
    clamped = k <= refr
    u_new = np.where(clamped, cfg.u_reset, u_new)
    S_new = ((u_new >= cfg.u_thres) & ~clamped).astype(state.u.dtype)
    if cfg.tau_ref > 0:
        refr = np.where(S_new > 0, k + cfg.ref_steps, refr)
    return LifState(u_new, I_new, S_new, refr, k)


def run_layer(cfg, in_raster):
    """Iterate ``step`` from the zero state over a (T, n_in) raster.

    Returns (S, u, I), each of shape (T, n); row n is the state after step n.
    """
    X = np.asarray(in_raster, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.n_in:
        raise ShapeError(f"raster must be (T, {cfg.n_in}), got {X.shape}")
    T = X.shape[0]
    S_out = np.zeros((T, cfg.n))
    u_out = np.zeros((T, cfg.n))
    I_out = np.zeros((T, cfg.n))
    state = LifState.zeros(cfg.n)
    for t in range(T):
        state = step(cfg, state, X[t])
        S_out[t], u_out[t], I_out[t] = state.S, state.u, state.I
    return S_out, u_out, I_out


def run_readout(cfg, in_raster):
    """Non-spiking leaky integrators; returns the (T, n) membrane trace."""
    X = np.asarray(in_raster, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.n_in:
        raise ShapeError(f"raster must be (T, {cfg.n_in}), got {X.shape}")
    drive = X @ cfg.W.T
    k, lam, g = cfg.kappa, cfg.lam, cfg.input_gain
    u = np.zeros(cfg.n)
    I = np.zeros(cfg.n)
    out = np.empty((X.shape[0], cfg.n))
    for t in range(X.shape[0]):
        u = cfg.u_leak + lam * (u - cfg.u_leak) + (1 - lam) * g * I
        I = k * I + drive[t]
        out[t] = u
    return out


def kaiming_init(n_out, fan_in, rng=None, dtype=np.float64):
    """Uniform weights in (-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = np.random.default_rng(rng)
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(n_out, fan_in)).astype(dtype)


def bc_config(n_hc=40, dt=1e-5, input_gain=BC_INPUT_GAIN):
    """Bushy-cell preset: one neuron fed by ``n_hc`` fibers of weight 0.54/n_hc."""
    return LifLayerConfig(n=1, tau_mem=1e-3, tau_syn=5e-4, tau_ref=1e-3,
                          W=np.full((1, n_hc), BC_WEIGHT_TOTAL / n_hc), dt=dt,
                          input_gain=input_gain)


# --- event-driven integration ---------------------------------------------

@numba.njit(cache=True)
def _u_at(d, u0, I0, tm, ts, K, leak):
    if K == K:
        return leak + (u0 - leak - K * I0) * math.exp(-d / tm) + K * I0 * math.exp(-d / ts)
    # tau_syn == tau_mem; K is nan and R is passed through I0
    return leak + (u0 - leak + I0 * d / tm) * math.exp(-d / tm)


@numba.njit(cache=True)
def _first_crossing(D, u0, I0, tm, ts, K, leak, thr):
    """First d in (0, D] with u(d) >= thr, or -1."""
    # u - leak = a e^{-d/tm} + b e^{-d/ts} has at most one extremum
    ext = -1.0
    if K == K:
        a = u0 - leak - K * I0
        b = K * I0
        if a != 0.0 and b != 0.0:
            rhs = -(b * tm) / (a * ts)
            if rhs > 0.0:
                ext = math.log(rhs) / (1.0 / ts - 1.0 / tm)
    elif I0 != 0.0:
        ext = tm - (u0 - leak) * tm / I0
    lo = 0.0
    hi = -1.0
    if 0.0 < ext < D:
        if _u_at(ext, u0, I0, tm, ts, K, leak) >= thr:
            hi = ext
        elif _u_at(D, u0, I0, tm, ts, K, leak) >= thr:
            lo = ext
            hi = D
    elif _u_at(D, u0, I0, tm, ts, K, leak) >= thr:
        hi = D
    if hi < 0.0:
        return -1.0
    while hi - lo > _CROSS_TOL:
        mid = 0.5 * (lo + hi)
        if _u_at(mid, u0, I0, tm, ts, K, leak) >= thr:
            hi = mid
        else:
            lo = mid
    return hi


@numba.njit(cache=True)
def _bushy_kernel(times, weights, indptr, t_end, tm, ts, tref, gain, leak, reset, thr):
    n_ch = indptr.size - 1
    if ts == tm:
        K = np.nan
    else:
        K = gain * ts / (ts - tm)
    cap = 64
    out_t = np.empty(cap)
    out_u = np.empty(cap, dtype=np.int64)
    n_out = 0
    for ch in range(n_ch):
        t = 0.0
        u = leak
        I = 0.0
        refr_end = -1.0
        j = indptr[ch]
        stop = indptr[ch + 1]
        while True:
            t_next = times[j] if j < stop else t_end
            while t < t_next:
                if refr_end > t:
                    tr = min(refr_end, t_next)
                    I *= math.exp(-(tr - t) / ts)
                    u = reset
                    t = tr
                    continue
                D = t_next - t
                I_eff = I if K == K else I * gain
                d = _first_crossing(D, u, I_eff, tm, ts, K, leak, thr)
                if d < 0.0:
                    u = _u_at(D, u, I_eff, tm, ts, K, leak)
                    I *= math.exp(-D / ts)
                    t = t_next
                else:
                    t += d
                    I *= math.exp(-d / ts)
                    u = reset
                    refr_end = t + tref
                    if n_out == cap:
                        cap *= 2
                        nt = np.empty(cap)
                        nu = np.empty(cap, dtype=np.int64)
                        nt[:n_out] = out_t[:n_out]
                        nu[:n_out] = out_u[:n_out]
                        out_t = nt
                        out_u = nu
                    out_t[n_out] = t
                    out_u[n_out] = ch
                    n_out += 1
                    if tref == 0.0 and d == 0.0:
                        break
            if j >= stop:
                break
            I += weights[j]
            j += 1
    return out_t[:n_out], out_u[:n_out]


def bushy_events(times, weights, indptr, t_end, cfg):
    """Event-driven BCs for many channels in CSR layout.

    ``times[indptr[c]:indptr[c+1]]`` are channel c's sorted input times and
    ``weights`` the matching current jumps. Returns (spike_times, channel).
    """
    return _bushy_kernel(np.ascontiguousarray(times, dtype=np.float64),
                         np.ascontiguousarray(weights, dtype=np.float64),
                         np.ascontiguousarray(indptr, dtype=np.int64), float(t_end),
                         cfg.tau_mem, cfg.tau_syn, cfg.tau_ref, cfg.input_gain,
                         cfg.u_leak, cfg.u_reset, cfg.u_thres)


def bushy_forward(hc_events, cfg, t_end=None):
    """One bushy cell driven by one channel's hair-cell events.

    Input unit ids index the columns of ``cfg.W``; each event raises the
    synaptic current by its weight. Integration runs to ``t_end`` (default:
    last input event). Output events carry unit id 0.
    """
    if cfg.n != 1:
        raise ShapeError("bushy_forward simulates a single cell (cfg.n == 1)")
    units = hc_events.units.astype(np.int64)
    if units.size and units.max() >= cfg.n_in:
        raise ShapeError("input unit id exceeds the number of fibers")
    w = cfg.W[0, units] if units.size else np.zeros(0)
    if t_end is None:
        t_end = hc_events.duration
    st, _ = bushy_events(hc_events.times, w, np.array([0, units.size]), t_end, cfg)
    return EventStream(st, np.zeros(st.size, dtype=np.uint32))
