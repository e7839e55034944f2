"""Long-wave hydrodynamic basilar-membrane model.

All quantities are CGS (g, cm, s). The membrane impedance is

    xi(x, w) = [S(x) - w^2 m + i w R(x)] / (i w),
    S(x) = C0 exp(-alpha x) - a,   R(x) = R0 exp(-alpha x / 2),

with the time convention exp(+i w t) that matches numpy's forward FFT. The
pressure along the membrane is the WKB-type solution

    p(x, w) = sqrt(G/g) H0^(2)(G),   G(x, w) = int_0^x g dx' + (2/alpha) g(0, w),

with local wavenumber g = w sqrt(rho / (h i w xi)). The membrane velocity
follows from the Euler relation, v_y = -2 p / xi, and the middle-ear drive
is the input impedance Z_in, giving the per-channel transfer function

    H(x, w) = i Z_in(w) v_y(x, w) / p(0, w).
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import special
from .errors import BranchError, QuadratureError, RateMismatch, SingularFrequency

TRANSFER_CACHE_VERSION = 1


@dataclass(frozen=True)
class BmParams:
    gamma: float = 0.15  # damping constant, R0 / sqrt(C0 m)
    a: float = 3.5e4  # Greenwood constant, 35 kg s^-2 cm^-2 in g s^-2 cm^-2
    C0: float = 1e9
    rho: float = 1.0
    alpha: float = 3.0
    h_scala: float = 0.1
    m: float = 0.05
    n_ch: int = 700
    x_max: float = 3.5

    def __post_init__(self):
        for name in ("gamma", "a", "C0", "rho", "alpha", "h_scala", "m", "x_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.n_ch < 1:
            raise ValueError("n_ch must be >= 1")

    @property
    def R0(self):
        return self.gamma * math.sqrt(self.C0 * self.m)

    def positions(self):
        """Channel positions x_c = c * x_max / n_ch for c = 1..n_ch."""
        return np.arange(1, self.n_ch + 1) * (self.x_max / self.n_ch)

    def digest(self):
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stiffness(params, x):
    return params.C0 * np.exp(-params.alpha * np.asarray(x, dtype=float)) - params.a


def resistance(params, x):
    return params.R0 * np.exp(-params.alpha * np.asarray(x, dtype=float) / 2)


def _check_omega(omega):
    if np.any(np.asarray(omega) == 0):
        raise SingularFrequency("the membrane impedance is singular at omega = 0")


def _stiffness_form(params, x, omega):
    # i w xi = S - w^2 m + i w R
    return stiffness(params, x) - omega**2 * params.m + 1j * omega * resistance(params, x)


def impedance(params, x, omega):
    """Mechanical impedance xi(x, omega) of the membrane."""
    _check_omega(omega)
    return _stiffness_form(params, x, omega) / (1j * omega)


def resonance_omega(params, x):
    """Angular frequency at which the stiffness and mass terms cancel at x."""
    s = stiffness(params, x)
    return np.sqrt(np.maximum(s, 0.0) / params.m)


def resonance_place(params, omega):
    """Position x where omega is the local resonance, S(x) = omega^2 m."""
    return np.log(params.C0 / (params.a + np.asarray(omega) ** 2 * params.m)) / params.alpha


def local_wavenumber(params, x, omega):
    """g(x, w) = w sqrt(rho / (h i w xi)) on the decaying branch Im g <= 0.

    The principal square root already lies on that branch for any positive
    damping, because i w xi then has a positive imaginary part for w > 0.
    """
    _check_omega(omega)
    z = _stiffness_form(params, x, omega)
    g = omega * np.sqrt(params.rho / (params.h_scala * z))
    if np.any(g.imag > 1e-12 * np.abs(g)):
        raise BranchError("local wavenumber left the decaying branch (Im g > 0)")
    return g


def _adaptive_simpson(f, a, b, rtol, max_depth=50):
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    scale = [abs(whole)]

    def recurse(a, b, fa, fm, fb, whole, depth):
        m = (a + b) / 2
        lm, rm = (a + m) / 2, (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        delta = left + right - whole
        scale[0] = max(scale[0], abs(left) + abs(right))
        if abs(delta) <= 15 * rtol * scale[0] or (b - a) < 1e-12:
            return left + right + delta / 15
        if depth >= max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
        return recurse(a, m, fa, flm, fm, left, depth + 1) + recurse(m, b, fm, frm, fb, right, depth + 1)

    return recurse(a, b, fa, fm, fb, whole, 0)


def phase_integral(params, x, omega, rtol=1e-9):
    """G(x, w) by adaptive Simpson quadrature of the local wavenumber."""
    _check_omega(omega)
    g0 = complex(local_wavenumber(params, 0.0, omega))
    if x == 0:
        return (2.0 / params.alpha) * g0
    integral = _adaptive_simpson(lambda s: complex(local_wavenumber(params, s, omega)), 0.0, float(x), rtol)
    return integral + (2.0 / params.alpha) * g0


def phase_integral_grid(params, positions, omegas, substeps=8):
    """G at every (position, omega) pair by cumulative composite Simpson.

    ``positions`` must be increasing and start above 0; each interval between
    consecutive positions (and [0, x_0]) is split into ``substeps`` panels.
    Returns an array of shape (len(positions), len(omegas)).
    """
    if substeps % 2:
        raise ValueError("substeps must be even for Simpson's rule")
    positions = np.asarray(positions, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    edges = np.concatenate([[0.0], positions])
    frac = np.arange(substeps + 1) / substeps
    # (n_intervals, substeps+1) sample points
    pts = edges[:-1, None] + np.diff(edges)[:, None] * frac[None, :]
    w = np.ones(substeps + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    w = w * (np.diff(edges)[:, None] / (3 * substeps))
    g = local_wavenumber(params, pts[..., None], omegas[None, None, :])
    pieces = np.einsum("ik,ikf->if", w, g)
    g0 = local_wavenumber(params, 0.0, omegas)
    return np.cumsum(pieces, axis=0) + (2.0 / params.alpha) * g0[None, :]


def pressure(params, x, omega, G=None, g=None):
    """p(x, w) = sqrt(G/g) H0^(2)(G)."""
    if g is None:
        g = local_wavenumber(params, x, omega)
    if G is None:
        G = np.vectorize(lambda xx, ww: phase_integral(params, xx, ww))(x, omega)
    return np.sqrt(G / g) * special.hankel2_0(G)


def input_impedance(params, omega):
    """Z_in(w) = sqrt(2 C0/h) (i J0(z) + Y0(z)) / (J1(z) - i Y1(z)), z = 2w/alpha sqrt(2/(h C0)).

    Negative frequencies follow the real-signal convention Z_in(-w) = conj Z_in(w).
    """
    _check_omega(omega)
    omega = np.asarray(omega, dtype=float)
    zeta = 2.0 * np.abs(omega) / params.alpha * math.sqrt(2.0 / (params.h_scala * params.C0))
    j0, j1, y0, y1 = special.bessel_jy(zeta)
    den = j1 - 1j * y1
    if np.any(np.abs(den) < 1e-300):
        raise SingularFrequency("input impedance denominator vanishes")
    z = math.sqrt(2.0 * params.C0 / params.h_scala) * (1j * j0 + y0) / den
    z = np.where(omega < 0, np.conj(z), z)
    return z if z.ndim else z[()]


def default_n_fft(sample_rate):
    """Transfer length: smallest power of two covering 0.5 s of impulse response."""
    return 1 << int(math.ceil(math.log2(0.5 * sample_rate)))


@dataclass
class CochlearTransfer:
    """Per-channel complex frequency response on the rfft grid of length n_fft.

    ``H`` has shape (n_ch, n_fft // 2 + 1); the DC column is exactly zero.
    ``calib_gain`` scales the time-domain output and is set by calibration.
    """

    positions: np.ndarray
    freqs: np.ndarray
    H: np.ndarray
    sample_rate: float
    n_fft: int
    params: BmParams = field(default_factory=BmParams)
    calib_gain: float = 1.0
    _ir: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_ch(self):
        return self.H.shape[0]

    def impulse_responses(self):
        """Real impulse responses on lags -n_fft/2 .. n_fft/2 - 1, shape (n_ch, n_fft).

        Column ``n_fft // 2`` is lag zero. The band edge at Nyquist makes the
        discrete response ring on both sides of zero lag, so the negative lags
        are kept rather than wrapped onto long delays.
        """
        if self._ir is None:
            ir = np.fft.irfft(self.H, n=self.n_fft, axis=-1)
            self._ir = np.roll(ir, self.n_fft // 2, axis=-1)
        return self._ir


def channel_response(params, positions, omegas, substeps=8):
    """Complex transfer H for the given channel positions and angular frequencies > 0."""
    positions = np.asarray(positions, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    G = phase_integral_grid(params, positions, omegas, substeps)
    g = local_wavenumber(params, positions[:, None], omegas[None, :])
    xi = impedance(params, positions[:, None], omegas[None, :])
    G0 = (2.0 / params.alpha) * local_wavenumber(params, 0.0, omegas)
    p0 = np.sqrt(2.0 / params.alpha) * special.hankel2_0(G0)
    with np.errstate(under="ignore"):
        p = np.sqrt(G / g) * special.hankel2_0(G)
    vy = -2.0 * p / xi
    zin = input_impedance(params, omegas)
    return 1j * zin[None, :] * vy / p0[None, :]


def build_transfer(params=None, sample_rate=16000.0, n_fft=None, chunk=256, substeps=8):
    """Evaluate the transfer matrix on the positive rfft bins."""
    params = params or BmParams()
    n_fft = n_fft or default_n_fft(sample_rate)
    if n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    positions = params.positions()
    H = np.zeros((params.n_ch, freqs.size), dtype=np.complex128)
    omegas = 2 * np.pi * freqs
    for start in range(1, freqs.size, chunk):
        stop = min(start + chunk, freqs.size)
        H[:, start:stop] = channel_response(params, positions, omegas[start:stop], substeps)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite transfer values")
    return CochlearTransfer(positions, freqs, H, float(sample_rate), int(n_fft), params)


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def bm_velocity(transfer, clip, channels=None):
    """Membrane velocity for every channel, shape (n_channels, len(clip)).

    Linear convolution of the clip with each channel's impulse response,
    computed with one zero-padded FFT product so no circular wrap occurs.
    """
    samples = clip.samples if hasattr(clip, "samples") else np.asarray(clip)
    rate = getattr(clip, "sample_rate", transfer.sample_rate)
    if abs(rate - transfer.sample_rate) > 1e-9:
        raise RateMismatch(f"clip at {rate} Hz, transfer built for {transfer.sample_rate} Hz")
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    ir = transfer.impulse_responses()
    if channels is not None:
        ir = ir[channels]
    if n == 0:
        return np.zeros((ir.shape[0], 0))
    lag0 = transfer.n_fft // 2
    n_pad = _next_pow2(n + transfer.n_fft)
    spec = np.fft.rfft(samples, n_pad)
    out = np.empty((ir.shape[0], n))
    block = 32
    for i in range(0, ir.shape[0], block):
        hk = np.fft.rfft(ir[i:i + block], n_pad, axis=-1)
        out[i:i + block] = np.fft.irfft(hk * spec[None, :], n_pad, axis=-1)[:, lag0:lag0 + n]
    return transfer.calib_gain * out


def save_transfer(path, transfer):
    """Versioned cache file keyed by (params digest, sample rate, n_fft)."""
    meta = {
        "version": TRANSFER_CACHE_VERSION,
        "params": dataclasses.asdict(transfer.params),
        "digest": transfer.params.digest(),
        "sample_rate": transfer.sample_rate,
        "n_fft": transfer.n_fft,
        "calib_gain": transfer.calib_gain,
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 H=transfer.H, positions=transfer.positions, freqs=transfer.freqs)


def load_transfer(path, params=None, sample_rate=None, n_fft=None):
    """Load a cached transfer; returns None when the key does not match."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != TRANSFER_CACHE_VERSION:
            return None
        stored = BmParams(**meta["params"])
        if params is not None and stored.digest() != params.digest():
            return None
        if sample_rate is not None and meta["sample_rate"] != float(sample_rate):
            return None
        if n_fft is not None and meta["n_fft"] != n_fft:
            return None
        return CochlearTransfer(data["positions"], data["freqs"], data["H"], meta["sample_rate"],
                                meta["n_fft"], stored, meta["calib_gain"])


def cached_transfer(params, sample_rate, cache_path=None, n_fft=None):
    """Build a transfer, reusing ``cache_path`` when its key matches."""
    if cache_path is not None:
        hit = load_transfer(cache_path, params, sample_rate, n_fft)
        if hit is not None:
            return hit
    tr = build_transfer(params, sample_rate, n_fft)
    if cache_path is not None:
        save_transfer(cache_path, tr)
    return tr
