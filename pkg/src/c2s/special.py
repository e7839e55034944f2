"""Bessel functions J0, J1, Y0, Y1 and Hankel functions of the second kind.

Small arguments (|z| < 8) use the ascending power series, except for
Hankel functions with Im z < -4. Large arguments
use Hankel's integral

    H_nu^(2)(z) = sqrt(2/(pi z)) exp(-i(z - nu pi/2 - pi/4)) / Gamma(nu + 1/2)
                  * int_0^inf exp(-u) u^(nu-1/2) (1 - i u/(2z))^(nu-1/2) du

whose Taylor expansion in u/z is the usual asymptotic series. Substituting
u = s^2 turns the integral into a Gaussian-weighted integral of an analytic
function, which the trapezoidal rule resolves to machine precision, so the
correction factor is exact instead of a truncated divergent series.

The integral form is valid for -pi < arg z < pi/2, which covers the closed
fourth quadrant where the cochlear phase integral lives.
"""

import math

import numpy as np

from .errors import SingularArgument

SERIES_RADIUS = 8.0
_CANCEL_IMAG = 4.0
_N_TERMS = 48
_EULER_GAMMA = 0.57721566490153286061

# trapezoid nodes on s in [0, 6.2]; the integrand's nearest singularity sits
# at |Im s| >= sqrt|z| >= 2, so h = 0.2 is exact to rounding for |z| >= 4
_QUAD_H = 0.2
_QUAD_S = np.arange(0.0, 6.2 + _QUAD_H / 2, _QUAD_H)
_QUAD_W = np.full(_QUAD_S.shape, _QUAD_H)
_QUAD_W[0] = _QUAD_H / 2
_QUAD_U = _QUAD_S**2
_QUAD_G = _QUAD_W * np.exp(-_QUAD_U)


def _harmonic(n):
    return sum(1.0 / j for j in range(1, n + 1))


_HARM = np.array([_harmonic(k) for k in range(_N_TERMS + 2)])
_FACT2 = np.array([float(math.factorial(k)) ** 2 for k in range(_N_TERMS + 1)])
_FACT_K_K1 = np.array(
    [float(math.factorial(k)) * float(math.factorial(k + 1)) for k in range(_N_TERMS + 1)]
)


def _as_complex(z):
    z = np.asarray(z)
    return z.astype(np.complex128, copy=False), np.isrealobj(z)


def _series(z):
    """J0, J1, Y0, Y1 from the ascending series; z complex array, z != 0."""
    q = -(z * z) / 4.0
    half = z / 2.0
    log_term = np.log(half) + _EULER_GAMMA

    j0 = np.zeros_like(z)
    j1s = np.zeros_like(z)
    y0s = np.zeros_like(z)
    y1s = np.zeros_like(z)
    p = np.ones_like(z)
    for k in range(_N_TERMS + 1):
        t0 = p / _FACT2[k]
        t1 = p / _FACT_K_K1[k]
        j0 += t0
        j1s += t1
        y0s += _HARM[k] * t0
        # psi(k+1) + psi(k+2) = H_k + H_{k+1} - 2 gamma
        y1s += (_HARM[k] + _HARM[k + 1] - 2 * _EULER_GAMMA) * t1
        p = p * q
    j1 = half * j1s
    y0 = (2 / np.pi) * (log_term * j0 - y0s)
    y1 = -2 / (np.pi * z) + (2 / np.pi) * (log_term - _EULER_GAMMA) * j1 - half * y1s / np.pi
    return j0, j1, y0, y1


def _hankel2_integral(z, nu):
    """H_nu^(2)(z) for nu in {0, 1} by quadrature of Hankel's integral."""
    # exp(-i z) underflows below Im z = -745; skip the quadrature there
    out = np.zeros(z.shape, dtype=np.complex128)
    live = z.imag > -745.0
    if not np.all(live):
        if np.any(live):
            out[live] = _hankel2_integral(z[live], nu)
        return out
    zc = z[..., None]
    ratio = 1.0 - 1j * _QUAD_U / (2.0 * zc)
    if nu == 0:
        integrand = ratio**-0.5
        corr = (2.0 / math.sqrt(math.pi)) * np.sum(_QUAD_G * integrand, axis=-1)
    else:
        integrand = _QUAD_U * ratio**0.5
        # Gamma(3/2) = sqrt(pi)/2
        corr = (4.0 / math.sqrt(math.pi)) * np.sum(_QUAD_G * integrand, axis=-1)
    phase = z - nu * np.pi / 2 - np.pi / 4
    with np.errstate(under="ignore", over="ignore"):
        return np.sqrt(2.0 / (np.pi * z)) * np.exp(-1j * phase) * corr


def _check_nonzero(z):
    if np.any(z == 0):
        raise SingularArgument("Bessel Y / Hankel functions are singular at z = 0")


def _check_sector(z):
    ang = np.angle(z)
    if np.any((ang >= np.pi / 2) | (ang <= -np.pi)):
        raise ValueError("large-argument branch requires -pi < arg z < pi/2")


def hankel2(nu, z):
    """Hankel function of the second kind H_nu^(2)(z) for nu in {0, 1}."""
    if nu not in (0, 1):
        raise ValueError("only orders 0 and 1 are implemented")
    zc, _ = _as_complex(z)
    _check_nonzero(zc)
    out = np.empty(zc.shape, dtype=np.complex128)
    # deep in the lower half plane J and Y grow like exp|Im z| while H2
    # decays, so the series difference J - iY cancels; use the integral there
    small = (np.abs(zc) < SERIES_RADIUS) & (zc.imag > -_CANCEL_IMAG)
    if np.any(small):
        j0, j1, y0, y1 = _series(zc[small])
        out[small] = (j0 - 1j * y0) if nu == 0 else (j1 - 1j * y1)
    if np.any(~small):
        big = zc[~small]
        _check_sector(big)
        out[~small] = _hankel2_integral(big, nu)
    return out if out.ndim else out[()]


def hankel2_0(z):
    """H_0^(2)(z) = J0(z) - i Y0(z)."""
    return hankel2(0, z)


def hankel2_1(z):
    return hankel2(1, z)


def _bessel_pair(nu, z):
    """(J_nu, Y_nu) for nu in {0, 1} with |arg z| < pi/2 beyond the series radius."""
    zc, is_real = _as_complex(z)
    j = np.empty(zc.shape, dtype=np.complex128)
    y = np.empty(zc.shape, dtype=np.complex128)
    small = np.abs(zc) < SERIES_RADIUS
    if np.any(small):
        zs = zc[small]
        if nu == 0 and np.any(zs == 0):
            # J0(0) = 1, Y0(0) = -inf
            j0 = np.ones_like(zs)
            y0 = np.full_like(zs, -np.inf)
            nz = zs != 0
            if np.any(nz):
                a, _, b, _ = _series(zs[nz])
                j0[nz], y0[nz] = a, b
            j[small], y[small] = j0, y0
        else:
            _check_nonzero(zs)
            j0, j1, y0, y1 = _series(zs)
            j[small], y[small] = (j0, y0) if nu == 0 else (j1, y1)
    if np.any(~small):
        big = zc[~small]
        if np.any(big.real <= 0):
            raise ValueError("large-argument Bessel evaluation requires Re z > 0")
        # J and Y are real on the real axis and obey f(conj z) = conj f(z),
        # so evaluate in the closed lower half plane where H1 = conj H2(conj z).
        upper = big.imag > 0
        w = np.where(upper, np.conj(big), big)
        h2 = _hankel2_integral(w, nu)
        h1 = np.conj(_hankel2_integral(np.conj(w), nu))
        jb = 0.5 * (h1 + h2)
        yb = (h1 - h2) / 2j
        j[~small] = np.where(upper, np.conj(jb), jb)
        y[~small] = np.where(upper, np.conj(yb), yb)
    if is_real:
        j, y = j.real, y.real
    if j.ndim == 0:
        return j[()], y[()]
    return j, y


def j0(z):
    return _bessel_pair(0, z)[0]


def y0(z):
    return _bessel_pair(0, z)[1]


def j1(z):
    return _bessel_pair(1, z)[0]


def y1(z):
    return _bessel_pair(1, z)[1]


def bessel_jy(z):
    """Return (J0, J1, Y0, Y1) at z in one pass."""
    a, b = _bessel_pair(0, z)
    c, d = _bessel_pair(1, z)
    return a, c, b, d
