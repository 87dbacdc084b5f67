"""Two-body scattering data of the model and the potentials built from it.

Everything here depends only on the coupling ``b`` (with ``bhat = 1/2 - b``):
the two-particle S-matrix, the minimal two-particle form factor, the pair
interaction ``w`` and its split into ``w_plus`` / ``w_minus``, the Fourier
symbols ``R``, ``R_plus``, ``R_minus`` and the Wiener-Hopf factors of ``R``.

Half-line oscillatory integrals whose integrands only decay like ``1/x`` are
regularised by subtracting an elementary term with a known transform; the
exponentially decaying remainder is integrated with QUADPACK's QAWO rule on a
finite window whose length is fixed by an explicit tail bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy import integrate, special

_TAYLOR_GUARD = 1e-2
POLE_GUARD = 1e-8


class PoleProximityError(ValueError):
    """Raised when a point lies within the guard distance of a pole."""


class QuadratureError(RuntimeError):
    """Raised when an integral cannot reach the requested tolerance."""


@dataclass(frozen=True)
class ModelParams:
    """Coupling ``b`` in (0, 1/2), charge ``gamma_charge`` and mass scale ``kappa``."""

    b: float = 0.3
    gamma_charge: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.b < 0.5):
            raise ValueError(f"coupling b must lie in (0, 1/2), got {self.b}")
        if not self.kappa > 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not math.isfinite(self.gamma_charge):
            raise ValueError("gamma_charge must be finite")

    @property
    def bhat(self) -> float:
        return 0.5 - self.b

    @property
    def g(self) -> float:
        """Field-theory coupling recovered from ``b = g^2 / (2 (8 pi + g^2))``."""
        return math.sqrt(16.0 * math.pi * self.b / (1.0 - 2.0 * self.b))

    @classmethod
    def from_coupling(cls, g: float, gamma_charge: float = 1.0, kappa: float = 1.0):
        if g <= 0:
            raise ValueError("g must be positive")
        return cls(g * g / (2.0 * (8.0 * math.pi + g * g)), gamma_charge, kappa)

    def dual(self) -> "ModelParams":
        return ModelParams(self.bhat, self.gamma_charge, self.kappa)


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    max_subdivisions: int = 500
    oscillatory_cutoff: float | None = None   # fixed truncation point; adaptive when None

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_subdivisions < 10:
            raise ValueError("quadrature tolerances must be positive")
        if self.oscillatory_cutoff is not None and not self.oscillatory_cutoff > 0:
            raise ValueError("oscillatory_cutoff must be positive")


DEFAULT_QUAD = QuadratureSpec()


# ---------------------------------------------------------------- helpers


def sinhc(z):
    """sinh(z)/z with a Taylor branch near the origin (works for complex z)."""
    z = np.asarray(z)
    small = np.abs(z) < _TAYLOR_GUARD
    zs = np.where(small, 1.0, z)
    z2 = z * z
    taylor = 1 + z2 / 6 * (1 + z2 / 20 * (1 + z2 / 42 * (1 + z2 / 72)))
    out = np.where(small, taylor, np.sinh(zs) / zs)
    return out[()] if out.ndim == 0 else out


def _sinhc_scalar(z: float) -> float:
    if abs(z) < _TAYLOR_GUARD:
        z2 = z * z
        return 1 + z2 / 6 * (1 + z2 / 20 * (1 + z2 / 42 * (1 + z2 / 72)))
    return math.sinh(z) / z


def _one_minus_exp_over_x(x: float) -> float:
    """(1 - e^{-x}) / x for x >= 0."""
    if x < _TAYLOR_GUARD:
        return 1 - x / 2 * (1 - x / 3 * (1 - x / 4 * (1 - x / 5)))
    return -math.expm1(-x) / x


def _cutoff(f, decay: float, scale: float, quad: QuadratureSpec) -> float:
    """Window length X with scale * |f(X)| / decay below the absolute tolerance."""
    if quad.oscillatory_cutoff is not None:
        return quad.oscillatory_cutoff
    x = 30.0 / decay
    for _ in range(60):
        if scale * abs(f(x)) / decay < 0.1 * quad.abs_tol:
            return x
        x *= 1.5
    raise QuadratureError("integrand does not decay at the advertised rate")


def half_line_fourier(f, omega: float, decay: float, quad: QuadratureSpec = DEFAULT_QUAD,
                      scale: float = 1.0) -> complex:
    """Integral of f(x) exp(i omega x) over [0, inf) for real f decaying like exp(-decay x)."""
    upper = _cutoff(f, decay, scale, quad)
    opts = dict(epsabs=quad.abs_tol / max(scale, 1.0), epsrel=quad.rel_tol,
                limit=quad.max_subdivisions)
    if omega == 0.0:
        re, err = integrate.quad(f, 0.0, upper, **opts)
        return complex(re, 0.0)
    re, e1 = integrate.quad(f, 0.0, upper, weight="cos", wvar=omega, **opts)
    im, e2 = integrate.quad(f, 0.0, upper, weight="sin", wvar=omega, **opts)
    return complex(re, im)


def _check_poles(z, poles, period: complex | None = None):
    for p in poles:
        d = z - p
        if period is not None:
            k = round((d / period).real) if period.real else round(d.imag / period.imag)
            d = d - k * period
        if abs(d) < POLE_GUARD:
            raise PoleProximityError(f"argument {z} is within {POLE_GUARD} of a pole")


# ---------------------------------------------------------------- S-matrix


def smatrix(beta, params: ModelParams):
    """Two-particle S-matrix in closed form."""
    beta = np.asarray(beta, dtype=complex)
    b = params.b
    for z in np.atleast_1d(beta):
        _check_poles(z, [-2j * math.pi * b, 1j * math.pi + 2j * math.pi * b], 2j * math.pi)
    out = np.tanh(beta / 2 - 1j * math.pi * b) / np.tanh(beta / 2 + 1j * math.pi * b)
    return out[()] if out.ndim == 0 else out


def smatrix_integral(beta: float, params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD) -> complex:
    """S-matrix at real rapidity from its integral representation."""
    beta = float(beta)
    b, bh = params.b, params.bhat
    k = beta / math.pi

    def rem(x):
        if x < _TAYLOR_GUARD:
            g = b * bh / 2 * _sinhc_scalar(b * x) * _sinhc_scalar(bh * x) \
                * _sinhc_scalar(x / 2) / _sinhc_scalar(x) * x
        else:
            g = math.expm1(-2 * b * x) * math.expm1(-2 * bh * x) / (4 * x * (1 + math.exp(-x)))
        return g - _one_minus_exp_over_x(x) / 4

    if k == 0.0:
        return 1.0 + 0j
    sine_part = half_line_fourier(rem, k, 2 * min(b, bh), quad, scale=8.0).imag
    elementary = 0.25 * (math.copysign(math.pi / 2, k) - math.atan(k))
    return complex(np.exp(-8j * (sine_part + elementary)))


# ---------------------------------------------------------------- minimal form factor


def _psi_weight(x: float, b: float, bh: float) -> float:
    """sinh(bx) sinh(bh x) sinh(x/2) / (x sinh^2 x)."""
    if x < _TAYLOR_GUARD:
        return b * bh / 2 * _sinhc_scalar(b * x) * _sinhc_scalar(bh * x) \
            * _sinhc_scalar(x / 2) / _sinhc_scalar(x) ** 2
    return math.exp(-x) * math.expm1(-2 * b * x) * math.expm1(-2 * bh * x) \
        * (-math.expm1(-x)) / (2 * x * math.expm1(-2 * x) ** 2)


def _psi_times_exp(x: float, b: float, bh: float) -> float:
    if x < _TAYLOR_GUARD:
        return _psi_weight(x, b, bh) * math.exp(x)
    return math.expm1(-2 * b * x) * math.expm1(-2 * bh * x) \
        / (2 * x * (-math.expm1(-x)) * (1 + math.exp(-x)) ** 2)


def fmin2(beta, params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD) -> complex:
    """Minimal two-particle form factor for 0 <= Im(beta) <= 2 pi."""
    beta = complex(beta)
    if not (-1e-14 <= beta.imag <= 2 * math.pi + 1e-14):
        raise ValueError("fmin2 needs 0 <= Im(beta) <= 2 pi")
    if beta.imag > math.pi:
        beta = 2j * math.pi - beta          # F(beta) = F(2 i pi - beta)
    b, bh = params.b, params.bhat
    br, bi = beta.real, beta.imag
    s = -1j * beta / math.pi

    def lower(x):
        return _psi_weight(x, b, bh) * math.exp((bi / math.pi - 1.0) * x)

    def upper(x):
        return (_psi_times_exp(x, b, bh) - _one_minus_exp_over_x(x) / 2) * math.exp(-bi / math.pi * x)

    i1 = half_line_fourier(lower, -br / math.pi, 2.0 - bi / math.pi, quad, scale=2.0)
    i2 = half_line_fourier(upper, br / math.pi, 2 * min(b, bh) + bi / math.pi, quad, scale=2.0)
    if s == 0:
        return 0j
    return complex(np.exp(-2 * i1 - 2 * i2) * s / (s + 1))


def fmin2_at_i_pi_closed(params: ModelParams) -> float:
    """F(i pi) from the one-dimensional integral of t / sin t."""
    val, _ = integrate.quad(lambda t: t / math.sin(t) if t else 1.0, 0.0, 2 * math.pi * params.b,
                            epsabs=1e-15, epsrel=1e-14)
    return math.exp(-val / math.pi)


# ---------------------------------------------------------------- pair potential w


def _w_remainder(x: float, b: float, bh: float) -> float:
    """[phi(x) - (1 - e^{-x})/4] / x, the exponentially decaying part of the w integrand."""
    if x < _TAYLOR_GUARD:
        phi_over_x = b * bh / 2 * _sinhc_scalar(b * x) * _sinhc_scalar(bh * x) \
            * _sinhc_scalar(x / 2) * math.cosh(x) / _sinhc_scalar(x) ** 2
    else:
        e = math.exp(-x)
        phi_over_x = 0.25 * math.expm1(-2 * b * x) * math.expm1(-2 * bh * x) * (1 + e * e) \
            / (x * (-math.expm1(-x)) * (1 + e) ** 2)
    return phi_over_x - _one_minus_exp_over_x(x) / 4


def w_smooth(lam: float, params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """w(lam) - 2 log|lam|, a smooth even function (finite at 0)."""
    b, bh = params.b, params.bhat
    lam = abs(float(lam))
    val = half_line_fourier(lambda x: _w_remainder(x, b, bh), lam / math.pi,
                            2 * min(b, bh), quad, scale=8.0).real
    return -8.0 * val - math.log(math.pi ** 2 + lam * lam)


def potential_w(lam, params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD):
    """Pair potential w at real nonzero arguments (direct quadrature)."""
    arr = np.asarray(lam, dtype=float)
    if np.any(arr == 0.0):
        raise ValueError("w diverges logarithmically at 0")
    out = np.array([w_smooth(x, params, quad) + 2 * math.log(abs(x)) for x in arr.ravel()])
    out = out.reshape(arr.shape)
    return out[()] if out.ndim == 0 else out


def w_large_argument(lam, params: ModelParams):
    """Leading exponential behaviour of w for large |lam| (next correction ~ e^{-2|lam|})."""
    b, bh = params.b, params.bhat
    lam = np.abs(np.asarray(lam, dtype=float))
    pref = 8 * math.sin(math.pi * b) * math.sin(math.pi * bh)
    shift = b / math.tan(math.pi * b) + bh / math.tan(math.pi * bh)
    return pref * np.exp(-lam) * ((lam + 1) / math.pi - shift)


# ---------------------------------------------------------------- potential v and the split of w


def potential_v(lam, alpha: float, eta: float):
    """v(lam) = log[(sinh^2 lam + sin^2 alpha) / (sinh^2 lam + sin^2 eta)]."""
    lam = np.asarray(lam, dtype=float)
    sa, se = math.sin(alpha) ** 2, math.sin(eta) ** 2
    if se == 0.0 and np.any(lam == 0.0):
        raise ValueError("v diverges at lam = 0 when eta = 0")
    with np.errstate(over="ignore"):
        sh2 = np.sinh(lam) ** 2
        out = np.log1p((sa - se) / (sh2 + se))
    return out[()] if out.ndim == 0 else out


def v_plus_two_log(lam, alpha: float):
    """v_{alpha,0}(lam) + 2 log|lam|, smooth at 0."""
    lam = np.abs(np.asarray(lam, dtype=float))
    sa = math.sin(alpha) ** 2
    small = lam < 1.0
    ls = np.where(small, lam, 1.0)
    ll = np.where(small, 1.0, lam)
    near = np.log(np.sinh(ls) ** 2 + sa) - 2 * np.log(sinhc(ls))
    log_sinh = ll + np.log1p(-np.exp(-2 * ll)) - math.log(2.0)
    with np.errstate(over="ignore"):
        far = 2 * np.log(ll) + np.log1p(sa * np.exp(-2 * log_sinh))
    out = np.where(small, near, far)
    return out[()] if out.ndim == 0 else out


def fourier_v(k, alpha: float, eta: float):
    """Fourier transform of v_{alpha,eta} (integral of v(x) e^{ikx} over the line)."""
    k = np.asarray(k, dtype=float)
    p = (eta - alpha) / 2
    q = (math.pi - eta - alpha) / 2
    small = np.abs(k) < _TAYLOR_GUARD
    ks = np.where(small, 1.0, k)
    regular = -4 * math.pi * np.sinh(ks * p) * np.sinh(ks * q) / (ks * np.sinh(math.pi * ks / 2))
    # k -> 0 limit: ratio tends to 2 p q / pi
    limit = -8 * p * q * sinhc(k * p) * sinhc(k * q) / sinhc(math.pi * k / 2)
    out = np.where(small, limit, regular)
    return out[()] if out.ndim == 0 else out


def potential_v_fourier(x: float, alpha: float, eta: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """v_{alpha,eta}(x) rebuilt from its Fourier transform (independent of the closed form)."""
    x = abs(float(x))
    if eta == 0.0:
        decay = min(alpha, math.pi - alpha)

        def rem(k):
            return float(fourier_v(k, alpha, 0.0)) - 2 * math.pi * _one_minus_exp_over_x(k)

        core = half_line_fourier(rem, x, decay, quad, scale=1 / math.pi).real / math.pi
        if x == 0.0:
            raise ValueError("v diverges at 0 when eta = 0")
        return core + math.log((1 + x * x) / (x * x))
    # for eta > 0 the transform decays like exp(-rate |k|)
    rate = math.pi / 2 - (abs(eta - alpha) + abs(math.pi - eta - alpha)) / 2
    if rate <= 0:
        raise ValueError("need 0 < eta < pi - alpha for an exponentially decaying transform")
    return half_line_fourier(lambda k: float(fourier_v(k, alpha, eta)), x, rate,
                             quad, scale=1 / math.pi).real / math.pi


def potentials_pm(lam, params: ModelParams, quad: QuadratureSpec = DEFAULT_QUAD):
    """(w_plus, w_minus) with w_plus = w + v/2 and w_minus = -v/2, v = v_{2 pi b, 0}."""
    alpha = 2 * math.pi * params.b
    v = potential_v(lam, alpha, 0.0)
    return potential_w(lam, params, quad) + 0.5 * v, -0.5 * v


def _r_sign_plus(mu: float, b: float, bh: float, which: str) -> float:
    """R_plus(mu) or R_minus(mu) for mu >= 0 in overflow-free form."""
    em = math.exp(-math.pi * mu)
    base = 0.5 * math.expm1(-2 * math.pi * b * mu) * math.expm1(-2 * math.pi * bh * mu)
    if which == "plus":
        return base * (-math.expm1(-math.pi * mu)) / (1 + em) ** 2
    return base / (-math.expm1(-math.pi * mu))


def potential_pm_fourier(x: float, which: str, params: ModelParams,
                         quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """w_plus or w_minus at x != 0 from the Fourier integral of R_pm(mu)/mu."""
    if which not in ("plus", "minus"):
        raise ValueError("which must be 'plus' or 'minus'")
    x = abs(float(x))
    if x == 0.0:
        raise ValueError("w_pm diverges at 0")
    b, bh = params.b, params.bhat

    def rem(mu):
        if mu == 0.0:
            r_over = 0.0 if which == "plus" else 2 * math.pi * b * bh
        else:
            r_over = _r_sign_plus(mu, b, bh, which) / mu
        return r_over - 0.5 * _one_minus_exp_over_x(mu)

    decay = min(2 * math.pi * min(b, bh), 1.0)
    core = half_line_fourier(rem, x, decay, quad, scale=2.0).real
    return -2.0 * core - 0.5 * math.log((1 + x * x) / (x * x))


# ---------------------------------------------------------------- Fourier symbols


def rfun(lam, params: ModelParams, which: str = "R"):
    """Fourier symbols R = 2 R_plus, R_plus and R_minus (odd, complex arguments allowed).

    R_plus  = sinh(pi b l) sinh(pi bh l) sinh(pi l / 2) / cosh^2(pi l / 2)
    R_minus = sinh(pi b l) sinh(pi bh l) / sinh(pi l / 2)
    """
    if which not in ("R", "plus", "minus"):
        raise ValueError("which must be 'R', 'plus' or 'minus'")
    lam = np.asarray(lam, dtype=complex)
    b, bh = params.b, params.bhat
    flip = lam.real < 0
    z = np.where(flip, -lam, lam)
    with np.errstate(over="ignore", invalid="ignore"):
        num = np.expm1(-2 * np.pi * b * z) * np.expm1(-2 * np.pi * bh * z)
        em = np.exp(-np.pi * z)
        if which == "minus":
            val = 0.5 * num / (-np.expm1(-np.pi * z))
            # removable point at 0
            val = np.where(z == 0, 0.0, val)
        else:
            val = num * (-np.expm1(-np.pi * z)) / (1 + em) ** 2
            if which == "plus":
                val = 0.5 * val
    out = np.where(flip, -val, val)
    return out[()] if out.ndim == 0 else out


def rfun_derivative_at_zero_family(alpha, params: ModelParams, family: str):
    """R'(i alpha) at a simple zero of R in the upper half-plane.

    ``family`` is 'b' (alpha = n/b), 'bhat' (alpha = n/bhat) or 'two' (alpha = 2n).
    """
    alpha = np.asarray(alpha, dtype=float)
    b, bh = params.b, params.bhat
    lam = 1j * alpha
    sb, sbh = np.sinh(np.pi * b * lam), np.sinh(np.pi * bh * lam)
    sh, ch = np.sinh(np.pi * lam / 2), np.cosh(np.pi * lam / 2)
    if family == "b":
        return 2 * np.pi * b * np.cosh(np.pi * b * lam) * sbh * sh / ch ** 2
    if family == "bhat":
        return 2 * np.pi * bh * np.cosh(np.pi * bh * lam) * sb * sh / ch ** 2
    if family == "two":
        return np.pi * sb * sbh / ch
    raise ValueError(f"unknown pole family {family!r}")


def _lower_factor_log(lam, b: float, bh: float):
    """log of R_down(lam) / sqrt(pi b bh)."""
    il = 1j * lam
    return (il * (b * math.log(b) + bh * math.log(bh) + 0.5 * math.log(2.0))
            + 2 * special.loggamma(0.5 + il / 2)
            - special.loggamma(1 + b * il) - special.loggamma(1 + bh * il)
            - special.loggamma(1 + il / 2))


def wiener_hopf(lam, params: ModelParams):
    """Wiener-Hopf factors (R_up, R_down) of R with R_up * R_down = R.

    R_down is analytic and zero-free below the real axis, R_up above it.
    Poles: R_down at i(2n+1), R_up at -i(2n+1), n >= 0.
    """
    lam = np.asarray(lam, dtype=complex)
    for z in np.atleast_1d(lam):
        y = z.imag
        if abs(z.real) < POLE_GUARD and abs(y) >= 1 - POLE_GUARD:
            k = round((abs(y) - 1) / 2)
            if abs(abs(y) - (2 * k + 1)) < POLE_GUARD:
                raise PoleProximityError(f"{z} is within {POLE_GUARD} of a pole of a factor")
    b, bh = params.b, params.bhat
    amp = math.sqrt(math.pi * b * bh)
    down = amp * np.exp(_lower_factor_log(lam, b, bh))
    up = amp * lam ** 3 * np.exp(_lower_factor_log(-lam, b, bh))
    if down.ndim == 0:
        return up[()], down[()]
    return up, down


def wiener_hopf_up(lam, params: ModelParams):
    lam = np.asarray(lam, dtype=complex)
    out = math.sqrt(math.pi * params.b * params.bhat) * lam ** 3 \
        * np.exp(_lower_factor_log(-lam, params.b, params.bhat))
    return out[()] if out.ndim == 0 else out


def wiener_hopf_down(lam, params: ModelParams):
    lam = np.asarray(lam, dtype=complex)
    out = math.sqrt(math.pi * params.b * params.bhat) \
        * np.exp(_lower_factor_log(lam, params.b, params.bhat))
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------- fast evaluation of w


class SmoothPotentialTable:
    """Tabulated smooth part of w for bulk evaluation.

    w(lam) - 2 log|lam| is fitted by Chebyshev interpolants on unit panels of
    [0, span], resampled on a uniform grid and read back with four-point
    Lagrange interpolation. Beyond ``span`` the exponentially small remainder
    is dropped (it is below e^{-span}).
    """

    def __init__(self, params: ModelParams, span: float = 40.0, degree: int = 28,
                 step: float = 1.0 / 512, quad: QuadratureSpec = DEFAULT_QUAD):
        self.params = params
        self.span = float(span)
        self.step = float(step)
        n_panels = int(math.ceil(span))
        grid = np.arange(-2, int(round(span / step)) + 4) * step
        values = np.empty_like(grid)
        for k in range(n_panels):
            lo, hi = float(k), float(k + 1)
            fit = cheb.Chebyshev.interpolate(
                lambda x: np.array([w_smooth(t, params, quad) for t in np.atleast_1d(x)]),
                degree, domain=[lo, hi])
            sel = (np.abs(grid) >= lo) & (np.abs(grid) <= hi)
            values[sel] = fit(np.abs(grid[sel]))
        tail = np.abs(grid) > n_panels
        values[tail] = -2 * np.log(np.abs(grid[tail]))
        self._grid0 = grid[0]
        self._values = values

    def smooth(self, lam):
        """w(lam) - 2 log|lam| for any real lam (vectorised)."""
        x = np.abs(np.asarray(lam, dtype=float))
        inside = x < self.span
        xi = np.where(inside, x, 0.0)
        t = (xi - self._grid0) / self.step
        i = np.floor(t).astype(np.int64)
        f = t - i
        v = self._values
        ym1, y0, y1, y2 = v[i - 1], v[i], v[i + 1], v[i + 2]
        interp = (-f * (f - 1) * (f - 2) / 6 * ym1 + (f + 1) * (f - 1) * (f - 2) / 2 * y0
                  - (f + 1) * f * (f - 2) / 2 * y1 + (f + 1) * f * (f - 1) / 6 * y2)
        with np.errstate(divide="ignore"):
            far = -2 * np.log(np.where(inside, 1.0, x))
        out = np.where(inside, interp, far)
        return out[()] if out.ndim == 0 else out

    def w(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            return self.smooth(lam) + 2 * np.log(np.abs(lam))

    def exp_w(self, lam):
        """e^{w(lam)} = lam^2 e^{w_smooth(lam)}, finite (zero) at the origin."""
        lam = np.asarray(lam, dtype=float)
        return lam * lam * np.exp(self.smooth(lam))


@lru_cache(maxsize=16)
def smooth_potential_table(params: ModelParams) -> SmoothPotentialTable:
    return SmoothPotentialTable(params)
