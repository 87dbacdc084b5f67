"""Explicit large-N description of the equilibrium measure and its energy.

The minimiser of the rescaled energy is described at leading order through
the Wiener-Hopf factors of R and four Laurent coefficients. This module
evaluates those formulas: the endpoint equation, the 2x2 matrix chi in its two
leading-order regions, the density (boundary plus bulk parts), the slope of the
effective potential off the support and the energy integrals.

Fourier-type integrals of the form

    T(x) = int_{R + i eps} dlam / (2 i pi) * G(lam) K(lam) e^{i lam x},   x >= 0,

with K = 1/R or K = R are evaluated by residues in the upper half-plane.
Isolated simple zeros of R use analytic residues; coincident or multiple poles
use a small trapezoidal circle. For x close to 0 the residue sum is stopped at
a height A and the rest is the line integral on Im(lam) = A.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .specfun import (ModelParams, PoleProximityError, rfun, rfun_derivative_at_zero_family,
                      wiener_hopf_down, wiener_hopf_up)

GAMMA_OFFSET = 0.75          # distance of the lens contours from the real axis
ALPHA_TILDE = 0.5
CAUCHY_RADIUS = 0.5
CAUCHY_NODES = 256
TAYLOR_ORDER = 60
SERIES_SWITCH = 0.1          # |lam| below which u_reg is summed from its Taylor series
LINE_SWITCH = 1e-2           # x below which residue sums are completed by a line integral


class RegionError(ValueError):
    """Raised when a point lies outside the regions with a leading-order formula."""


class NoRootError(ValueError):
    """Raised when the endpoint equation has no root in its bracket."""


# ---------------------------------------------------------------- geometry and coefficients


@dataclass(frozen=True)
class ScaledGeometry:
    N: float
    b_N: float
    a_N: float | None = None

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("the scaled geometry needs N >= 16")
        if self.b_N <= 0:
            raise ValueError("b_N must be positive")
        if self.a_N is None:
            object.__setattr__(self, "a_N", -self.b_N)
        if self.a_N >= self.b_N:
            raise ValueError("a_N must lie below b_N")

    @property
    def tau(self) -> float:
        return math.log(self.N)

    @property
    def bbar(self) -> float:
        return self.tau * self.b_N

    @property
    def abar(self) -> float:
        return self.tau * self.a_N

    @property
    def xbar(self) -> float:
        return self.tau * (self.b_N - self.a_N)

    @property
    def symmetric(self) -> bool:
        return abs(self.a_N + self.b_N) <= 1e-14 * self.b_N

    @classmethod
    def from_bbar(cls, N: float, bbar: float) -> "ScaledGeometry":
        return cls(N, bbar / math.log(N))


def error_budget(xbar: float, alpha_tilde: float = ALPHA_TILDE) -> float:
    """Size of the terms dropped by the leading-order description."""
    return xbar ** 4 * math.exp(-xbar * (1 - alpha_tilde))


@lru_cache(maxsize=32)
def _taylor_h(b: float) -> np.ndarray:
    """Taylor coefficients at 0 of lam^3 R_down(lam) / R_up(lam), by a Cauchy integral."""
    params = ModelParams(b)
    nearest = min(1.0, 1.0 / max(b, 0.5 - b))
    if CAUCHY_RADIUS >= nearest:
        raise PoleProximityError("Cauchy radius reaches the nearest singularity")
    theta = 2 * np.pi * np.arange(CAUCHY_NODES) / CAUCHY_NODES
    lam = CAUCHY_RADIUS * np.exp(1j * theta)
    vals = lam ** 3 * wiener_hopf_down(lam, params) / wiener_hopf_up(lam, params)
    coeffs = np.fft.fft(vals) / CAUCHY_NODES
    k = np.arange(TAYLOR_ORDER + 1)
    return coeffs[: TAYLOR_ORDER + 1] / CAUCHY_RADIUS ** k


def _c_coefficients(xbar: float, params: ModelParams, order: int = 3) -> np.ndarray:
    """Taylor coefficients of lam^3 R_down/R_up e^{-i lam xbar}, up to ``order``."""
    h = _taylor_h(params.b)
    z = -1j * xbar
    expo = np.array([z ** m / math.factorial(m) for m in range(order + 1)])
    return np.array([np.sum(h[: k + 1] * expo[k::-1]) for k in range(order + 1)])


@dataclass(frozen=True)
class LaurentCoeffs:
    xbar: float
    c: tuple            # c0..c3 (complex)
    w: tuple            # w0..w3 with c_k = (-i)^k w_k
    imag_residual: float

    @property
    def w_tilde(self) -> tuple:
        """w_k rescaled by (xbar/2)^k / k!-type factors: w1 = 2 bbar wt1, w2 = 2 bbar^2 wt2."""
        bbar = self.xbar / 2
        return (self.w[1] / (2 * bbar), self.w[2] / (2 * bbar ** 2))


def laurent_coeffs(xbar: float, params: ModelParams) -> LaurentCoeffs:
    if xbar <= 0:
        raise ValueError("xbar must be positive")
    c = _c_coefficients(xbar, params, 3)
    w_complex = [c[k] * 1j ** k for k in range(4)]
    resid = max(abs(v.imag) for v in w_complex)
    return LaurentCoeffs(xbar, tuple(complex(v) for v in c), tuple(float(v.real) for v in w_complex),
                         float(resid))


def w1_closed(xbar: float, params: ModelParams) -> float:
    """First coefficient from the logarithmic derivatives of the Gamma factors."""
    b, bh = params.b, params.bhat
    return xbar + 3 * math.log(2.0) - 2 * (b * math.log(b) + bh * math.log(bh))


def frak_t(x: float, params: ModelParams) -> float:
    if x <= 0:
        raise ValueError("x must be positive")
    w = laurent_coeffs(x, params).w
    return 6.0 / (x * x) * (2 + w[2] - w[1] - w[1] * w[3] / w[2])


def vartheta(params: ModelParams) -> float:
    b, bh = params.b, params.bhat
    return (2 * params.kappa / (3 * (2 * math.pi) ** 2.5) * special.gamma(b) * special.gamma(bh)
            / (b ** b * bh ** bh))


def bbar_expansion(N: float, params: ModelParams) -> float:
    """Two-term large-N expansion of the scaled endpoint."""
    L = math.log(N)
    return L - 2 * math.log(L) - math.log(vartheta(params))


def _endpoint_log_residual(bbar: float, N: float, params: ModelParams) -> float:
    t = frak_t(2 * bbar, params)
    if t <= 0:
        return -math.inf
    return math.log(vartheta(params)) + 2 * math.log(bbar) + bbar + math.log(t) - math.log(N)


def endpoint_residual(geom: ScaledGeometry, params: ModelParams) -> float:
    """theta bbar^2 e^bbar t(2 bbar) / N - 1 at the given geometry."""
    b = geom.bbar
    return vartheta(params) * b * b * math.exp(b) * frak_t(2 * b, params) / geom.N - 1.0


def solve_endpoint(N: float, params: ModelParams) -> ScaledGeometry:
    """Symmetric support [-b_N, b_N] from the leading-order endpoint equation."""
    if N < 16:
        raise NoRootError("N too small for the endpoint equation")
    lo, hi = 1.0, 3 * math.log(N)
    f = lambda x: _endpoint_log_residual(x, N, params)
    if not (f(lo) < 0 < f(hi)):
        raise NoRootError(f"no root of the endpoint equation in [{lo}, {hi}] for N={N}")
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(50):
        h = 1e-6
        slope = (f(x + h) - f(x - h)) / (2 * h)
        step = f(x) / slope
        x -= step
        if abs(step) < 1e-13 * x:
            break
    return ScaledGeometry.from_bbar(N, x)


# ---------------------------------------------------------------- chi at leading order


class ChiLeadingOrder:
    """Leading-order entries of chi above the upper lens and between R and the lower lens."""

    def __init__(self, geom: ScaledGeometry, params: ModelParams):
        self.geom = geom
        self.params = params
        self.xbar = geom.xbar
        self._c_all = _c_coefficients(self.xbar, params, TAYLOR_ORDER)
        c = self._c_all
        self.c = c[:4]
        self.q1 = -c[1] / c[2]
        self.q2 = c[2]
        self.coeffs = laurent_coeffs(self.xbar, params)

    @staticmethod
    def region_of(lam: complex) -> str:
        y = complex(lam).imag
        if y > GAMMA_OFFSET:
            return "upper"
        if -GAMMA_OFFSET < y <= 0:
            return "lower"
        raise RegionError(f"{lam} lies in no region with a leading-order formula")

    def u_reg(self, lam):
        """R_down/R_up e^{-i lam xbar} minus its polar part at 0 (entire near 0)."""
        lam = np.asarray(lam, dtype=complex)
        small = np.abs(lam) < SERIES_SWITCH
        out = np.empty(lam.shape, dtype=complex)
        if np.any(small):
            ls = lam[small]
            acc = np.zeros(ls.shape, dtype=complex)
            for k in range(TAYLOR_ORDER, 2, -1):
                acc = acc * ls + self._c_all[k]
            out[small] = acc
        if np.any(~small):
            lb = lam[~small]
            c = self._c_all
            ratio = wiener_hopf_down(lb, self.params) / wiener_hopf_up(lb, self.params)
            out[~small] = ratio * np.exp(-1j * lb * self.xbar) - (c[0] / lb ** 3 + c[1] / lb ** 2 + c[2] / lb)
        return out[()] if out.ndim == 0 else out

    def upper(self, lam):
        lam = np.asarray(lam, dtype=complex)
        c = self.c
        up = wiener_hopf_up(lam, self.params)
        q = c[1] / c[2]
        chi11 = 1 / (c[2] * up)
        chi12 = (lam - q) / up
        chi21 = -(up / c[2]) * (c[0] / lam ** 3 + c[1] / lam ** 2 + c[2] / lam)
        chi22 = up * (lam + q) / lam ** 3
        return np.array([[chi11, chi12], [chi21, chi22]])

    def lower(self, lam):
        lam = np.asarray(lam, dtype=complex)
        c = self.c
        down = wiener_hopf_down(lam, self.params)
        q = c[1] / c[2]
        u = self.u_reg(lam)
        chi11 = u / (c[2] * down)
        chi12 = (c[2] + (lam - q) * u) / down
        big = np.abs(lam) >= 1.0
        if np.any(big):
            # the polar part of u_reg cancels c2 at large |lam|; keep only what survives
            lb = lam[big] if lam.ndim else lam
            up = wiener_hopf_up(lb, self.params)
            rest = (q * c[1] - c[0]) / lb ** 2 + q * c[0] / lb ** 3
            val = (lb - q) * np.exp(-1j * lb * self.xbar) / up + rest / (down[big] if lam.ndim else down)
            if lam.ndim:
                chi12 = np.array(chi12, dtype=complex)
                chi12[big] = val
            else:
                chi12 = val
        chi21 = down / c[2]
        chi22 = down * (lam - q)
        return np.array([[chi11, chi12], [chi21, chi22]])

    def entries(self, lam, region: str | None = None):
        """2x2 array of chi entries; ``region`` forces one of the two analytic expressions."""
        if region is None:
            region = self.region_of(lam)
        if region == "upper":
            return self.upper(lam)
        if region == "lower":
            return self.lower(lam)
        raise ValueError(f"unknown region {region!r}")

    def derivative(self, lam: complex, region: str, radius: float = 0.05, nodes: int = 32):
        """Entry-wise derivative by a Cauchy integral on a small circle."""
        theta = 2 * np.pi * np.arange(nodes) / nodes
        z = lam + radius * np.exp(1j * theta)
        vals = self.entries(z, region)
        return np.mean(vals * np.exp(-1j * theta), axis=-1) / radius

    def circle_mean(self, lam: complex, region: str, radius: float = 0.1, nodes: int = 32):
        """Entries at lam as the mean over a small circle (removes cancelling poles of the factors)."""
        theta = 2 * np.pi * (np.arange(nodes) + 0.5) / nodes
        return np.mean(self.entries(lam + radius * np.exp(1j * theta), region), axis=-1)

    def reflected(self, lam: complex):
        """chi(-lam) from chi(lam) through chi(-l) = diag(1,-1) chi(l) [[1,0],[l,1]]."""
        m = self.entries(lam)
        right = np.array([[1, 0], [lam, 1]], dtype=complex)
        return np.diag([1, -1]) @ m @ right

    # the two combinations used throughout
    @property
    def at_i(self):
        return self.upper(1j)

    def w_function(self, a: int, lam, region: str = "upper"):
        """Auxiliary function W_a built from chi(i) and chi(lam)."""
        ci = self.at_i
        chi11_i, chi12_i = ci[0, 0], ci[0, 1]
        m = self.entries(lam, region)
        row = m[a - 1]
        lam = np.asarray(lam, dtype=complex)
        return (2j / (1 + lam * lam) * (chi11_i * row[1] - chi12_i * row[0])
                - 1j / (1j + lam) * chi12_i * row[1])


# ---------------------------------------------------------------- residue / line-integral transforms


def _zero_families(params: ModelParams, alpha_max: float):
    """Heights alpha of the zeros i alpha of R in the upper half-plane."""
    out = []
    for fam, step in (("b", 1 / params.b), ("bhat", 1 / params.bhat), ("two", 2.0)):
        n = np.arange(1, int(alpha_max / step) + 1)
        out.extend((fam, float(a)) for a in n * step)
    return sorted(out, key=lambda t: t[1])


def _cluster(points, tol_rel: float = 1e-6):
    groups = []
    for fam, a in points:
        if groups and abs(a - groups[-1][-1][1]) < tol_rel * max(1.0, a):
            groups[-1].append((fam, a))
        else:
            groups.append([(fam, a)])
    return groups


class UpperResidueTransform:
    """T(x) = int_{R+i eps} dl/(2 i pi) G(l) K(l) e^{i l x} for x >= 0, K in {1/R, R}."""

    def __init__(self, G, params: ModelParams, kernel: str = "inverse", alpha_max: float = 4000.0,
                 line_height: float = 40.0, circle_nodes: int = 64):
        if kernel not in ("inverse", "direct"):
            raise ValueError("kernel must be 'inverse' (1/R) or 'direct' (R)")
        self.G = G
        self.params = params
        self.kernel = kernel
        if kernel == "inverse":
            points = _zero_families(params, alpha_max)
        else:
            n = np.arange(0, int((alpha_max - 1) / 2) + 1)
            points = [("double", float(2 * k + 1)) for k in n]
        groups = _cluster(points)
        centers = np.array([g[0][1] for g in groups])
        nodes, weights, heights = [], [], []
        for k, grp in enumerate(groups):
            a = centers[k]
            if kernel == "inverse" and len(grp) == 1:
                fam = grp[0][0]
                z = 1j * a
                w = self.G(np.array([z]))[0] / rfun_derivative_at_zero_family(a, params, fam)
                nodes.append(np.array([z]))
                weights.append(np.array([w]))
                heights.append(np.array([a]))
                continue
            gaps = []
            if k > 0:
                gaps.append(a - centers[k - 1])
            if k + 1 < len(centers):
                gaps.append(centers[k + 1] - a)
            radius = min(0.2, 0.4 * min(gaps)) if gaps else 0.2
            theta = 2 * np.pi * (np.arange(circle_nodes) + 0.5) / circle_nodes
            z = 1j * a + radius * np.exp(1j * theta)
            vals = self.G(z) * self._kernel(z) * (z - 1j * a) / circle_nodes
            nodes.append(z)
            weights.append(vals)
            heights.append(np.full(circle_nodes, a))
        self.nodes = np.concatenate(nodes)
        self.weights = np.concatenate(weights)
        self.heights = np.concatenate(heights)
        self.alpha_max = alpha_max
        self.line_height = self._pick_height(centers, line_height)

    def _kernel(self, z):
        r = rfun(z, self.params, "R")
        return 1 / r if self.kernel == "inverse" else r

    @staticmethod
    def _pick_height(centers, target):
        cand = np.linspace(target - 2.0, target + 2.0, 801)
        dist = np.min(np.abs(cand[:, None] - centers[None, :]), axis=1)
        return float(cand[np.argmax(dist)])

    def _residue_sum(self, x, below: float | None = None):
        sel = slice(None) if below is None else self.heights < below
        z, w = self.nodes[sel], self.weights[sel]
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape, dtype=complex)
        for start in range(0, x.size, 256):
            xs = x[start:start + 256]
            out[start:start + 256] = np.exp(1j * np.outer(xs, z)) @ w
        return out

    def _line(self, x: float) -> complex:
        A = self.line_height
        G = self.G

        def f(t):
            z = np.array([t + 1j * A, -t + 1j * A])
            v = G(z) * self._kernel(z)
            return v[0], v[1]

        def even_re(t):
            a, b = f(t)
            return (a + b).real

        def even_im(t):
            a, b = f(t)
            return (a + b).imag

        def odd_re(t):
            a, b = f(t)
            return (a - b).real

        def odd_im(t):
            a, b = f(t)
            return (a - b).imag

        opts = dict(epsabs=1e-13, epsrel=1e-11, limit=400)
        with warnings.catch_warnings():
            # the imaginary parts are roundoff-sized and trip the extrapolation check
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            total = self._line_parts(x, opts, even_re, even_im, odd_re, odd_im)
        return math.exp(-A * x) * total / (2j * math.pi)

    @staticmethod
    def _line_parts(x, opts, even_re, even_im, odd_re, odd_im) -> complex:
        if x == 0.0:
            er = integrate.quad(even_re, 0, np.inf, **opts)[0]
            ei = integrate.quad(even_im, 0, np.inf, **opts)[0]
            total = complex(er, ei)
        else:
            fopts = dict(epsabs=1e-13, limlst=200, limit=400)
            cr = integrate.quad(even_re, 0, np.inf, weight="cos", wvar=x, **fopts)[0]
            ci = integrate.quad(even_im, 0, np.inf, weight="cos", wvar=x, **fopts)[0]
            sr = integrate.quad(odd_re, 0, np.inf, weight="sin", wvar=x, **fopts)[0]
            si = integrate.quad(odd_im, 0, np.inf, weight="sin", wvar=x, **fopts)[0]
            total = complex(cr, ci) + 1j * complex(sr, si)
        return total

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("the transform is defined for x >= 0")
        flat = x.ravel()
        out = np.empty(flat.shape, dtype=complex)
        far = flat >= LINE_SWITCH
        if np.any(far):
            out[far] = self._residue_sum(flat[far])
        for k in np.nonzero(~far)[0]:
            xv = float(flat[k])
            out[k] = self._residue_sum(xv, below=self.line_height)[0] + self._line(xv)
        out = out.reshape(x.shape)
        return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------- the N -> infinity building blocks


def _log_gamma_core(alpha, params: ModelParams):
    """alpha-dependent logarithm shared by frak_r and frak_l (complex-safe)."""
    b, bh = params.b, params.bhat
    a = np.asarray(alpha, dtype=complex)
    return (a * (b * math.log(b) + bh * math.log(bh) + 0.5 * math.log(2.0))
            + 2 * special.loggamma((1 + a) / 2) - special.loggamma(1 + b * a)
            - special.loggamma(1 + bh * a) - special.loggamma(1 + a / 2))


def _realify(v):
    v = np.asarray(v)
    if np.iscomplexobj(v) and np.all(np.abs(v.imag) <= 1e-12 * np.maximum(1.0, np.abs(v.real))):
        v = v.real
    return v[()] if v.ndim == 0 else v


def frak_r(alpha, params: ModelParams, complex_out: bool = False):
    a = np.asarray(alpha, dtype=complex)
    val = 3 * math.pi * params.b * params.bhat * a / (2 * (a - 1)) * np.exp(_log_gamma_core(a, params))
    return val if complex_out else _realify(val)


def frak_l(alpha, params: ModelParams, complex_out: bool = False):
    a = np.asarray(alpha, dtype=complex)
    val = 6 / (a * a * (a + 1)) * np.exp(-_log_gamma_core(a, params))
    return val if complex_out else _realify(val)


def frak_u(alpha, params: ModelParams):
    b, bh = params.b, params.bhat
    a = np.asarray(alpha, dtype=float)
    return ((3 * a + 2) / (a * (a + 1)) + b * math.log(2 * b) + bh * math.log(2 * bh)
            + special.digamma((1 + a) / 2) - b * special.digamma(1 + b * a)
            - bh * special.digamma(1 + bh * a) - 0.5 * special.digamma(1 + a / 2))


def _frak_r_h(alpha):
    a = np.asarray(alpha, dtype=float)
    return a / (2 * (a - 1)) * np.exp(2 * (special.gammaln((1 + a) / 2) - special.gammaln(1 + a / 2)))


def _frak_r_d(alpha, params: ModelParams):
    b, bh = params.b, params.bhat
    a = np.asarray(alpha, dtype=float)
    return 3 * math.pi * b * bh * np.exp(a * (0.5 * math.log(2) + b * math.log(b) + bh * math.log(bh))
                                         + special.gammaln(1 + a / 2) - special.gammaln(1 + b * a)
                                         - special.gammaln(1 + bh * a))


def _frak_l_d(alpha, params: ModelParams):
    b, bh = params.b, params.bhat
    a = np.asarray(alpha, dtype=float)
    return 1 / (2 * a) * np.exp(-a * (0.5 * math.log(2) + b * math.log(b) + bh * math.log(bh))
                                + special.gammaln(1 + b * a) + special.gammaln(1 + bh * a)
                                - special.gammaln(1 + a / 2))


def _frak_l_h(alpha):
    a = np.asarray(alpha, dtype=float)
    return 12 / (a * (a + 1)) * np.exp(2 * (special.gammaln(1 + a / 2) - special.gammaln((1 + a) / 2)))


def _sum_until_small(term, x: float, n0: int = 1, cap: int = 100_000, rel: float = 1e-12,
                     rate: float | None = None, tail_term=None):
    """Sum term(n) for n >= n0 in blocks until a block is negligible; cap guards x -> 0.

    When the cap is reached and the summand is a smooth function of n decaying
    like exp(-rate * n * x), the rest of the series is replaced by its
    midpoint-rule integral, taken in log(n) up to 60 decay lengths. An
    oscillating summand passes its non-oscillating average as ``tail_term``.
    """
    total, n, block = 0.0, n0, 64
    while n < n0 + cap:
        ns = np.arange(n, min(n + block, n0 + cap))
        part = float(np.sum(term(ns)))
        total += part
        n = ns[-1] + 1
        if abs(part) <= rel * max(abs(total), 1e-300):
            return total
        block = min(block * 2, 8192)
    if rate is not None:
        lo = math.log(n - 0.5)
        hi = math.log(n - 0.5 + 60.0 / (rate * x))
        smooth = term if tail_term is None else tail_term
        f = lambda u: float(smooth(np.array([math.exp(u)]))[0]) * math.exp(u)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            total += integrate.quad(f, lo, hi, limit=400, epsrel=1e-10)[0]
    return total


def rho_bd_limit_series(x: float, params: ModelParams) -> float:
    """Printed residue series of the limiting boundary density (generic b only)."""
    if x <= 0:
        raise ValueError("the series form needs x > 0; use rho_bd_limit at x = 0")
    b, bh = params.b, params.bhat

    def term(n):
        n = n.astype(float)
        t = 0.0
        for beta in (b, bh):
            a = n / beta
            t = t + np.exp(-a * x) / (2 * beta) / np.tan(math.pi * n / (2 * beta)) ** 2 * frak_r(a, params)
        return t - np.exp(-2 * n * x) * frak_r(2 * n, params) / np.sin(2 * math.pi * b * n) ** 2

    return _sum_until_small(term, x)


@lru_cache(maxsize=16)
def _rho_bd_transform(params: ModelParams) -> UpperResidueTransform:
    G = lambda z: -math.pi * frak_r(-1j * np.asarray(z), params, complex_out=True)
    return UpperResidueTransform(G, params, "inverse")


def rho_bd_limit(x, params: ModelParams):
    """Limiting boundary density: residues at the zeros of R, line integral near x = 0."""
    val = _rho_bd_transform(params)(x)
    return _realify(val) if np.ndim(val) else float(np.real(val))


@lru_cache(maxsize=16)
def _j_ext_transform(params: ModelParams) -> UpperResidueTransform:
    G = lambda z: -(math.pi ** 2 / 4) * frak_l(-1j * np.asarray(z), params, complex_out=True)
    return UpperResidueTransform(G, params, "direct")


def j_ext(x, params: ModelParams):
    val = _j_ext_transform(params)(x)
    return _realify(val) if np.ndim(val) else float(np.real(val))


def j_ext_series(x: float, params: ModelParams) -> float:
    """Printed series over the double poles at odd multiples of i."""
    b, bh = params.b, params.bhat

    def term(n):
        a = (2 * n + 1).astype(float)
        brace = (x + frak_u(a, params) - math.pi * b / np.tan(a * math.pi * b)
                 - math.pi * bh / np.tan(a * math.pi * bh))
        return frak_l(a, params) * np.sin(2 * math.pi * b * a) * brace * np.exp(-a * x)

    return _sum_until_small(term, x, n0=0)


def j_ext_zero_closed(params: ModelParams) -> float:
    b, bh = params.b, params.bhat
    return -0.75 * (2 * math.pi) ** 2.5 * b ** b * bh ** bh / (special.gamma(b) * special.gamma(bh))


def j_tot(x, params: ModelParams):
    x = np.asarray(x, dtype=float)
    return j_ext_zero_closed(params) * np.exp(x) - j_ext(x, params)


def convolution_factors(x: float, which: str, params: ModelParams) -> float:
    """The two pairs of one-sided kernels whose convolutions give rho_bd and J_ext."""
    if x == 0:
        raise ValueError("the factors are discontinuous at 0")
    b, bh = params.b, params.bhat
    if which == "a":
        if x < 0:
            return -2 / math.pi

        def term(n):
            n = n.astype(float)
            brace = x + 1 / (2 * n - 1) - 1 / (2 * n) + special.digamma(1 + n) - special.digamma(0.5 + n)
            return 4 * _frak_r_h(2 * n) / math.pi ** 2 * np.exp(-2 * n * x) * brace
    elif which == "d":
        if x < 0:
            return -3 * math.pi / 4

        def term(n):
            n = n.astype(float)
            return sum(np.exp(-n * x / beta) / (2 * beta) * _frak_r_d(n / beta, params) for beta in (b, bh))
    elif which == "a_tilde":
        if x < 0:
            return -3 * math.pi * math.exp(x)

        def term(n):
            n = n.astype(float)
            brace = x + 1 / (2 * (n + 1)) - 1 / (2 * n + 1) + special.digamma(1 + n) - special.digamma(0.5 + n)
            return _frak_l_h(2 * n + 1) * brace * np.exp(-(2 * n + 1) * x)
    elif which == "d_tilde":
        if x < 0:
            return 0.0

        def term(n):
            n = n.astype(float)
            return 4 / math.pi * np.sin(2 * math.pi * n * b) ** 2 * _frak_l_d(2 * n, params) * np.exp(-2 * n * x)
    else:
        raise ValueError(f"unknown factor {which!r}")
    if which == "d_tilde":
        # sin^2 averages to 1/2 over the tail
        avg = lambda n: 2 / math.pi * _frak_l_d(2 * n, params) * np.exp(-2 * n * x)
        return _sum_until_small(term, x, rate=2.0, tail_term=avg)
    rate = 1 / max(b, bh) if which == "d" else 2.0
    return _sum_until_small(term, x, n0=0 if which == "a_tilde" else 1, rate=rate)


def _factor_tails(x: float, params: ModelParams):
    """Closed-form integrals over (x, inf) of the factors d and a, and of e^{x-y} d_tilde(y)."""
    b, bh = params.b, params.bhat
    n = np.arange(1, 200_001, dtype=float)
    tail_d = sum(np.sum(np.exp(-n * x / beta) / (2 * n) * _frak_r_d(n / beta, params)) for beta in (b, bh))
    c = 1 / (2 * n - 1) - 1 / (2 * n) + special.digamma(1 + n) - special.digamma(0.5 + n)
    tail_a = np.sum(4 * _frak_r_h(2 * n) / math.pi ** 2 * np.exp(-2 * n * x)
                    * ((x + c) / (2 * n) + 1 / (4 * n * n)))
    tail_dt = np.sum(4 / math.pi * np.sin(2 * math.pi * n * b) ** 2 * _frak_l_d(2 * n, params)
                     * np.exp(-2 * n * x) / (2 * n + 1))
    return float(tail_d), float(tail_a), float(tail_dt)


def _split_convolution(fa, fd, x: float) -> float:
    # both factors blow up at most like y^{-1/2} at 0+; split at x/2, square-root substitute each half
    h = math.sqrt(x / 2)
    opts = dict(epsabs=1e-12, epsrel=1e-10, limit=200)
    left = integrate.quad(lambda s: 2 * s * fa(x - s * s) * fd(s * s) if s > 0 else 0.0, 0, h, **opts)[0]
    right = integrate.quad(lambda s: 2 * s * fa(s * s) * fd(x - s * s) if s > 0 else 0.0, 0, h, **opts)[0]
    return left + right


def rho_bd_convolution(x: float, params: ModelParams) -> float:
    """rho_bd(x) rebuilt from the one-sided factors a and d by quadrature."""
    if x <= 0:
        raise ValueError("x must be positive")
    inner = _split_convolution(lambda y: convolution_factors(y, "a", params),
                               lambda y: convolution_factors(y, "d", params), x)
    tail_d, tail_a, _ = _factor_tails(x, params)
    return inner - 2 / math.pi * tail_d - 0.75 * math.pi * tail_a


def j_ext_convolution(x: float, params: ModelParams) -> float:
    """J_ext(x) rebuilt from the tilde factors by quadrature."""
    if x <= 0:
        raise ValueError("x must be positive")
    inner = _split_convolution(lambda y: convolution_factors(y, "a_tilde", params),
                               lambda y: convolution_factors(y, "d_tilde", params), x)
    return inner - 3 * math.pi * _factor_tails(x, params)[2]


# ---------------------------------------------------------------- finite-N closed forms


def _h_potential(xi, geom: ScaledGeometry, params: ModelParams):
    """Derivative of the confining potential divided by N tau: (kappa/N) sinh(tau xi)."""
    return params.kappa / geom.N * np.sinh(geom.tau * np.asarray(xi, dtype=float))


class ClosedFormSolution:
    """Leading-order equilibrium objects for one geometry."""

    def __init__(self, geom: ScaledGeometry, params: ModelParams):
        self.geom = geom
        self.params = params
        self.chi = ChiLeadingOrder(geom, params)
        self.u_N = params.kappa * geom.tau * math.exp(geom.bbar) / (2j * math.pi * geom.N)
        ci = self.chi.upper(1j)
        self.chi11_i, self.chi12_i = complex(ci[0, 0]), complex(ci[0, 1])
        low = self.chi.lower(0.0)
        self.chi_lower_0 = low.astype(complex)
        self.dchi_lower_0 = self.chi.derivative(0.0, "lower")
        self.dchi_i = self.chi.derivative(1j, "upper", radius=0.1)
        self._rho_bd = None
        self._j_ext = None
        self._ends = None

    # boundary density and bulk part
    @property
    def rho_bd_transform(self) -> UpperResidueTransform:
        if self._rho_bd is None:
            u = self.u_N
            G = lambda z: u * self.chi.w_function(2, z, "upper")
            self._rho_bd = UpperResidueTransform(G, self.params, "inverse")
        return self._rho_bd

    def rho_bd(self, x):
        return self.rho_bd_transform(x)

    @property
    def bulk_factor(self) -> complex:
        """V_N: the coefficient of the parabolic bulk part."""
        b, bh = self.params.b, self.params.bhat
        w2 = complex(self.chi.w_function(2, 0.0, "lower"))
        return -2 * self.u_N * self.geom.tau ** 2 * w2 / (3 * math.pi ** 3 * b * bh)

    def bulk_factor_leading(self) -> float:
        g = self.geom
        w = self.chi.coeffs.w
        wt1, wt2 = w[1] / (2 * g.bbar), w[2] / (2 * g.bbar ** 2)
        t = frak_t(g.xbar, self.params)
        return vartheta(self.params) * g.bbar ** 2 * math.exp(g.bbar) * t / g.N * wt1 / (wt2 * g.b_N ** 3 * t)

    def density(self, xi):
        g = self.geom
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if np.any(xi < g.a_N - 1e-14) or np.any(xi > g.b_N + 1e-14):
            raise ValueError("density_eq is defined on the support only")
        xi = np.clip(xi, g.a_N, g.b_N)
        T = self.rho_bd
        if self._ends is None:
            self._ends = T(np.array([0.0, g.xbar]))
        ends = self._ends
        val = (T(g.tau * (g.b_N - xi)) + T(g.tau * (xi - g.a_N)) - ends[0] - ends[1]
               + 0.75 * self.bulk_factor * (xi - g.a_N) * (g.b_N - xi))
        return val

    # constraints
    def normalization_exact(self) -> complex:
        g = self.geom
        c11i, c12i = self.chi11_i, self.chi12_i
        c11m, c12m = complex(self.chi_lower_0[0, 0]), complex(self.chi_lower_0[0, 1])
        dc11m = complex(self.dchi_lower_0[0, 0])
        c11_mi, c12_mi = c11i + 1j * c12i, c12i
        eb, ea = math.exp(g.bbar), math.exp(-g.abar)
        brace = (1j * c12i * dc11m * (eb - ea) + eb * (c12i * c11m - c12m * c11i)
                 + ea * (c12_mi * c11m - c12m * c11_mi))
        return self.params.kappa * 1j / (2 * math.pi * g.N) * brace

    def constraint_j12(self) -> complex:
        g = self.geom
        return (-self.params.kappa * self.chi12_i / (4 * math.pi * g.N * g.tau)
                * (math.exp(g.bbar) - math.exp(-g.abar)))

    def constraint_j12_quadrature(self, eps: float = 0.1) -> complex:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return self._j12_lines(eps)

    def _j12_lines(self, eps: float) -> complex:
        """Both line integrals of the reduced constraint, taken numerically.

        On the lower line chi12 splits exactly into an oscillating part
        (lam - q) e^{-i lam xbar} / R_up and a rational-over-R_down remainder;
        the first goes to a Fourier quadrature, the second to a plain one.
        """
        g = self.geom
        chi = self.chi
        c = chi.c
        q = c[1] / c[2]
        eb, emb, ea, ema = (math.exp(g.bbar), math.exp(-g.bbar), math.exp(g.abar), math.exp(-g.abar))
        opts = dict(epsabs=1e-14, epsrel=1e-12, limit=2000)

        def folded(f):
            # integral over the whole line of f, as the half-line integral of f(t) + f(-t)
            re = integrate.quad(lambda t: (f(t) + f(-t)).real, 0, np.inf, **opts)[0]
            im = integrate.quad(lambda t: (f(t) + f(-t)).imag, 0, np.inf, **opts)[0]
            return complex(re, im)

        def upper_line(t):
            mu = t + 1j * eps
            return complex(chi.upper(mu)[0, 1]) * (eb / (mu - 1j) - emb / (mu + 1j))

        weight = lambda mu: ea / (mu - 1j) - ema / (mu + 1j)

        def lower_smooth(t):
            mu = t - 1j * eps
            rest = ((q * c[1] - c[0]) / mu ** 2 + q * c[0] / mu ** 3) / complex(wiener_hopf_down(mu, self.params))
            return rest * weight(mu)

        def lower_osc(t):
            mu = t - 1j * eps
            return (mu - q) / complex(wiener_hopf_up(mu, self.params)) * weight(mu)

        fopts = dict(epsabs=1e-14, limlst=400, limit=2000)
        x = g.xbar
        even = lambda t: lower_osc(t) + lower_osc(-t)
        odd = lambda t: lower_osc(t) - lower_osc(-t)
        cos_part = complex(integrate.quad(lambda t: even(t).real, 0, np.inf, weight="cos", wvar=x, **fopts)[0],
                           integrate.quad(lambda t: even(t).imag, 0, np.inf, weight="cos", wvar=x, **fopts)[0])
        sin_part = complex(integrate.quad(lambda t: odd(t).real, 0, np.inf, weight="sin", wvar=x, **fopts)[0],
                           integrate.quad(lambda t: odd(t).imag, 0, np.inf, weight="sin", wvar=x, **fopts)[0])
        osc = math.exp(-eps * x) * (cos_part - 1j * sin_part)

        upper = folded(upper_line) / (2j * math.pi)
        lower = (folded(lower_smooth) + osc) / (2j * math.pi)
        pre = self.params.kappa / (4 * math.pi * g.N * g.tau)
        return -pre * upper + pre * lower

    # effective potential off the support
    @property
    def j_ext_transform(self) -> UpperResidueTransform:
        if self._j_ext is None:
            pre = self.params.kappa * math.exp(self.geom.bbar) / (2 * self.geom.N)
            G = lambda z: pre * self.chi.w_function(1, z, "upper")
            self._j_ext = UpperResidueTransform(G, self.params, "direct")
        return self._j_ext

    def j_ext_N(self, x):
        return self.j_ext_transform(x)

    def potential_slope(self, xi):
        """Derivative of the effective potential at points off the support."""
        g = self.geom
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if np.any((xi >= g.a_N) & (xi <= g.b_N)):
            raise RegionError("the slope formula holds off [a_N, b_N] only")
        left = xi < g.a_N
        mirrored = np.where(left, xi, g.a_N + g.b_N - xi)
        val = g.tau * (_h_potential(mirrored, g, self.params) - self.j_ext_N(g.tau * (g.a_N - mirrored)).real)
        return np.where(left, val, -val)

    # energy pieces
    def v_integral(self) -> complex:
        g = self.geom
        c11, c12 = self.chi11_i, self.chi12_i
        d11, d12 = complex(self.dchi_i[0, 0]), complex(self.dchi_i[0, 1])
        return (self.params.kappa ** 2 * math.exp(2 * g.bbar) / (8 * math.pi * g.N ** 2)
                * (c12 * c12 + 2 * (c12 * d11 - c11 * d12)))

    def v_integral_leading(self) -> float:
        g = self.geom
        w = self.chi.coeffs.w
        rup = complex(wiener_hopf_up(1j, self.params))
        val = -self.params.kappa ** 2 * math.exp(2 * g.bbar) / (8 * math.pi * g.N ** 2 * rup ** 2) * (1 - 2 * w[1] / w[2])
        return val

    def w_boundary_integral(self) -> complex:
        g = self.geom
        c11, c12 = self.chi11_i, self.chi12_i
        c21m, c22m = complex(self.chi_lower_0[1, 0]), complex(self.chi_lower_0[1, 1])
        brace = 1 + math.exp(-g.xbar) + c22m * (2 * c11 + 1j * c12) - 2 * c21m * c12
        return -self.params.kappa * math.exp(g.bbar) / (4 * g.N) * brace

    def cosh_term(self) -> float:
        return self.params.kappa * math.cosh(self.geom.bbar) / (2 * self.geom.N)


@lru_cache(maxsize=32)
def closed_form_solution(geom: ScaledGeometry, params: ModelParams) -> ClosedFormSolution:
    return ClosedFormSolution(geom, params)


def _real(v, what: str, tol: float = 1e-10):
    v = np.asarray(v)
    scale = np.maximum(np.abs(v), 1e-300)
    if np.any(np.abs(np.imag(v)) > tol * np.maximum(scale, 1.0)):
        raise ArithmeticError(f"{what} has a non-negligible imaginary part")
    out = np.real(v)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------- public evaluators


def chi_leading(lam: complex, geom: ScaledGeometry, params: ModelParams, region: str | None = None):
    """2x2 leading-order chi at lam; raises RegionError between the lenses."""
    return closed_form_solution(geom, params).chi.entries(lam, region)


def density_eq(xi, geom: ScaledGeometry, params: ModelParams):
    sol = closed_form_solution(geom, params)
    return _real(sol.density(xi), "density", tol=1e-8).squeeze()[()]


def density_integral(geom: ScaledGeometry, params: ModelParams, edge_nodes: int = 12) -> float:
    """Quadrature of density_eq over the support.

    The thin edge layers (scaled distance below the line-integral switch) use
    Gauss-Legendre in s with xi - edge = s^2; the rest goes to adaptive quad.
    """
    sol = closed_form_solution(geom, params)
    f = lambda s: float(np.real(sol.density(np.array([s]))[0]))
    delta = LINE_SWITCH / geom.tau
    w = min(0.5 * geom.b_N, 20.0 / geom.tau)
    pts = [geom.a_N + delta, geom.a_N + w, 0.5 * (geom.a_N + geom.b_N), geom.b_N - w, geom.b_N - delta]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
    s, wt = np.polynomial.legendre.leggauss(edge_nodes)
    s = 0.5 * math.sqrt(delta) * (s + 1)
    wt = 0.5 * math.sqrt(delta) * wt
    left = np.real(sol.density(geom.a_N + s * s))
    right = np.real(sol.density(geom.b_N - s * s))
    total += float(np.sum(wt * 2 * s * (left + right)))
    return total


def normalization_integral(geom: ScaledGeometry, params: ModelParams) -> float:
    """Leading large-N form of the total mass of the closed-form density."""
    if not geom.symmetric:
        raise ValueError("the leading form assumes a symmetric support")
    b = geom.bbar
    return vartheta(params) / geom.N * b * b * math.exp(b) * frak_t(2 * b, params)


def normalization_exact(geom: ScaledGeometry, params: ModelParams) -> float:
    """Total mass from the chi-bracket expression (no further expansion)."""
    return float(_real(closed_form_solution(geom, params).normalization_exact(), "normalization", 1e-8))


def constraint_j12(geom: ScaledGeometry, params: ModelParams) -> float:
    return float(_real(closed_form_solution(geom, params).constraint_j12(), "J12", 1e-8))


def constraint_j12_quadrature(geom: ScaledGeometry, params: ModelParams) -> float:
    return float(np.real(closed_form_solution(geom, params).constraint_j12_quadrature()))


def effective_potential_closed(xi, geom: ScaledGeometry, params: ModelParams):
    """Slope of the effective potential off the support (it vanishes on the support)."""
    out = closed_form_solution(geom, params).potential_slope(xi)
    return out[0] if np.ndim(xi) == 0 else out


def energy_integrals(geom: ScaledGeometry, params: ModelParams) -> tuple[float, float, float]:
    """(V-integral, w-boundary integral, cosh edge term) in the energy identity."""
    sol = closed_form_solution(geom, params)
    return (float(_real(sol.v_integral(), "V integral", 1e-8)),
            float(_real(sol.w_boundary_integral(), "w integral", 1e-8)),
            sol.cosh_term())


def energy_assembled(geom: ScaledGeometry, params: ModelParams) -> float:
    return float(sum(energy_integrals(geom, params)))


def energy_asymptotic(N: float, params: ModelParams, geom: ScaledGeometry | None = None) -> float:
    if N < 1e3:
        raise ValueError("the asymptotic energy needs N >= 1000")
    geom = geom or solve_endpoint(N, params)
    b = geom.bbar
    coeffs = laurent_coeffs(2 * b, params)
    wt1, wt2 = coeffs.w_tilde
    t = frak_t(2 * b, params)
    bb = params.b * params.bhat
    lead = 3 * math.pi ** 4 * bb * wt1 / (4 * b ** 3 * wt2 * t)
    second = 9 * math.pi ** 4 * bb / (8 * b ** 4 * t * t) * (1 - 2 * wt1 / (b * wt2))
    return lead + second


def theorem_exponent(N: float, params: ModelParams) -> float:
    """3 pi^4 b bhat N^2 / (4 ln^3 N)."""
    return 3 * math.pi ** 4 * params.b * params.bhat * N * N / (4 * math.log(N) ** 3)


def closed_form_record(N: float, params: ModelParams) -> dict:
    """Summary numbers for one N."""
    geom = solve_endpoint(N, params)
    e = energy_asymptotic(N, params, geom)
    return {
        "N": N, "b_N": geom.b_N, "bbar": geom.bbar, "theta": vartheta(params),
        "t_value": frak_t(geom.xbar, params), "energy_leading": e,
        "theorem_exponent": theorem_exponent(N, params), "error_budget": error_budget(geom.xbar),
    }
