"""Form-factor summands of the field-exponent two-point series and their bounds.

The N-th summand is an N-fold rapidity integral of the pair factors
e^{w(beta_a - beta_b)}, the one-body weights e^{-kappa cosh beta} and |K_N|^2.
Small N are integrated by tensor Gauss-Legendre; N up to 6 by Monte Carlo
with an exact sampler for the one-body weight.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .specfun import ModelParams, fmin2, smooth_potential_table

K_CAP = 12
TIE_SHIFT = 1e-10


@dataclass(frozen=True)
class MonteCarloSpec:
    samples: int = 1_000_000
    seed: int = 42
    proposal_scale: float | None = None   # logistic scale, chosen automatically when None
    chunk: int = 1 << 18

    def __post_init__(self):
        if self.samples < 1 or self.chunk < 1:
            raise ValueError("samples and chunk must be positive")


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    method: str
    samples: int = 0


@dataclass(frozen=True)
class BoundReport:
    N: int
    u_n_estimate: float
    u_n_stderr: float
    znp_values: tuple            # bounding integrals for p = 0..N
    bound_chain: float           # chain as a bound on the N-th summand
    theorem_envelope: float      # nan when N < 3
    holds: bool

    @property
    def z_n_estimate(self) -> float:
        return self.u_n_estimate * math.factorial(self.N) * (2 * math.pi) ** self.N


# ---------------------------------------------------------------- normalisation and K


def normalization(params: ModelParams) -> complex:
    """Prefactor -i / sqrt(F(i pi) sin(2 pi b)) of the K-functions."""
    f_ipi = fmin2(1j * math.pi, params).real
    return -1j / math.sqrt(f_ipi * math.sin(2 * math.pi * params.b))


_NORM_CACHE: dict = {}


def _norm(params: ModelParams) -> complex:
    key = params.b
    if key not in _NORM_CACHE:
        _NORM_CACHE[key] = normalization(params)
    return _NORM_CACHE[key]


def _phase_angle(params: ModelParams) -> float:
    return 2 * math.pi * params.b * params.gamma_charge / params.g


def _as_batch(betas) -> np.ndarray:
    arr = np.asarray(betas, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("rapidities must be a vector or a (batch, N) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("rapidities must be finite")
    return arr


def _pair_differences(arr: np.ndarray):
    n = arr.shape[1]
    pairs = list(itertools.combinations(range(n), 2))
    diffs = [arr[:, a] - arr[:, c] for a, c in pairs]
    diffs = [np.where(d == 0.0, TIE_SHIFT, d) for d in diffs]
    return pairs, diffs


def k_exp(betas, params: ModelParams, cap: int = K_CAP):
    """K-function of the field exponent in the factorised sinh/cosh form.

    Accepts a single rapidity vector or a batch of shape (M, N).
    """
    arr = _as_batch(betas)
    m, n = arr.shape
    if n > cap:
        raise ValueError(f"N={n} exceeds the enumeration cap {cap}")
    if n == 0:
        out = np.ones(m, dtype=complex)
        return out[0] if np.ndim(betas) <= 1 else out
    pib = math.pi * params.b
    pairs, diffs = _pair_differences(arr)
    # factor for each pair and each l_ab in {-1, 0, 1}
    table = []
    for d in diffs:
        sh = np.sinh(d)
        row = {}
        for lab in (-1, 0, 1):
            row[lab] = np.sinh(d / 2 - 1j * pib * lab) * np.cosh(d / 2 + 1j * pib * lab) / sh
        table.append(row)
    theta = _phase_angle(params)
    total = np.zeros(m, dtype=complex)
    for ells in itertools.product((0, 1), repeat=n):
        term = np.full(m, (-1.0) ** sum(ells) + 0j)
        for (a, c), row in zip(pairs, table):
            term = term * row[ells[a] - ells[c]]
        total += term * np.exp(1j * theta * sum((-1) ** la for la in ells))
    out = _norm(params) ** n * 2.0 ** (n * (n - 1) / 2) * total
    return out[0] if np.ndim(betas) <= 1 else out


def k_exp_bracket_form(betas, params: ModelParams):
    """Same K-function from the 1 - i l_ab sin(2 pi b)/sinh(beta_ab) bracket form."""
    arr = np.asarray(betas, dtype=float)
    n = arr.size
    s = math.sin(2 * math.pi * params.b)
    total = 0j
    for ells in itertools.product((0, 1), repeat=n):
        term = (-1.0) ** sum(ells) + 0j
        for a in range(n):
            for c in range(a + 1, n):
                lab = ells[a] - ells[c]
                term *= 1 - 1j * lab * s / math.sinh(arr[a] - arr[c])
            term *= np.exp(2j * math.pi * params.b * params.gamma_charge * (-1) ** ells[a] / params.g)
        total += term
    return _norm(params) ** n * total


# ---------------------------------------------------------------- p-functions


def _even_indicator(n: int) -> float:
    return 1.0 if n % 2 == 0 else 0.0


def p_current(betas, ells, ell_index: int, sigma: int, params: ModelParams) -> complex:
    """p-function of the conserved current of odd index ``ell_index`` and chirality ``sigma``."""
    if ell_index % 2 != 1 and ell_index % 2 != -1:
        raise ValueError("current index must be odd")
    if sigma not in (1, -1):
        raise ValueError("sigma must be +1 or -1")
    beta = np.asarray(betas, dtype=float)
    ells = np.asarray(ells, dtype=int)
    n = beta.size
    if n % 2:
        return 0j
    signs = (-1.0) ** ells
    first = np.sum(np.exp(sigma * beta))
    second = np.sum(np.exp(ell_index * (beta - 1j * math.pi * params.b * signs)))
    return sigma * np.exp(-0.5j * math.pi * ell_index) * first * second * _even_indicator(n)


def p_stress(betas, ells, tau: int, sigma: int, params: ModelParams) -> complex:
    """p-function of the stress-tensor component labelled (tau, sigma)."""
    if tau not in (1, -1) or sigma not in (1, -1):
        raise ValueError("tau and sigma must be +1 or -1")
    beta = np.asarray(betas, dtype=float)
    ells = np.asarray(ells, dtype=int)
    n = beta.size
    if n % 2:
        return 0j
    signs = (-1.0) ** ells
    first = np.sum(np.exp(tau * beta))
    shift = 0.5j * math.pi * (1 + 2 * params.b * signs)
    second = np.sum(np.exp(sigma * (beta - shift)))
    return tau * first * second * _even_indicator(n)


# ---------------------------------------------------------------- summand density


def _pair_weight(arr: np.ndarray, params: ModelParams) -> np.ndarray:
    table = smooth_potential_table(params)
    out = np.ones(arr.shape[0])
    for a, c in itertools.combinations(range(arr.shape[1]), 2):
        out *= table.exp_w(arr[:, a] - arr[:, c])
    return out


def summand_density(betas, params: ModelParams):
    """Integrand of the N-th summand (without the 1/(N! (2 pi)^N) prefactor)."""
    arr = _as_batch(betas)
    one_body = np.exp(-params.kappa * np.cosh(arr)).prod(axis=1)
    val = _pair_weight(arr, params) * one_body * np.abs(k_exp(arr, params)) ** 2
    return val[0] if np.ndim(betas) <= 1 else val


def _reduced_weight(arr: np.ndarray, params: ModelParams) -> np.ndarray:
    """Summand integrand divided by the one-body weights."""
    return _pair_weight(arr, params) * np.abs(k_exp(arr, params)) ** 2


# ---------------------------------------------------------------- samplers


class CoshSampler:
    """Exact sampler for the density proportional to exp(-kappa cosh beta).

    Rejection from a logistic envelope; the envelope constant is the maximum
    of the ratio on a fine grid, enlarged by a safety factor.
    """

    def __init__(self, kappa: float, scale: float | None = None):
        self.kappa = kappa
        grid = np.linspace(-30, 30, 600_001)
        if scale is None:
            best = None
            for s in np.linspace(0.2, 2.0, 91):
                m = self._max_ratio(grid, s)
                if best is None or m < best[0]:
                    best = (m, s)
            scale = best[1]
        self.scale = float(scale)
        self.bound = self._max_ratio(grid, self.scale) * 1.0001
        self.normalizer = 2 * special.k0(kappa)

    def _log_ratio(self, x, s):
        z = np.abs(x) / s
        log_logistic = -z - 2 * np.log1p(np.exp(-z)) - math.log(s)
        return -self.kappa * np.cosh(x) - log_logistic

    def _max_ratio(self, grid, s):
        return float(np.exp(np.max(self._log_ratio(grid, s))))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            draw = int(need * self.bound * 1.1) + 16
            x = rng.logistic(0.0, self.scale, draw)
            u = rng.random(draw)
            keep = x[np.log(u) + math.log(self.bound) <= self._log_ratio(x, self.scale)]
            take = min(keep.size, need)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out


def _chunks(mc: MonteCarloSpec):
    n_chunks = -(-mc.samples // mc.chunk)
    seqs = np.random.SeedSequence(mc.seed).spawn(n_chunks)
    for k, seq in enumerate(seqs):
        size = min(mc.chunk, mc.samples - k * mc.chunk)
        yield np.random.default_rng(seq), size


def _mc_mean(weight_fn, N: int, params: ModelParams, mc: MonteCarloSpec):
    sampler = CoshSampler(params.kappa, mc.proposal_scale)
    total = 0.0
    total_sq = 0.0
    for rng, size in _chunks(mc):
        arr = sampler.sample(rng, size * N).reshape(size, N)
        vals = weight_fn(arr)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
    n = mc.samples
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n), sampler.normalizer ** N


def _tensor_mean(weight_fn, N: int, params: ModelParams, nodes: int):
    """Integral of e^{-kappa sum cosh} times weight over R^N by tensor Gauss-Legendre."""
    half = math.acosh(40.0 / params.kappa) if params.kappa < 40 else 1.0
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = half * x, half * w
    grids = np.meshgrid(*([x] * N), indexing="ij")
    weights = np.ones_like(grids[0])
    for g in np.meshgrid(*([w] * N), indexing="ij"):
        weights = weights * g
    arr = np.stack([g.ravel() for g in grids], axis=1)
    one_body = np.exp(-params.kappa * np.cosh(arr)).prod(axis=1)
    return float(np.sum(weights.ravel() * one_body * weight_fn(arr)))


def _integrate(weight_fn, N: int, params: ModelParams, method: str,
               mc: MonteCarloSpec | None, nodes: int) -> Estimate:
    if method == "tensor-quadrature":
        if N > 2:
            raise ValueError("tensor quadrature is limited to N <= 2")
        fine = _tensor_mean(weight_fn, N, params, nodes)
        coarse = _tensor_mean(weight_fn, N, params, (3 * nodes) // 4)
        return Estimate(fine, abs(fine - coarse), method)
    if method == "monte-carlo":
        if N > 6:
            raise ValueError("Monte Carlo is limited to N <= 6")
        mc = mc or MonteCarloSpec()
        mean, err, norm = _mc_mean(weight_fn, N, params, mc)
        return Estimate(mean * norm, err * norm, method, mc.samples)
    raise ValueError(f"unknown method {method!r}")


def u_n(N: int, params: ModelParams, method: str = "tensor-quadrature",
        mc: MonteCarloSpec | None = None, nodes: int = 120) -> Estimate:
    """N-th summand of the two-point series with an error estimate."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    if N == 0:
        return Estimate(1.0, 0.0, "exact")
    scale = 1.0 / (math.factorial(N) * (2 * math.pi) ** N)
    est = _integrate(lambda arr: _reduced_weight(arr, params), N, params, method, mc, nodes)
    return Estimate(est.value * scale, est.stderr * scale, est.method, est.samples)


def u_one_bessel(params: ModelParams) -> float:
    """First summand reduced to a modified Bessel function."""
    theta = _phase_angle(params)
    return 2 / math.pi * abs(_norm(params)) ** 2 * math.sin(theta) ** 2 * 2 * special.k0(params.kappa)


# ---------------------------------------------------------------- bounding integrals


def _cross_weight(d: np.ndarray, params: ModelParams, table) -> np.ndarray:
    """e^{w(d)} times prod_eps sinh(d - 2 i pi eps b)/sinh(d), finite at d = 0."""
    s2 = math.sin(2 * math.pi * params.b) ** 2
    sc = np.where(np.abs(d) < 1e-8, 1.0, np.sinh(d) / np.where(d == 0, 1.0, d))
    return np.exp(table.smooth(d)) * (d * d + s2 / sc ** 2)


def znp_integrand(arr: np.ndarray, p_split: int, params: ModelParams) -> np.ndarray:
    """Pair and cross factors of the bounding integral (one-body weights excluded)."""
    arr = _as_batch(arr)
    table = smooth_potential_table(params)
    n = arr.shape[1]
    nu, lam = arr[:, :p_split], arr[:, p_split:]
    out = np.ones(arr.shape[0])
    for group in (nu, lam):
        for a, c in itertools.combinations(range(group.shape[1]), 2):
            out *= table.exp_w(group[:, a] - group[:, c])
    for a in range(nu.shape[1]):
        for c in range(lam.shape[1]):
            out *= _cross_weight(nu[:, a] - lam[:, c], params, table)
    del n
    return out


def znp_bound(N: int, p_split: int, params: ModelParams, method: str = "tensor-quadrature",
              mc: MonteCarloSpec | None = None, nodes: int = 120):
    """Bounding integral for a split p and the full bound chain built from it.

    Returns (estimate of the bounding integral, chain value for this split).
    The chain bounds N! (2 pi)^N times the N-th summand.
    """
    if N <= 1:
        raise ValueError("the bounding integral needs N >= 2")
    if not 0 <= p_split <= N:
        raise ValueError("split must lie in [0, N]")
    est = _integrate(lambda arr: znp_integrand(arr, p_split, params), N, params, method, mc, nodes)
    pref = math.log(N) ** (-N)
    est = Estimate(est.value * pref, est.stderr * pref, est.method, est.samples)
    return est, chain_prefactor(N, params) * est.value


def chain_prefactor(N: int, params: ModelParams) -> float:
    amp = abs(_norm(params)) * math.exp(2 * math.pi * params.b * abs(params.gamma_charge) / params.g)
    return amp ** (2 * N) * (8 * math.log(N)) ** N


def theorem_envelope(N: int, params: ModelParams) -> float:
    if N < 3:
        raise ValueError("the envelope is stated for N >= 3")
    return math.exp(-3 * math.pi ** 4 * params.b * params.bhat * N * N / (4 * math.log(N) ** 3))


def bound_report(N: int, params: ModelParams, method: str | None = None,
                 mc: MonteCarloSpec | None = None, nodes: int = 120) -> BoundReport:
    """Compare the N-th summand with the bound chain (both on the summand scale)."""
    method = method or ("tensor-quadrature" if N <= 2 else "monte-carlo")
    u = u_n(N, params, method, mc, nodes)
    half = N // 2
    values = []
    for p_split in range(half + 1):
        est, _ = znp_bound(N, p_split, params, method, mc, nodes)
        values.append(est.value)
    # relabelling nu <-> lambda maps the split p to N - p
    values = values + values[: N + 1 - len(values)][::-1]
    values = tuple(values[: N + 1])
    scale = math.factorial(N) * (2 * math.pi) ** N
    chain = chain_prefactor(N, params) * max(values) / scale
    envelope = theorem_envelope(N, params) if N >= 3 else float("nan")
    holds = u.value - 3 * u.stderr <= chain
    return BoundReport(N, u.value, u.stderr, values, chain, envelope, bool(holds))
