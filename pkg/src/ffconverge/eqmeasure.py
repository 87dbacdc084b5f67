"""Direct minimisation of the rescaled energy over measures on a uniform grid.

A measure is stored as the masses of the cells of a uniform grid, each mass
spread uniformly over its cell. Pair energies then need the average of the
kernel over two cells; the logarithmic part of every kernel is averaged in
closed form and the smooth remainder by Gauss-Legendre against the triangular
weight of the cell difference. An atom (a genuine point mass) is flagged and
has infinite self-energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .specfun import ModelParams, rfun, smooth_potential_table, v_plus_two_log

KERNEL_KINDS = ("w", "plus", "minus", "tot")
# logarithmic coefficient of each kernel at the origin
_LOG_COEFF = {"w": 2.0, "plus": 1.0, "minus": 1.0, "tot": 0.0}


class ConvergenceError(RuntimeError):
    """Raised when the minimiser misses its KKT tolerance within the iteration cap."""


@dataclass(frozen=True)
class GridSpec:
    lo: float = -2.25
    hi: float = 2.25
    cells: int = 2000

    def __post_init__(self):
        if not self.hi > self.lo or self.cells < 2:
            raise ValueError("need hi > lo and at least two cells")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.cells

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + (np.arange(self.cells) + 0.5) * self.h

    @property
    def edges(self) -> np.ndarray:
        return self.lo + np.arange(self.cells + 1) * self.h


@dataclass
class GridMeasure:
    """Cell masses on a uniform grid; ``atomic`` marks true point masses."""

    grid: GridSpec
    weights: np.ndarray
    atomic: bool = False
    signed: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.grid.cells,):
            raise ValueError("one weight per cell is required")
        if not self.signed:
            if np.any(self.weights < -1e-15):
                raise ValueError("weights must be nonnegative")
            if abs(self.weights.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to one")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def density(self) -> np.ndarray:
        return self.weights / self.grid.h

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def from_density(cls, grid: GridSpec, rho, normalize: bool = True) -> "GridMeasure":
        """Cell masses from a density sampled at the cell centres."""
        w = np.clip(np.asarray(rho(grid.nodes), dtype=float), 0.0, None) * grid.h
        if normalize:
            w = w / w.sum()
        return cls(grid, w)

    @classmethod
    def uniform(cls, grid: GridSpec, a: float, b: float) -> "GridMeasure":
        """Uniform probability on [a, b] (cells cut by the ends get partial mass)."""
        e = grid.edges
        w = np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None)
        return cls(grid, w / w.sum())

    @classmethod
    def point_mass(cls, grid: GridSpec, x: float) -> "GridMeasure":
        w = np.zeros(grid.cells)
        w[int(np.clip(np.searchsorted(grid.edges, x) - 1, 0, grid.cells - 1))] = 1.0
        return cls(grid, w, atomic=True)

    @classmethod
    def signed_measure(cls, grid: GridSpec, weights) -> "GridMeasure":
        return cls(grid, np.asarray(weights, dtype=float), signed=True)


@dataclass
class EquilibriumSolution:
    a_N: float
    b_N: float
    nodes: np.ndarray
    density: np.ndarray
    effective_potential: np.ndarray
    energy: float
    lagrange_constant: float
    kkt_residual: float
    iterations: int
    measure: GridMeasure
    energy_history: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "a_N": self.a_N, "b_N": self.b_N, "energy": self.energy,
            "lagrange_constant": self.lagrange_constant, "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }


# ---------------------------------------------------------------- kernels


def _smooth_part(u, kind: str, params: ModelParams):
    """Kernel minus its logarithmic part, as a function of the scaled distance u."""
    alpha = 2 * math.pi * params.b
    u = np.abs(np.asarray(u, dtype=float))
    if kind == "minus":
        return -0.5 * v_plus_two_log(u, alpha)
    s = smooth_potential_table(params).smooth(u)
    if kind == "w":
        return s
    if kind == "plus":
        return s + 0.5 * v_plus_two_log(u, alpha)
    if kind == "tot":
        return s + v_plus_two_log(u, alpha)
    raise ValueError(f"unknown kernel {kind!r}")


def kernel(u, kind: str, params: ModelParams):
    """Point values of w, w_plus, w_minus or w_tot at scaled distance u."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        return _smooth_part(u, kind, params) + _LOG_COEFF[kind] * np.log(np.abs(u))


def _log_cell_average(d, h: float):
    """Average of log|x - y| over two cells of width h whose centres are d apart."""
    def F2(t):
        t = np.abs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(t > 0, t * t * np.log(t) / 2, 0.0)
        return out - 0.75 * t * t
    d = np.asarray(d, dtype=float)
    return (F2(d + h) - 2 * F2(d) + F2(d - h)) / (h * h)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def _smooth_cell_average(d, h: float, tau: float, kind: str, params: ModelParams):
    """Average of the smooth part over two cells: triangle weight on [d - h, d + h]."""
    d = np.asarray(d, dtype=float)
    total = np.zeros_like(d)
    for side in (-1.0, 1.0):
        # r in [0, h] on each side, triangle weight (1 - r/h)/h
        r = 0.5 * h * (_GL_X + 1)
        wr = 0.5 * h * _GL_W * (1 - r / h) / h
        for rk, wk in zip(r, wr):
            total += wk * _smooth_part(tau * (d + side * rk), kind, params)
    return total


@lru_cache(maxsize=32)
def _toeplitz_column(grid: GridSpec, N: float, kind: str, params: ModelParams) -> np.ndarray:
    tau = math.log(N)
    h = grid.h
    d = np.arange(grid.cells) * h
    col = _smooth_cell_average(d, h, tau, kind, params)
    c = _LOG_COEFF[kind]
    if c:
        col = col + c * (math.log(tau) + _log_cell_average(d, h))
    return col


def kernel_matrix(grid: GridSpec, N: float, kind: str, params: ModelParams) -> np.ndarray:
    """Cell-averaged kernel matrix (symmetric Toeplitz)."""
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel {kind!r}")
    return linalg.toeplitz(_toeplitz_column(grid, N, kind, params))


def potential_cell_average(grid: GridSpec, N: float, params: ModelParams) -> np.ndarray:
    """Average of kappa cosh(tau x) over each cell."""
    tau = math.log(N)
    e = grid.edges
    return params.kappa * (np.sinh(tau * e[1:]) - np.sinh(tau * e[:-1])) / (tau * grid.h)


# ---------------------------------------------------------------- functionals


def _check_pair(mu: GridMeasure, nu: GridMeasure):
    if mu.grid != nu.grid:
        raise ValueError("both measures must live on the same grid")


def energy_nt(mu: GridMeasure, nu: GridMeasure, N: float, t: float, params: ModelParams) -> float:
    """Two-measure energy with mixing parameter t in [0, 1]."""
    _check_pair(mu, nu)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if (mu.atomic and t < 1) or (nu.atomic and t > 0):
        return math.inf
    g = mu.grid
    V = potential_cell_average(g, N, params) / N
    Kw = kernel_matrix(g, N, "w", params)
    Kt = kernel_matrix(g, N, "tot", params)
    m, n = mu.weights, nu.weights
    val = t * V @ n + (1 - t) * V @ m
    if t:
        val -= 0.5 * t * t * n @ Kw @ n
    if t < 1:
        val -= 0.5 * (1 - t) ** 2 * m @ Kw @ m
    if 0 < t < 1:
        val -= t * (1 - t) * m @ Kt @ n
    return float(val)


def energy_plus(sigma: GridMeasure, N: float, params: ModelParams) -> float:
    if sigma.atomic:
        return math.inf
    g = sigma.grid
    V = potential_cell_average(g, N, params) / N
    K = kernel_matrix(g, N, "plus", params)
    m = sigma.weights
    return float(V @ m - 0.5 * m @ K @ m)


def energy_minus(weights, grid: GridSpec, N: float, params: ModelParams) -> float:
    """Energy of a signed measure under the w_minus kernel."""
    m = np.asarray(weights, dtype=float)
    return float(-0.5 * m @ kernel_matrix(grid, N, "minus", params) @ m)


def _zero_mass(m, what: str):
    if abs(float(np.sum(m))) > 1e-12 * max(1.0, float(np.sum(np.abs(m)))):
        raise ValueError(f"{what} must have zero total mass")


def quadratic_form_d(mu, nu, N: float, t: float, params: ModelParams, grid: GridSpec) -> float:
    """Convexity form D_{N,t} of two zero-mass signed cell measures (double sum)."""
    mu, nu = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
    _zero_mass(mu, "mu")
    _zero_mass(nu, "nu")
    Kw = kernel_matrix(grid, N, "w", params)
    Kt = kernel_matrix(grid, N, "tot", params)
    return float(-t * (1 - t) * mu @ Kt @ nu - 0.5 * (t * t * nu @ Kw @ nu + (1 - t) ** 2 * mu @ Kw @ mu))


def quadratic_form_d_fourier(mu, nu, N: float, t: float, params: ModelParams, grid: GridSpec,
                             oversample: int = 4, shells: int = 3) -> float:
    """Same form from the spectral side: sum over +/- of (1/2) int R_pm/lam |F[sigma_pm](tau lam)|^2.

    With cell-uniform masses on a grid of step h the squared transform is
    sinc^2(tau h lam / 2) times a trigonometric polynomial of period
    P = 2 pi / (tau h). The integral is folded onto one period; the folded
    weight is summed exactly over a few shifts and the remaining shifts, where
    R_pm has reached its limit 1/2, through the Hurwitz zeta function.
    """
    mu, nu = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
    _zero_mass(mu, "mu")
    _zero_mass(nu, "nu")
    tau, h = math.log(N), grid.h
    P = 2 * math.pi / (tau * h)
    M = oversample * grid.cells
    lam = (np.arange(M) + 0.5) * P / M
    total = 0.0
    for which, sig in (("plus", t * nu + (1 - t) * mu), ("minus", t * nu - (1 - t) * mu)):
        if not np.any(sig):
            continue
        # fft frequency k corresponds to theta = 2 pi k / M = tau h lam at lam = k P / M;
        # shift by half a sample so that lam never hits a multiple of P
        phase = np.exp(-1j * np.pi * np.arange(sig.size) / M)
        Q = np.abs(np.fft.fft(sig * phase, M)) ** 2
        folded = np.zeros(M)
        for m in range(-shells, shells + 1):
            y = lam + m * P
            z = tau * h * y / 2
            folded += (np.sin(z) / z) ** 2 * np.real(rfun(y, params, which)) / y
        s2 = np.sin(tau * h * lam / 2) ** 2 * (2 / (tau * h)) ** 2
        r_inf = 0.5
        tail = (special.zeta(3, lam / P + shells + 1) + special.zeta(3, shells + 1 - lam / P)) / P ** 3
        folded += s2 * r_inf * tail
        total += 0.5 * np.sum(Q * folded) * P / M
    return float(total)


def effective_potential(phi: GridMeasure, xi, N: float, params: ModelParams):
    """V_N(xi)/N minus the w_plus potential of the cell measure phi, at arbitrary points."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    tau = math.log(N)
    out = params.kappa * np.cosh(tau * xi) / N
    m = phi.weights
    nz = np.nonzero(m)[0]
    if nz.size == 0:
        return out if out.size > 1 else float(out[0])
    g = phi.grid
    h = g.h
    x = g.nodes[nz]
    gx, gw = np.polynomial.legendre.leggauss(6)

    def F1(t):
        t = np.abs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, t * np.log(t), 0.0) - t

    for k, z in enumerate(xi):
        d = z - x
        # average of log|z - eta| over each cell [x - h/2, x + h/2]
        lo, hi = d - h / 2, d + h / 2
        logavg = (np.sign(hi) * F1(hi) - np.sign(lo) * F1(lo)) / h
        smooth = sum(wk / 2 * _smooth_part(tau * (d + h / 2 * xk), "plus", params) for xk, wk in zip(gx, gw))
        out[k] -= np.sum(m[nz] * (smooth + math.log(tau) + logavg))
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------- minimisation


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _kkt(grad: np.ndarray, m: np.ndarray, support_tol: float):
    on = m > support_tol * max(m.max(), 1e-300)
    C = float(np.average(grad[on], weights=m[on]))
    inside = float(np.max(np.abs(grad[on] - C)))
    outside = float(max(0.0, -(grad[~on] - C).min())) if np.any(~on) else 0.0
    return C, max(inside, outside)


def _active_set_polish(K, c, m, support_tol: float, max_rounds: int = 60):
    """Solve the KKT system on a guessed support and repair it until consistent."""
    n = m.size
    S = m > support_tol * m.max()
    for _ in range(max_rounds):
        idx = np.nonzero(S)[0]
        A = np.zeros((idx.size + 1, idx.size + 1))
        A[:-1, :-1] = K[np.ix_(idx, idx)]
        A[:-1, -1] = 1.0
        A[-1, :-1] = 1.0
        rhs = np.concatenate([c[idx], [1.0]])
        sol = linalg.solve(A, rhs, assume_a="sym")
        ms, C = sol[:-1], sol[-1]
        # grad = c - K m equals C on the support
        if np.any(ms < 0):
            S[idx[ms < 0]] = False
            continue
        m_new = np.zeros(n)
        m_new[idx] = ms
        grad = c - K @ m_new
        viol = (~S) & (grad < C - 1e-12 * max(1.0, abs(C)))
        if np.any(viol):
            S[np.nonzero(viol)[0]] = True
            continue
        return m_new, C
    raise ConvergenceError("active-set polish did not settle")


def minimize_energy_plus(N: float, params: ModelParams, grid: GridSpec = GridSpec(),
                         init: GridMeasure | None = None, tol_kkt: float = 1e-6,
                         max_iter: int = 100_000, support_tol: float = 1e-10,
                         polish: bool = True) -> EquilibriumSolution:
    """Minimiser of the w_plus energy over cell measures by projected gradient plus KKT polish."""
    if N < 16:
        raise ValueError("N must be at least 16")
    K = kernel_matrix(grid, N, "plus", params)
    c = potential_cell_average(grid, N, params) / N
    m = (init.weights.copy() if init is not None else GridMeasure.uniform(grid, -1.0, 1.0).weights)

    def energy(v):
        return float(c @ v - 0.5 * v @ K @ v)

    grad = c - K @ m
    E = energy(m)
    history = [E]
    step = 1.0 / max(np.abs(K).sum(axis=1).max(), 1e-12)
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        trial = project_simplex(m - step * grad)
        d = trial - m
        slope = float(grad @ d)
        if slope >= 0:
            break
        lam = 1.0
        while True:
            cand = m + lam * d
            Ec = energy(cand)
            if Ec <= E + 1e-4 * lam * slope or lam < 1e-12:
                break
            lam *= 0.5
        s = cand - m
        g_new = c - K @ cand
        y = g_new - grad
        m, grad, E = cand, g_new, Ec
        history.append(E)
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else step * 2
        step = min(max(step, 1e-12), 1e12)
        if it % 50 == 0:
            _, res = _kkt(grad, m, support_tol)
            if res < max(tol_kkt, 1e-3 if polish else tol_kkt):
                break
    if polish:
        m, C = _active_set_polish(K, c, m, support_tol)
        grad = c - K @ m
        E = energy(m)
        history.append(E)
    C, res = _kkt(grad, m, support_tol)
    if res > tol_kkt:
        raise ConvergenceError(f"KKT residual {res:.3e} above {tol_kkt:.1e} after {it} iterations")
    mass = m.max()
    on = np.nonzero(m > support_tol * mass)[0]
    e = grid.edges
    measure = GridMeasure(grid, m / m.sum())
    return EquilibriumSolution(
        a_N=float(e[on[0]]), b_N=float(e[on[-1] + 1]), nodes=grid.nodes, density=m / grid.h,
        effective_potential=grad, energy=E, lagrange_constant=C, kkt_residual=res,
        iterations=it, measure=measure, energy_history=history)


def kkt_residual_of(measure: GridMeasure, N: float, params: ModelParams, support: tuple[float, float]):
    """Spread of the discrete effective potential over a given support, and its worst dip outside."""
    g = measure.grid
    K = kernel_matrix(g, N, "plus", params)
    c = potential_cell_average(g, N, params) / N
    veff = c - K @ measure.weights
    on = (g.nodes > support[0]) & (g.nodes < support[1])
    C = float(np.mean(veff[on]))
    spread = float(veff[on].max() - veff[on].min())
    dip = float(max(0.0, C - veff[~on].min())) if np.any(~on) else 0.0
    return spread, dip, veff
