"""Self-tests of the special functions: each check evaluates both sides of an exact identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .specfun import (ModelParams, fmin2, potential_pm_fourier, potential_v, potential_v_fourier,
                      potential_w, potentials_pm, rfun, smatrix, smatrix_integral, w_large_argument,
                      wiener_hopf_down, wiener_hopf_up)


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def to_json(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _max(x) -> float:
    return float(np.max(np.abs(x)))


def _smatrix_checks(p: ModelParams, rng: np.random.Generator):
    beta = rng.uniform(-5, 5, 100)
    yield Check("S unitarity", _max(smatrix(beta, p) * smatrix(-beta, p) - 1), 1e-12)
    grid = np.linspace(-4, 4, 41)
    yield Check("S crossing", _max(smatrix(grid, p) - smatrix(1j * math.pi - grid, p)), 1e-10)
    yield Check("S duality b <-> bhat", _max(smatrix(grid, p) - smatrix(grid, p.dual())), 1e-12)
    yield Check("S(0) = -1", abs(complex(smatrix(0.0, p)) + 1), 1e-14)
    yield Check("S closed form vs integral", abs(complex(smatrix(0.5, p)) - smatrix_integral(0.5, p)), 1e-8)


def _fmin_checks(p: ModelParams):
    b = 1.1
    yield Check("F reflection F(b) = F(-b) S(b)",
                abs(fmin2(b, p) - fmin2(-b, p) * complex(smatrix(b, p))), 1e-10)
    b = 0.4
    yield Check("F symmetry about i pi",
                abs(fmin2(1j * math.pi - b, p) - fmin2(1j * math.pi + b, p)), 1e-10)
    b = 0.8
    rhs = math.sinh(b) / (math.sinh(b) + np.sinh(2j * math.pi * p.b))
    yield Check("F product identity", abs(fmin2(1j * math.pi + b, p) * fmin2(b, p) - rhs), 1e-9)


def _potential_checks(p: ModelParams):
    yield Check("w even", abs(potential_w(2.0, p) - potential_w(-2.0, p)), 1e-12)
    near = [potential_w(x, p) - 2 * math.log(x) for x in (1e-3, 1e-4)]
    yield Check("w minus 2 log regular at 0", abs(near[0] - near[1]), 1e-3)
    lam = 6.0
    # remainder is O(e^{-(1+eps) lam}); compare on the e^{-lam} scale
    yield Check("w large-argument asymptotics",
                abs(potential_w(lam, p) - w_large_argument(lam, p)) * math.exp(lam), 0.05)
    alpha = 2 * math.pi * p.b
    yield Check("v direct vs Fourier", abs(potential_v(1.0, alpha, 0.0) - potential_v_fourier(1.0, alpha, 0.0)), 1e-6)
    wp, wm = potentials_pm(0.5, p)
    yield Check("w_plus + w_minus = w", abs(wp + wm - potential_w(0.5, p)), 1e-12)
    xs = np.linspace(0.1, 5.0, 25)
    err = max(abs(potentials_pm(x, p)[0] - potential_pm_fourier(x, "plus", p)) for x in xs)
    yield Check("w_plus direct vs Fourier on [0.1, 5]", err, 1e-6)
    lam = np.concatenate([-np.logspace(-3, 1.5, 40), np.logspace(-3, 1.5, 40)])
    worst = min(float(np.min(np.real(rfun(lam, p, w)) / lam)) for w in ("plus", "minus"))
    yield Check("R_plus/lam and R_minus/lam positive", max(0.0, -worst), 0.0)
    yield Check("w duality b <-> bhat", abs(potential_w(1.3, p) - potential_w(1.3, p.dual())), 1e-12)


def _wiener_hopf_checks(p: ModelParams):
    lam = np.linspace(-10, 10, 401)
    lam = lam[lam != 0]
    R = rfun(lam, p)
    prod = wiener_hopf_up(lam, p) * wiener_hopf_down(lam, p)
    yield Check("R_up R_down = R", _max((prod - R) / R), 1e-10)
    x = 0.6
    yield Check("R_up(-lam) = -lam^3 R_down(lam)",
                abs(complex(wiener_hopf_up(-x, p)) + x ** 3 * complex(wiener_hopf_down(x, p))), 1e-10)
    target = math.pi ** 1.5 * math.sqrt(p.b * p.bhat)
    yield Check("R_down(0)", abs(complex(wiener_hopf_down(0.0, p)) / target - 1), 1e-10)
    small = 1e-3
    cubic = math.pi ** 3 * p.b * p.bhat * small ** 3
    yield Check("R cubic zero at 0", abs(complex(rfun(small, p)) / cubic - 1), 1e-5)
    yield Check("R duality b <-> bhat", _max(rfun(lam, p) - rfun(lam, p.dual())), 1e-12)


def run_identities(params: ModelParams | None = None, seed: int = 42) -> list[Check]:
    p = params or ModelParams()
    rng = np.random.default_rng(seed)
    checks = []
    for group in (_smatrix_checks(p, rng), _fmin_checks(p), _potential_checks(p), _wiener_hopf_checks(p)):
        checks.extend(group)
    return checks
