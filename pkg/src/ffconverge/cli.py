"""Command-line runner: config ingestion, validation suites and report files.

Exit status is 0 when every check passes, 1 when a suite fails and 2 when
the configuration cannot be read.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import closedform as cf
from . import eqmeasure as eq
from . import formfactor as ff
from . import plotting
from .identities import Check, run_identities
from .specfun import ModelParams, QuadratureSpec

log = logging.getLogger("ffconverge")

SUITES = ("identities", "bounds", "equilibrium", "closedform", "energy")
DEFAULT_N = (2, 3, 4, 10 ** 4, 10 ** 6, 10 ** 8)
# sizes handled by each suite
DESK_MAX = 6
DIRECT_RANGE = (16, 10 ** 6)
CLOSED_MIN = 10 ** 3
PROFILE_POINTS = 401


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    n_list: list = field(default_factory=lambda: list(DEFAULT_N))
    suites: list = field(default_factory=lambda: list(SUITES))
    mc: ff.MonteCarloSpec = field(default_factory=ff.MonteCarloSpec)
    output_dir: Path = Path("ffconverge-output")
    tolerances: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if not self.n_list:
            raise ConfigError("n_list must not be empty")
        if list(self.n_list) != sorted(self.n_list):
            raise ConfigError("n_list must be sorted")
        bad = [s for s in self.suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites {bad}")

    def to_json(self) -> dict:
        return {
            "params": asdict(self.params), "n_list": list(self.n_list), "suites": list(self.suites),
            "mc": asdict(self.mc), "output_dir": str(self.output_dir), "tolerances": asdict(self.tolerances),
        }


# ---------------------------------------------------------------- config

_SCHEMA = {
    "model": {"b": float, "gamma_charge": float, "kappa": float},
    "run": {"n_list": "ints", "suites": "names", "output_dir": str, "seed": int},
    "montecarlo": {"samples": "int", "proposal_scale": float, "chunk": "int"},
    "quadrature": {"abs_tol": float, "rel_tol": float, "max_subdivisions": "int", "oscillatory_cutoff": float},
}


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, by a plain scan of the file."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), no)
    return lines


def _as_int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _convert(kind, text: str):
    if kind in ("int", int):
        return _as_int(text)
    if kind == "ints":
        return [_as_int(t) for t in re.split(r"[,\s]+", text.strip()) if t]
    if kind == "names":
        return [t for t in re.split(r"[,\s]+", text.strip()) if t]
    return kind(text)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", exc.lineno) from None
    except configparser.ParsingError as exc:
        raise ConfigError("unparsable line", exc.errors[0][0]) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", exc.lineno) from None
    lines = _key_lines(text)
    values: dict = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key, raw in cp.items(section):
            where = lines.get((section, key))
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", where)
            try:
                values[(section, key)] = (_convert(_SCHEMA[section][key], raw), where)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", where) from None

    def get(section, key, default):
        return values.get((section, key), (default, None))

    def build(make, *items, where=None):
        try:
            return make()
        except ConfigError as exc:
            raise ConfigError(str(exc), where) from None
        except ValueError as exc:
            line = next((get(s, k, None)[1] for s, k in items if get(s, k, None)[1]), where)
            raise ConfigError(str(exc), line) from None

    d = ModelParams()
    params = build(lambda: ModelParams(get("model", "b", d.b)[0], get("model", "gamma_charge", d.gamma_charge)[0],
                                       get("model", "kappa", d.kappa)[0]),
                   ("model", "b"), ("model", "kappa"), ("model", "gamma_charge"))
    dm = ff.MonteCarloSpec()
    mc = build(lambda: ff.MonteCarloSpec(get("montecarlo", "samples", dm.samples)[0], get("run", "seed", dm.seed)[0],
                                         get("montecarlo", "proposal_scale", dm.proposal_scale)[0],
                                         get("montecarlo", "chunk", dm.chunk)[0]),
               ("montecarlo", "samples"), ("montecarlo", "chunk"), ("montecarlo", "proposal_scale"))
    dq = QuadratureSpec()
    quad = build(lambda: QuadratureSpec(get("quadrature", "abs_tol", dq.abs_tol)[0],
                                        get("quadrature", "rel_tol", dq.rel_tol)[0],
                                        get("quadrature", "max_subdivisions", dq.max_subdivisions)[0],
                                        get("quadrature", "oscillatory_cutoff", dq.oscillatory_cutoff)[0]),
                 ("quadrature", "abs_tol"), ("quadrature", "rel_tol"), ("quadrature", "max_subdivisions"),
                 ("quadrature", "oscillatory_cutoff"))
    n_list, n_line = get("run", "n_list", list(DEFAULT_N))
    if any(n < 0 for n in n_list):
        raise ConfigError("n_list entries must be nonnegative", n_line)
    suites, s_line = get("run", "suites", list(SUITES))
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise ConfigError(f"unknown suites {bad}; choose from {', '.join(SUITES)}", s_line)
    out = Path(get("run", "output_dir", "ffconverge-output")[0])
    return build(lambda: RunConfig(params, n_list, suites, mc, out, quad), where=n_line)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def apply_environment(cfg: RunConfig, env=os.environ) -> RunConfig:
    """FFCONVERGE_OUTPUT_DIR and FFCONVERGE_SEED take precedence over the file."""
    if env.get("FFCONVERGE_OUTPUT_DIR"):
        cfg = replace(cfg, output_dir=Path(env["FFCONVERGE_OUTPUT_DIR"]))
    if env.get("FFCONVERGE_SEED"):
        try:
            seed = int(env["FFCONVERGE_SEED"])
        except ValueError:
            raise ConfigError("FFCONVERGE_SEED must be an integer") from None
        cfg = replace(cfg, mc=replace(cfg.mc, seed=seed))
    return cfg


# ---------------------------------------------------------------- suites


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


class _Suite:
    def __init__(self, name: str):
        self.name = name
        self.checks: list[Check] = []
        self.records: list[dict] = []

    def check(self, name: str, residual: float, tol: float):
        c = Check(name, float(residual), float(tol))
        self.checks.append(c)
        log.info("%s %-55s %.3e (tol %.1e)", "PASS" if c.passed else "FAIL", name, c.residual, c.tolerance)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"passed": self.passed, "n_passed": sum(c.passed for c in self.checks),
                "checks": [c.to_json() for c in self.checks], "records": self.records}


class Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.bounds: list[ff.BoundReport] = []
        self.closed_profiles: dict = {}
        self.direct_profiles: dict = {}
        self.geoms: dict = {}

    def geom(self, N: int) -> cf.ScaledGeometry:
        if N not in self.geoms:
            self.geoms[N] = cf.solve_endpoint(N, self.cfg.params)
        return self.geoms[N]

    def identities(self, s: _Suite):
        for c in run_identities(self.cfg.params, self.cfg.mc.seed):
            s.checks.append(c)

    def bounds_suite(self, s: _Suite):
        p = self.cfg.params
        for N in (n for n in self.cfg.n_list if 1 <= n <= DESK_MAX):
            if N == 1:
                est = ff.u_n(1, p)
                s.check("N=1 summand vs Bessel reduction", abs(est.value - ff.u_one_bessel(p)), 1e-8)
                continue
            rep = ff.bound_report(N, p, mc=self.cfg.mc)
            self.bounds.append(rep)
            s.check(f"N={N} summand below bound chain (3 sigma)",
                    max(0.0, rep.u_n_estimate - 3 * rep.u_n_stderr - rep.bound_chain), 0.0)
            s.records.append({"N": N, "u_n_estimate": rep.u_n_estimate, "u_n_stderr": rep.u_n_stderr,
                              "znp_values": list(rep.znp_values), "bound_chain": rep.bound_chain,
                              "theorem_envelope": rep.theorem_envelope, "holds": rep.holds})
        plotting.emit_bounds(self.bounds, self.out / "bounds.csv")

    def equilibrium(self, s: _Suite):
        p = self.cfg.params
        for N in (n for n in self.cfg.n_list if DIRECT_RANGE[0] <= n <= DIRECT_RANGE[1]):
            sol = eq.minimize_energy_plus(N, p)
            on = (sol.nodes >= sol.a_N) & (sol.nodes <= sol.b_N)
            self.direct_profiles[N] = (sol.nodes[on], sol.density[on])
            plotting.emit_plotdata(sol, self.out / f"density_direct_{N}.csv")
            s.check(f"N={N} KKT residual", sol.kkt_residual, 1e-6)
            rec = {"N": N, **sol.to_json()}
            if N >= CLOSED_MIN:
                g = self.geom(N)
                s.check(f"N={N} endpoint vs closed form (relative)", abs(sol.b_N - g.b_N) / g.b_N, 0.05)
                rho = np.zeros_like(sol.nodes)
                inside = np.abs(sol.nodes) < g.b_N
                rho[inside] = cf.density_eq(sol.nodes[inside], g, p)
                l1 = float(np.sum(np.abs(rho - sol.density)) * sol.measure.grid.h)
                s.check(f"N={N} density L1 distance to closed form", l1, 0.10)
                rec["l1_to_closed_form"] = l1
            s.records.append(rec)

    def closedform(self, s: _Suite):
        p = self.cfg.params
        for N in (n for n in self.cfg.n_list if n >= CLOSED_MIN):
            g = self.geom(N)
            s.check(f"N={N} endpoint equation residual", abs(cf.endpoint_residual(g, p)), 1e-10)
            s.check(f"N={N} normalization (leading form)", abs(cf.normalization_integral(g, p) - 1), 1e-10)
            s.check(f"N={N} constraint integral vanishes", abs(cf.constraint_j12(g, p)), 1e-12)
            xi = np.linspace(-g.b_N, g.b_N, PROFILE_POINTS)
            rho = np.asarray(cf.density_eq(xi, g, p), dtype=float)
            s.check(f"N={N} density nonnegative", max(0.0, -float(rho.min())), 1e-10)
            s.check(f"N={N} density vanishes at the edges", max(abs(rho[0]), abs(rho[-1])), 1e-6)
            self.closed_profiles[N] = (xi, rho)
            plotting.emit_density(xi, rho, self.out / f"density_{N}.csv")
            s.records.append(cf.closed_form_record(N, p))

    def energy(self, s: _Suite):
        p = self.cfg.params
        for N in (n for n in self.cfg.n_list if n >= CLOSED_MIN):
            g = self.geom(N)
            e = cf.energy_asymptotic(N, p, g)
            assembled = cf.energy_assembled(g, p)
            ratio = N * N * e / cf.theorem_exponent(N, p)
            s.check(f"N={N} assembled energy vs asymptotic (relative)", abs(assembled / e - 1), 0.05)
            if N >= 10 ** 8:
                s.check(f"N={N} energy ratio to leading exponent in [0.5, 2]",
                        0.0 if 0.5 <= ratio <= 2 else abs(math.log(ratio)), 0.0)
            s.records.append({"N": N, "energy_asymptotic": e, "energy_assembled": assembled,
                              "ratio_to_exponent": ratio, "error_budget": cf.error_budget(g.xbar)})

    def run(self) -> dict:
        self.out.mkdir(parents=True, exist_ok=True)
        table = {"identities": self.identities, "bounds": self.bounds_suite, "equilibrium": self.equilibrium,
                 "closedform": self.closedform, "energy": self.energy}
        suites = {}
        for name in SUITES:
            if name not in self.cfg.suites:
                continue
            s = _Suite(name)
            log.info("suite %s", name)
            try:
                table[name](s)
            except (ArithmeticError, RuntimeError, ValueError) as exc:
                s.check(f"suite raised {type(exc).__name__}: {exc}", math.inf, 0.0)
            suites[name] = s
        figures = []
        for fig in (plotting.plot_densities(self.closed_profiles, self.direct_profiles, self.out / "density.png"),
                    plotting.plot_bounds(self.bounds, self.out / "bounds.png"),
                    plotting.plot_energy(suites["energy"].records if "energy" in suites else [],
                                         self.out / "energy.png")):
            if fig is not None:
                figures.append(fig.name)
        report = {"config": self.cfg.to_json(), "passed": all(s.passed for s in suites.values()),
                  "suites": {k: s.to_json() for k, s in suites.items()}, "figures": figures}
        report = _clean(report)
        (self.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return report


def run(cfg: RunConfig) -> int:
    report = Runner(cfg).run()
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ffconverge", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", type=Path)
    common.add_argument("--seed", type=int)
    sub.add_parser("identities", parents=[common], help="special-function identity suite")
    for name, suite, helptext in (("bound", "bounds", "summand vs bound chain"),
                                  ("eqmeasure", "equilibrium", "direct energy minimisation"),
                                  ("closedform", "closedform", "closed-form equilibrium data"),
                                  ("energy", "energy", "large-N energy asymptotics")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--n", type=float, required=True, help="number of particles N")
        if name == "bound":
            sp.add_argument("--samples", type=int, help="Monte Carlo samples")
        sp.set_defaults(suite=suite)
    sp = sub.add_parser("all", parents=[common], help="every suite listed in a config file")
    sp.add_argument("--config", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "all":
            cfg = load_config(args.config)
        elif args.command == "identities":
            cfg = RunConfig(suites=["identities"])
        else:
            if not float(args.n).is_integer() or args.n < 1:
                raise ConfigError("--n must be a positive integer")
            cfg = RunConfig(n_list=[int(args.n)], suites=[args.suite])
            if getattr(args, "samples", None):
                cfg = replace(cfg, mc=replace(cfg.mc, samples=args.samples))
        cfg = apply_environment(cfg)
        if args.output_dir is not None:
            cfg = replace(cfg, output_dir=args.output_dir)
        if args.seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
    except ConfigError as exc:
        print(f"ffconverge: config error: {exc}", file=sys.stderr)
        return 2
    status = run(cfg)
    report = json.loads((Path(cfg.output_dir) / "report.json").read_text())
    for name, s in report["suites"].items():
        print(f"{name}: {s['n_passed']}/{len(s['checks'])} checks passed")
    print(f"report written to {Path(cfg.output_dir) / 'report.json'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
