"""Command-line front end: configuration, orchestration and output files.

Subcommands: ``solve``, ``equilibrium``, ``radial``, ``ballcheck``, ``sweep-n``.
Exit codes: 0 success, 2 invalid input (nothing written), 3 solver failure.
Every run writes ``manifest.json`` listing each output file with its SHA-256.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import platform
import re
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .ballcheck import characterization_experiment, domain_label
from .equilibrium import (
    BracketError,
    MonotonicityError,
    cross_validate,
    equilibrium_diagnostics,
    frank_wolfe_equilibrium,
    hierarchy_sweep,
    lambda_bisection_equilibrium,
)
from .functionals import make_model
from .geometry import DomainSpec, GeometryError, build_boundary_mesh, build_grid
from .measures import pairing, uniform_measure
from .potential_solver import SolverConfig, SolverError, richardson, solve_potential
from .radial import lambda_star, radial_potential

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3
RNG_NAME = "numpy.random.default_rng (PCG64)"

log = logging.getLogger("biequil")


class ValidationError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


# ---------------------------------------------------------------- config

DOMAIN_KEYS = ("shape", "radius", "semi_axes", "exponent", "dimension", "center")


def domain_from_mapping(d: dict) -> DomainSpec:
    shape = str(d.get("shape", "ball")).lower()
    dim = int(d.get("dimension", 3))
    center = d.get("center")
    try:
        if shape == "ball":
            r = float(d.get("radius", 1.0))
            if r <= 0:
                raise ValidationError(f"radius must be positive, got {r}")
            return DomainSpec.ball(r, dim, center)
        axes = d.get("semi_axes")
        if axes is None:
            raise ValidationError(f"{shape} needs semi_axes")
        if isinstance(axes, str):
            axes = [float(a) for a in axes.split(",")]
        if shape == "ellipsoid":
            return DomainSpec("ellipsoid", tuple(axes), 2.0, dim, center)
        return DomainSpec(shape, tuple(axes), float(d.get("exponent", 4.0)), dim, center)
    except GeometryError as exc:
        raise ValidationError(str(exc)) from exc


def parse_domain(text: str) -> tuple:
    """Domain from a config file path or a shorthand.

    Shorthands: ``ball``, ``ball:R``, ``ellipsoid:a,b,c``, ``superellipsoid:a,b,c:p``.
    Returns the domain and the raw mapping (config files may carry other keys).
    """
    p = Path(text)
    if p.suffix.lower() in (".yaml", ".yml", ".json") or p.is_file():
        d = load_config_file(p)
        return domain_from_mapping(d), d
    parts = text.split(":")
    shape = parts[0].strip().lower()
    d = {"shape": shape}
    try:
        if shape == "ball" and len(parts) > 1:
            d["radius"] = float(parts[1])
        elif shape in ("ellipsoid", "superellipsoid"):
            d["semi_axes"] = [float(a) for a in parts[1].split(",")]
            if shape == "superellipsoid":
                d["exponent"] = float(parts[2])
        elif shape != "ball":
            raise ValidationError(f"unknown domain {text!r}")
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"cannot parse domain {text!r}") from exc
    return domain_from_mapping(d), d


def load_config_file(path: Path) -> dict:
    """Flat ``key: value`` YAML (JSON is accepted as well)."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a mapping of keys to values")
    return data


@dataclass
class RunConfig:
    command: str
    domain: Optional[DomainSpec]
    model: str = "bi"
    L: float = 4.0
    m: int = 97
    resolution: int = 1024
    route: str = "both"
    tol: float = 1e-8
    out: Path = Path("out")
    seed: int = 0
    iters: int = 20
    levels: tuple = ()
    radii: tuple = (1.5, 2.0, 3.0)
    max_n: int = 6
    max_iter: int = 60
    extra: dict = field(default_factory=dict)

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("domain", "extra")}
        if self.domain is not None:
            d["domain"] = {"shape": self.domain.shape, "semi_axes": list(self.domain.semi_axes),
                           "exponent": self.domain.exponent, "dimension": self.domain.dimension,
                           "center": list(self.domain.center)}
        d.update(self.extra)
        return _jsonable(d)


def _merge(args, file_cfg: dict, key: str, attr: str, default):
    v = getattr(args, attr, None)
    if v is not None:
        return v
    return file_cfg.get(key, default)


def build_run_config(args) -> RunConfig:
    """Validate every numeric field before anything is solved or written."""
    file_cfg = load_config_file(Path(args.config)) if getattr(args, "config", None) else {}
    domain = None
    if getattr(args, "domain", None):
        domain, dmap = parse_domain(args.domain)
        file_cfg = {**dmap, **file_cfg}
    elif any(k in file_cfg for k in DOMAIN_KEYS):
        domain = domain_from_mapping(file_cfg)
    cfg = RunConfig(args.command, domain)
    cfg.model = str(_merge(args, file_cfg, "model", "model", "bi"))
    cfg.L = float(_merge(args, file_cfg, "box_halfwidth", "box", 4.0))
    cfg.m = int(_merge(args, file_cfg, "grid_points", "grid", 97))
    cfg.resolution = int(_merge(args, file_cfg, "boundary_points", "boundary_points", 1024))
    cfg.route = str(_merge(args, file_cfg, "route", "route", "both"))
    cfg.tol = float(_merge(args, file_cfg, "tol", "tol", 1e-8))
    cfg.seed = int(_merge(args, file_cfg, "seed", "seed", 0))
    cfg.iters = int(_merge(args, file_cfg, "iters", "iters", 20))
    cfg.max_n = int(_merge(args, file_cfg, "max_n", "max_n", 6))
    cfg.max_iter = int(_merge(args, file_cfg, "max_iter", "max_iter", 60))
    cfg.out = Path(_merge(args, file_cfg, "out", "out", "out"))
    levels = _merge(args, file_cfg, "richardson", "richardson", None)
    if isinstance(levels, str):
        levels = [float(v) for v in levels.split(",") if v.strip()]
    cfg.levels = tuple(float(v) for v in levels) if levels else (cfg.L,)
    radii = _merge(args, file_cfg, "radii", "radii", None)
    if isinstance(radii, str):
        radii = [float(v) for v in radii.split(",") if v.strip()]
    if radii:
        cfg.radii = tuple(float(v) for v in radii)
    try:
        make_model(cfg.model)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if cfg.command != "radial":
        if domain is None:
            raise ValidationError("a domain is required (--domain or shape keys in --config)")
        if domain.dimension != 3:
            raise ValidationError("grid commands support dimension 3 only")
        if cfg.m < 8:
            raise ValidationError(f"grid_points must be >= 8, got {cfg.m}")
        if cfg.resolution < 16:
            raise ValidationError(f"boundary_points must be >= 16, got {cfg.resolution}")
        for L in cfg.levels + (cfg.L,):
            if not L > domain.circumradius:
                raise ValidationError(f"box half-width {L} must exceed the circumradius {domain.circumradius:.6g}")
    if not cfg.tol > 0:
        raise ValidationError("tol must be positive")
    if cfg.max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    if cfg.iters < 1:
        raise ValidationError("iters must be >= 1")
    if cfg.route not in ("fw", "bisect", "both"):
        raise ValidationError(f"route must be fw, bisect or both, got {cfg.route!r}")
    if not 1 <= cfg.max_n <= 60:
        raise ValidationError("max_n must lie in [1, 60]")
    return cfg


# ---------------------------------------------------------------- outputs

class Run:
    """Owns the output directory: records files, hashes and stage timings."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.timings = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t0

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([fmt(v) for v in row] for row in rows)
        return self._write(name, buf.getvalue())

    def write_json(self, name: str, obj) -> Path:
        return self._write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def _write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.files.append(p)
        return p

    def manifest(self, exit_code: int) -> Path:
        inventory = []
        for p in self.files:
            data = p.read_bytes()
            inventory.append({"path": p.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {
            "command": self.cfg.command,
            "config": self.cfg.echo(),
            "exit_code": exit_code,
            "seed": self.cfg.seed,
            "rng": RNG_NAME,
            "versions": {"biequil": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "timings": self.timings,
            "outputs": inventory,
        }
        p = self.out / "manifest.json"
        p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return p


def _report_dict(rep) -> dict:
    # wall time lives in the manifest so that result files stay byte-reproducible
    return {"iterations": rep.iterations, "action": rep.action, "residual": rep.residual,
            "theta": rep.theta, "converged": rep.converged, "cg_iterations": rep.cg_iterations}


def _solver_cfg(cfg: RunConfig, model=None) -> SolverConfig:
    return SolverConfig(model=model or cfg.model, tol=cfg.tol, max_iter=cfg.max_iter)


# ---------------------------------------------------------------- commands

def cmd_radial(cfg: RunConfig, run: Run, args) -> int:
    R, N = float(args.R), int(args.N)
    with run.stage("radial"):
        r = R * np.geomspace(1.0, 100.0, 81)
        prof = radial_potential(R, N, cfg.model, r)
        lam2 = lambda_star(R, N, cfg.model, rule="legendre")
    run.write_csv("radial.csv", ["r", "D", "s", "phi"], zip(prof.r, prof.D, prof.s, prof.phi))
    summary = {"R": R, "N": N, "model": prof.model, "lambda_star": prof.lambda_star,
               "lambda_star_second_rule": lam2}
    run.write_json("radial.json", summary)
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


def cmd_solve(cfg: RunConfig, run: Run, args) -> int:
    """Potential of the normalized surface measure, optionally at several box sizes with fixed h."""
    dom = cfg.domain
    h = 2.0 * cfg.L / (cfg.m - 1)
    mesh = build_boundary_mesh(dom, cfg.resolution)
    rho = uniform_measure(mesh)
    c = np.asarray(dom.center)
    pts = np.array([c + [r, 0.0, 0.0] for r in cfg.radii])
    lams, profiles, reports = [], [], []
    ok = True
    for L in cfg.levels:
        m = int(round(2.0 * L / h)) + 1
        grid = build_grid(dom, L, m)
        with run.stage(f"solve_L{L:g}"):
            phi, rep = solve_potential(rho, grid, _solver_cfg(cfg))
        ok &= rep.converged
        lams.append(pairing(rho, phi))
        profiles.append(phi.evaluate(pts))
        reports.append({"L": L, "m": m, **_report_dict(rep)})
    lams = np.array(lams)
    profiles = np.array(profiles)
    Ls = np.array(cfg.levels)
    summary = {"domain": domain_label(dom), "model": make_model(cfg.model).name, "h": h,
               "levels": list(Ls), "lambda": list(lams), "reports": reports}
    header = ["r"] + [f"phi_L{L:g}" for L in Ls]
    cols = [list(cfg.radii)] + [list(p) for p in profiles]
    if len(Ls) >= 2:
        summary["lambda_extrapolated_2level"] = richardson(Ls[:2], lams[:2], (1,))
        exps = (1.0,) if len(Ls) == 2 else (1.0, 5.0)
        summary["lambda_extrapolated"] = richardson(Ls, lams, exps)
        ext = [richardson(Ls, profiles[:, j], exps) for j in range(len(cfg.radii))]
        header.append("phi_extrapolated")
        cols.append(ext)
    if dom.shape == "ball":
        R = dom.radius
        lam_o = lambda_star(R, 3, cfg.model)
        oracle = [float(radial_potential(R, 3, cfg.model, [r]).phi[0]) for r in cfg.radii]
        summary["lambda_oracle"] = lam_o
        header.append("phi_oracle")
        cols.append(oracle)
        best = cols[-2]
        header.append("rel_err")
        cols.append([abs(a - b) / b for a, b in zip(best, oracle)])
        if len(Ls) >= 2:
            summary["lambda_rel_err_2level"] = abs(summary["lambda_extrapolated_2level"] - lam_o) / lam_o
    run.write_csv("profile.csv", header, zip(*cols))
    run.write_json("summary.json", summary)
    return EXIT_OK if ok else EXIT_SOLVER


def _measure_rows(res, mesh):
    return zip(mesh.points[:, 0], mesh.points[:, 1], mesh.points[:, 2], res.measure.weights,
               res.measure.weights / mesh.weights)


def _slice_rows(phi):
    g = phi.grid
    k = g.m // 2
    X, Y = np.meshgrid(g.x, g.x, indexing="ij")
    return zip(X.ravel(), Y.ravel(), phi.values[:, :, k].ravel())


def cmd_equilibrium(cfg: RunConfig, run: Run, args) -> int:
    dom = cfg.domain
    grid = build_grid(dom, cfg.L, cfg.m)
    mesh = build_boundary_mesh(dom, cfg.resolution)
    scfg = _solver_cfg(cfg)
    results = {}
    if cfg.route in ("bisect", "both"):
        with run.stage("bisect"):
            results["bisect"] = lambda_bisection_equilibrium(dom, grid, scfg, mesh=mesh)
    if cfg.route in ("fw", "both"):
        with run.stage("fw"):
            results["fw"] = frank_wolfe_equilibrium(mesh, grid, scfg, iters=cfg.iters)
    summary = {"domain": domain_label(dom), "model": scfg.model.name, "routes": {}}
    for name, res in results.items():
        diag = equilibrium_diagnostics(res, mesh, grid, seed=cfg.seed)
        summary["routes"][name] = {**res.summary(), "diagnostics": diag, "history": res.history}
        run.write_csv(f"measure_{name}.csv", ["x", "y", "z", "weight", "density"], _measure_rows(res, mesh))
        run.write_csv(f"potential_{name}_z0.csv", ["x", "y", "phi"], _slice_rows(res.potential))
    if len(results) == 2:
        summary["cross_validation"] = cross_validate(results["fw"], results["bisect"], mesh)
    run.write_json("summary.json", summary)
    ok = all(r.report is None or r.report.converged for r in results.values())
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_ballcheck(cfg: RunConfig, run: Run, args) -> int:
    if args.domains:
        domains = [parse_domain(d)[0] for d in args.domains]
    else:
        domains = [DomainSpec.ball(1.0), DomainSpec.ellipsoid((1.5, 1, 1)), DomainSpec.ellipsoid((2, 1, 1))]
    models = args.models.split(",") if args.models else ["bi", "n=1", "n=3"]
    with run.stage("ballcheck"):
        rows = characterization_experiment(domains, _solver_cfg(cfg), cfg.L, cfg.m, models, cfg.resolution,
                                           "fw" if cfg.route == "fw" else "bisect", cfg.iters)
    run.write_csv("ballcheck.csv", ["domain", "model", "lambda_star", "delta", "mass", "threshold", "ball_like", "error"],
                  ([r["domain"], r["model"], r["lambda_star"], r["delta"], r["mass"], r["threshold"],
                    r["ball_like"], r["error"]] for r in rows))
    for r in rows:
        if "_result" in r:
            mesh = r["_result"].measure.mesh
            name = re.sub(r"[^A-Za-z0-9.]+", "_", f"density_{r['domain']}_{r['model']}").strip("_") + ".csv"
            run.write_csv(name, ["x", "y", "z", "weight", "density"], _measure_rows(r["_result"], mesh))
    return EXIT_OK if all(not r["error"] for r in rows) else EXIT_SOLVER


def cmd_sweep_n(cfg: RunConfig, run: Run, args) -> int:
    dom = cfg.domain
    grid = build_grid(dom, cfg.L, cfg.m)
    mesh = build_boundary_mesh(dom, cfg.resolution)
    with run.stage("sweep"):
        scfg = SolverConfig(tol=min(cfg.tol, 1e-11), max_iter=cfg.max_iter)
        rows, results = hierarchy_sweep(dom, grid, cfg.max_n, scfg, mesh)
    run.write_csv("sweep_n.csv", ["model", "lambda_star", "mass", "k_energy", "action", "tv_to_bi"],
                  ([r.model, r.lambda_star, r.mass, r.k_energy, r.action, r.tv_to_bi] for r in rows))
    trunc = [r for r in rows if r.model != "bi"]
    k = [r.k_energy for r in trunc]
    a = [r.action for r in trunc]
    summary = {
        "domain": domain_label(dom),
        "k_strictly_decreasing": all(y < x for x, y in zip(k[:-1], k[1:])),
        "action_strictly_increasing": all(y > x for x, y in zip(a[:-1], a[1:])),
        "min_k_margin": min((x - y for x, y in zip(k[:-1], k[1:])), default=None),
        "min_action_margin": min((y - x for x, y in zip(a[:-1], a[1:])), default=None),
    }
    run.write_json("sweep_n.json", summary)
    ok = all(r.report is None or r.report.converged for r in results.values())
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {"radial": cmd_radial, "solve": cmd_solve, "equilibrium": cmd_equilibrium,
            "ballcheck": cmd_ballcheck, "sweep-n": cmd_sweep_n}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biequil", description="Born-Infeld equilibrium measures and potentials")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=True):
        sp.add_argument("--config", help="flat YAML/JSON config file")
        sp.add_argument("--model", help="bi or n=<k>")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", dest="max_iter", type=int, help="Newton iteration cap")
        if grid:
            sp.add_argument("--domain", help="config path or ball | ball:R | ellipsoid:a,b,c | superellipsoid:a,b,c:p")
            sp.add_argument("--grid", type=int, help="points per axis m")
            sp.add_argument("--box", type=float, help="box half-width L")
            sp.add_argument("--boundary-points", dest="boundary_points", type=int)

    sp = sub.add_parser("radial", help="exact radial profile on a ball")
    common(sp, grid=False)
    sp.add_argument("--R", type=float, default=1.0)
    sp.add_argument("--N", type=int, default=3)

    sp = sub.add_parser("solve", help="potential of the normalized surface measure")
    common(sp)
    sp.add_argument("--richardson", help="comma separated box half-widths at fixed h, e.g. 4,6,8")
    sp.add_argument("--radii", help="comma separated probe radii along +x")

    sp = sub.add_parser("equilibrium", help="equilibrium measure by Frank-Wolfe and/or level bisection")
    common(sp)
    sp.add_argument("--route", choices=("fw", "bisect", "both"))
    sp.add_argument("--iters", type=int)

    sp = sub.add_parser("ballcheck", help="density contrast of equilibria across domains")
    common(sp)
    sp.add_argument("--domains", nargs="*", help="domain shorthands or config paths")
    sp.add_argument("--models", help="comma separated models (default bi,n=1,n=3)")
    sp.add_argument("--route", choices=("fw", "bisect"))
    sp.add_argument("--iters", type=int)

    sp = sub.add_parser("sweep-n", help="truncated-model hierarchy on one domain")
    common(sp)
    sp.add_argument("--max-n", dest="max_n", type=int)
    return p


def _error(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "ballcheck" and not getattr(args, "domain", None):
        args.domain = "ball"
    try:
        cfg = build_run_config(args)
        if args.command == "radial" and (args.R <= 0 or args.N < 3):
            raise ValidationError("need R > 0 and N >= 3")
    except (ValidationError, GeometryError, ValueError) as exc:
        return _error(EXIT_INVALID, "validation", str(exc))
    run = Run(cfg)
    try:
        code = COMMANDS[args.command](cfg, run, args)
        if code == EXIT_SOLVER:
            _error(EXIT_SOLVER, "nonconvergence", "at least one solve did not converge")
    except (ValidationError, GeometryError) as exc:
        code = _error(EXIT_INVALID, "validation", str(exc))
    except (SolverError, BracketError, MonotonicityError) as exc:
        code = _error(EXIT_SOLVER, "solver", str(exc))
    run.manifest(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
