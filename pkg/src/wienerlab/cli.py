"""Command-line front end.

Every subcommand reads one INI config (see :mod:`wienerlab.config`),
writes CSV/JSON outputs into ``--out-dir`` and a ``manifest.json`` that
lists the resolved config, input hashes and every output file.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .capacity import (CapacityError, CapacityProfile, Condenser, UnresolvableScale, ball_condenser,
                       capacity_profile, cube_condenser, p_capacity)
from .config import Config, ConfigError, parse_bool, parse_optional_float
from .criteria import DEFAULT
from .geometry import GeometryError, build_datum, build_domain
from .oracles import radial_capacity, radial_profile
from .pde import FluxModel, SolverError, solve_cauchy_dirichlet
from .svg import line_chart
from .verify import (AuxConfig, ExperimentConfig, PreconditionError, _jsonable, check_extinction_window,
                     harnack_sweep, l1_harnack_sweep, refinement_drift, verify_boundary_decay)
from .wiener import AdmissibilityError, modulus_and_reference, qo_exponent

log = logging.getLogger("wienerlab")

WORKERS_ENV = "WIENERLAB_WORKERS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class Run:
    """Output bookkeeping for one command."""

    def __init__(self, command: str, cfg: Optional[Config], out_dir: Path, args: argparse.Namespace):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.args = args
        self.outputs: List[str] = []
        self.inputs: Dict[str, str] = {}
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg is not None and cfg.path is not None:
            self.add_input(cfg.path)

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = hashlib.sha256(Path(path).read_bytes()).hexdigest()

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def json(self, name: str, data: Dict[str, Any]) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        return p

    def csv(self, name: str, header: List[str], rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return p

    def svg(self, name: str, *a, **kw) -> None:
        if self.args.svg:
            line_chart(self.path(name), *a, **kw)

    def manifest(self, passed: Optional[bool]) -> Path:
        data = {
            "command": self.command,
            "tool_version": __version__,
            "config": self.cfg.snapshot() if self.cfg else {},
            "inputs": self.inputs,
            "outputs": list(self.outputs),
            "workers": self.args.workers,
            "seed": self.args.seed,
            "passed": passed,
        }
        p = self.out_dir / "manifest.json"
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return p


# --------------------------------------------------------------------------
# helpers reading config sections


def _structure(cfg: Config, default_dim: Optional[int] = None):
    p = cfg.get("structure", "p", float)
    dim = cfg.get("structure", "dim", int, default_dim)
    if dim is None:
        raise cfg.error("structure", "dim", "missing required field")
    return p, dim


def _harnack(cfg: Config, p: float, dim: int):
    r = cfg.get("harnack", "r", parse_optional_float, None)
    d_mode = cfg.get("harnack", "d_mode", str, "prototype")
    d = cfg.get("harnack", "d", parse_optional_float, None)
    try:
        return qo_exponent(p, dim, r, d_mode, d)
    except AdmissibilityError as exc:
        raise cfg.error("harnack", "r", str(exc)) from exc
    except ValueError as exc:
        raise cfg.error("harnack", "d_mode", str(exc)) from exc


def _point(cfg: Config, dim: int):
    x_o = cfg.floats("point", "x_o")
    if len(x_o) != dim:
        raise cfg.error("point", "x_o", f"expected {dim} coordinates, got {len(x_o)}")
    return tuple(x_o)


def _domain(cfg: Config):
    desc = cfg.domain()
    try:
        return build_domain(desc, build_datum(cfg.datum())), desc
    except (GeometryError, KeyError) as exc:
        raise cfg.error("domain", None, str(exc)) from exc


def _flux_model(cfg: Config) -> FluxModel:
    model = cfg.get("structure", "model", str, "prototype")
    if model == "prototype":
        return FluxModel()
    if model == "diagonal-matrix":
        return FluxModel.constant_diagonal(cfg.floats("structure", "diagonal"))
    raise cfg.error("structure", "model", f"unknown flux model {model!r}")


def _experiment(cfg: Config, workers: int) -> ExperimentConfig:
    desc = cfg.domain()
    dim = int(desc.get("dim", 2))
    p, _ = _structure(cfg, dim)
    e = "experiment"
    kw = dict(
        domain=desc, x_o=_point(cfg, dim), datum=cfg.datum(),
        t_o=cfg.get("point", "t_o", float, 1.0), T=cfg.get(e, "T", parse_optional_float, None), p=p,
        R_o=cfg.get(e, "R_o", float, 0.5), num_scales=cfg.get(e, "num_scales", int, 4),
        c=cfg.get(e, "c", float, DEFAULT.c_default),
        c_sweep=tuple(cfg.floats(e, "c_sweep", list(DEFAULT.c_sweep))),
        alpha=cfg.get(e, "alpha", parse_optional_float, None),
        r=cfg.get("harnack", "r", parse_optional_float, None),
        d_mode=cfg.get("harnack", "d_mode", str, "prototype"),
        d=cfg.get("harnack", "d", parse_optional_float, None),
        model=cfg.get("structure", "model", str, "prototype"),
        diagonal=tuple(cfg.floats("structure", "diagonal")) if cfg.has("structure", "diagonal") else None,
        solver=cfg.solver(ExperimentConfig.__dataclass_fields__["solver"].default),
        capacity=cfg.capacity(),
        annulus_ratio=cfg.get("capacity", "annulus_ratio", float, 1.5),
        workers=workers, name=cfg.get("run", "name", str, "experiment"),
    )
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        raise cfg.error(e, None, str(exc)) from exc


def _aux(cfg: Config) -> AuxConfig:
    s = "aux"
    base = AuxConfig()
    kw: Dict[str, Any] = {}
    for key in ("rho", "p", "box_factor", "amplitude", "eps_rel", "dt0_rel", "dt_growth",
                "dt_max_rel", "horizon", "tol"):
        if cfg.has(s, key):
            kw[key] = cfg.get(s, key, float)
    for key in ("dim", "grid_n"):
        if cfg.has(s, key):
            kw[key] = cfg.get(s, key, int)
    if cfg.has(s, "kappa"):
        kw["kappa"] = cfg.get(s, "kappa", parse_optional_float)
    if cfg.has(s, "x_o"):
        kw["x_o"] = tuple(cfg.floats(s, "x_o"))
    else:
        kw["x_o"] = (0.0,) * kw.get("dim", base.dim)
    if cfg.has("structure", "model"):
        kw["model"] = cfg.get("structure", "model")
        if kw["model"] != "prototype":
            kw["diagonal"] = tuple(cfg.floats("structure", "diagonal"))
    try:
        return AuxConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise cfg.error(s, None, str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_capacity(run: Run) -> bool:
    cfg = run.cfg
    s = "condenser"
    kind = cfg.get(s, "kind")
    p = cfg.get(s, "p", float)
    dim = cfg.get(s, "dim", int, 2)
    grid_n = cfg.get(s, "grid_n", int, 128)
    settings = cfg.capacity()
    oracle = None
    if kind == "empty":
        shape = (grid_n,) * dim
        outer = np.zeros(shape, dtype=bool)
        outer[(slice(1, -1),) * dim] = True
        cond = Condenser(np.zeros(shape, dtype=bool), outer, 2.0 / grid_n, p)
    elif kind == "concentric-balls":
        r, R = cfg.get(s, "r", float), cfg.get(s, "R", float)
        try:
            cond = ball_condenser(dim, p, r, R, grid_n)
        except ValueError as exc:
            raise cfg.error(s, "r", str(exc)) from exc
        oracle = radial_capacity(dim, p, r, R)
    elif kind == "cube-annulus":
        rho = cfg.get(s, "rho", float)
        try:
            cond = cube_condenser(dim, p, rho, grid_n, cfg.get(s, "half_edge", float, 1.0),
                                  cfg.get(s, "annulus_ratio", float, 1.5))
        except (ValueError, GeometryError) as exc:
            raise cfg.error(s, "rho", str(exc)) from exc
    else:
        raise cfg.error(s, "kind", f"unknown condenser kind {kind!r}; expected empty, concentric-balls or cube-annulus")
    res = p_capacity(cond, settings)
    out = {"value": res.value, "iterations": res.iterations, "energy_residual": res.energy_residual,
           "eps": res.eps, "kind": kind, "p": p, "dim": dim, "grid_n": grid_n}
    passed = True
    if oracle is not None:
        tol = cfg.get(s, "oracle_tolerance", float, 0.02)
        rel = res.value / oracle - 1
        passed = abs(rel) <= tol
        out.update(radial_oracle=oracle, relative_error=rel, oracle_tolerance=tol)
        radii = np.linspace(r, R, 33)
        run.csv("radial_oracle.csv", ["radius", "potential", "capacity"],
                [[s, u, oracle] for s, u in zip(radii, radial_profile(dim, p, r, R, radii))])
    out["passed"] = passed
    run.json("capacity.json", out)
    run.csv("capacity.csv", ["value", "iterations", "energy_residual", "oracle"],
            [[res.value, res.iterations, res.energy_residual, oracle if oracle is not None else float("nan")]])
    return passed


def _profile_from_config(run: Run) -> CapacityProfile:
    cfg = run.cfg
    s = "profile"
    if cfg.has(s, "csv"):
        path = Path(cfg.get(s, "csv"))
        if not path.is_absolute() and cfg.path is not None:
            path = cfg.path.parent / path
        try:
            rows = list(csv.DictReader(path.open()))
        except OSError as exc:
            raise cfg.error(s, "csv", f"cannot read {path}: {exc}") from exc
        run.add_input(path)
        scales = [float(r["scale"]) for r in rows]
        deltas = [float(r["delta"]) for r in rows]
    elif cfg.has(s, "deltas"):
        deltas = cfg.floats(s, "deltas")
        if cfg.has(s, "scales"):
            scales = cfg.floats(s, "scales")
        else:
            ratio = cfg.get(s, "ratio", float, 0.5)
            scales = [ratio ** (j + 1) for j in range(len(deltas))]
        if len(scales) != len(deltas):
            raise cfg.error(s, "deltas", "scales and deltas differ in length")
    else:
        domain, _ = _domain(cfg)
        p, dim = _structure(cfg, domain.dim)
        x_o = _point(cfg, dim)
        try:
            return capacity_profile(domain, x_o, p, cfg.get(s, "num_scales", int, 5), cfg.capacity(),
                                    rho_max=cfg.get(s, "rho_max", parse_optional_float, None),
                                    ratio=cfg.get(s, "ratio", float, 0.5),
                                    rho_ref=cfg.get(s, "rho_ref", parse_optional_float, None),
                                    annulus_ratio=cfg.get("capacity", "annulus_ratio", float, 1.5),
                                    workers=run.args.workers)
        except UnresolvableScale as exc:
            raise cfg.error(s, "rho_max", str(exc)) from exc
    try:
        return CapacityProfile.from_deltas(scales, deltas, cfg.get(s, "ratio", float, 0.5),
                                           cfg.get(s, "rho_ref", parse_optional_float, None))
    except ValueError as exc:
        raise cfg.error(s, "scales", str(exc)) from exc


def cmd_delta_profile(run: Run) -> bool:
    prof = _profile_from_config(run)
    prof.to_csv(run.path("profile.csv"))
    run.json("profile.json", {"gamma_o": prof.gamma_o, "rho_bar": prof.rho_bar, "x_o": list(prof.x_o),
                              "p": prof.p, "gaps": {str(k): v for k, v in prof.gaps.items()}})
    run.svg("profile.svg", [("delta", prof.scales, prof.deltas)], "capacity ratio", "rho", "delta", logx=True)
    return True


def cmd_qo(run: Run) -> bool:
    a = run.args
    if run.cfg is not None:
        p, dim = _structure(run.cfg)
        params = _harnack(run.cfg, p, dim)
    else:
        if a.p is None or a.dim is None:
            raise ConfigError("qo needs --config or both --p and --dim")
        try:
            params = qo_exponent(a.p, a.dim, a.r, "user" if a.d is not None else "prototype", a.d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    run.json("qo.json", params.as_dict())
    print(json.dumps(_jsonable(params.as_dict()), sort_keys=True))
    return True


def cmd_wiener(run: Run) -> bool:
    cfg = run.cfg
    prof = _profile_from_config(run)
    dim = cfg.get("structure", "dim", int, len(prof.x_o) or 2)
    p = cfg.get("structure", "p", float)
    params = _harnack(cfg, p, dim)
    w = "wiener"
    rep = modulus_and_reference(prof, params.q_o, cfg.get(w, "alpha", float, 1.0),
                                cfg.get(w, "c", float, DEFAULT.c_default), cfg.get(w, "omega_o", float, 1.0),
                                p, cfg.get(w, "t_o", float, 0.0), params)
    rep.to_csv(run.path("wiener.csv"))
    run.json("wiener.json", rep.summary())
    run.svg("wiener.svg", [("modulus", rep.scales, rep.moduli), ("delta", rep.scales, prof.deltas)],
            "Wiener modulus", "rho", "value", logx=True)
    return True


def cmd_solve(run: Run) -> bool:
    cfg = run.cfg
    domain, _ = _domain(cfg)
    p, _ = _structure(cfg, domain.dim)
    s = "solve"
    T = cfg.get(s, "T", float)
    anchors = cfg.floats(s, "anchors", [])
    initial = None
    init_kind = cfg.get(s, "initial", str, "datum")
    if init_kind == "random":
        rng = np.random.default_rng(run.args.seed)
        lo, hi = cfg.floats(s, "random_range", [0.0, 1.0])
        initial = rng.uniform(lo, hi, domain.shape)
    elif init_kind == "zero":
        initial = np.zeros(domain.shape)
    elif init_kind != "datum":
        raise cfg.error(s, "initial", f"unknown initial kind {init_kind!r}; expected datum, zero or random")
    traj = solve_cauchy_dirichlet(domain, _flux_model(cfg), p, T, cfg.solver(), initial=initial, anchors=anchors)
    traj.save(run.path("trajectory.bin"))
    traj.export_slice(run.path("final_slice.csv"), traj.T)
    sups = [float(np.abs(f[domain.inside]).max()) for f in traj.fields]
    run.csv("sup_norm.csv", ["t", "sup_abs_u"], zip(traj.times, sups))
    run.json("solve.json", {"T": traj.T, "stored_times": len(traj.times), "steps": len(traj.step_times) - 1,
                            "eps": traj.eps, "h": traj.h, "sup_abs_final": sups[-1],
                            "max_u": max(float(f.max()) for f in traj.fields),
                            "min_u": min(float(f.min()) for f in traj.fields)})
    run.svg("sup_norm.svg", [("sup |u|", traj.times, sups)], "sup norm", "t", "sup |u|")
    return True


def cmd_verify(run: Run) -> bool:
    exp = _experiment(run.cfg, run.args.workers)
    try:
        rep = verify_boundary_decay(exp)
    except PreconditionError as exc:
        raise run.cfg.error("point", "x_o", str(exc)) from exc
    rep.to_csv(run.path("verify.csv"))
    rep.to_json(run.path("verify.json"))
    rho = [r["rho"] for r in rep.rows]
    run.svg("verify.svg", [("measured omega", rho, [r["omega"] for r in rep.rows]),
                           ("fitted bound", rho, [r["bound"] for r in rep.rows])],
            "boundary oscillation decay", "rho", "omega", logx=True, logy=True)
    print(f"gamma_fit={rep.gamma_fit:.4g} correlation={rep.fit.correlation:.4f} "
          f"scales={rep.fit.n} status={rep.status} passed={rep.passed}")
    return rep.passed


def cmd_harnack_check(run: Run) -> bool:
    cfg = run.cfg
    aux = _aux(cfg)
    params = _harnack(cfg, aux.p, aux.dim)
    c = cfg.get("check", "c", float, DEFAULT.c_default)
    rhos = cfg.floats("check", "scales", [aux.rho, 0.75 * aux.rho, 0.5 * aux.rho])
    levels = {"coarse": aux, "fine": aux.refined()} if cfg.get("check", "refine", parse_bool, True) else {"coarse": aux}
    rows, lows, l1 = [], {}, {}
    for name, a in levels.items():
        reps = harnack_sweep(a, rhos, params, c)
        for r in reps:
            rows.append([name, a.grid_n, r.rho, r.theta, r.sigma, r.inf, r.sup, r.ratio, int(r.vacuous)])
        finite = [r.ratio for r in reps if not r.vacuous]
        lows[name] = min(finite) if finite else math.inf
        l1[name] = l1_harnack_sweep(a)
    run.csv("harnack_type.csv", ["level", "grid_n", "rho", "theta", "sigma", "inf", "sup", "ratio", "vacuous"], rows)
    run.csv("l1_harnack.csv", ["level", "rho", "s1", "t1", "gamma_min"],
            [[name, *ch, g] for name, rep in l1.items() for ch, g in zip(rep.choices, rep.gammas)])
    summary: Dict[str, Any] = {"harnack_params": params.as_dict(), "c": c,
                               "harnack_lower_bound": lows,
                               "l1_gamma_fit": {k: v.gamma_fit for k, v in l1.items()}}
    summary["l1_window_spread"] = {k: v.window_spread for k, v in l1.items()}
    passed = all(v > 0 for v in lows.values()) and all(v.gamma_fit > 0 for v in l1.values())
    passed &= all(v.window_spread <= DEFAULT.window_spread for v in l1.values())
    if len(levels) == 2:
        summary["harnack_drift"] = refinement_drift(lows["coarse"], lows["fine"])
        summary["l1_drift"] = refinement_drift(l1["coarse"].gamma_fit, l1["fine"].gamma_fit)
        passed &= summary["harnack_drift"] < DEFAULT.stability_factor
        passed &= summary["l1_drift"] < DEFAULT.stability_factor
    summary["passed"] = bool(passed)
    run.json("harnack.json", summary)
    return bool(passed)


def cmd_extinction_check(run: Run) -> bool:
    cfg = run.cfg
    aux = _aux(cfg)
    coarse = check_extinction_window(aux)
    reports = {"coarse": coarse}
    if cfg.get("check", "refine", parse_bool, True):
        reports["fine"] = check_extinction_window(aux.refined(), kappa=coarse.kappa)
    rows = []
    for name, rep in reports.items():
        rows += [[name, t, s, a] for t, s, a in zip(rep.times, rep.sup_norms, rep.averages)]
    run.csv("extinction.csv", ["level", "t", "sup_u", "avg_K4rho"], rows)
    summary = {name: {"t_ext": r.t_ext, "horizon": r.horizon, "intrinsic_time": r.intrinsic_time,
                      "ratio": r.ratio, "kappa": r.kappa, "fraction": r.fraction, "gamma_fit": r.gamma_fit}
               for name, r in reports.items()}
    passed = all(r.extinct and r.fraction > 0 for r in reports.values())
    if "fine" in reports:
        summary["drift"] = refinement_drift(coarse.fraction, reports["fine"].fraction)
        passed &= summary["drift"] < DEFAULT.stability_factor
    summary["passed"] = bool(passed)
    run.json("extinction.json", summary)
    run.svg("extinction.svg", [(f"sup u ({n})", r.times, r.sup_norms) for n, r in reports.items()],
            "extinction", "t", "sup u", logy=True)
    return bool(passed)


COMMANDS: Dict[str, Callable[[Run], bool]] = {
    "capacity": cmd_capacity,
    "delta-profile": cmd_delta_profile,
    "qo": cmd_qo,
    "wiener": cmd_wiener,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "harnack-check": cmd_harnack_check,
    "extinction-check": cmd_extinction_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--out-dir", type=Path, default=Path("wienerlab-out"), help="output directory")
    common.add_argument("--workers", type=int, default=None,
                        help=f"parallel workers (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--seed", type=int, default=0, help="seed for random initial data")
    common.add_argument("--svg", action="store_true", help="also write SVG line charts")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="wienerlab", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "qo":
            sp.add_argument("--p", type=float)
            sp.add_argument("--dim", type=int)
            sp.add_argument("--r", type=float)
            sp.add_argument("--d", type=float, help="user-supplied d (default: prototype formula)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        try:
            args.workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            print(f"error: ${WORKERS_ENV} must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        cfg = Config.load(args.config) if args.config else None
        if cfg is None and args.command != "qo":
            raise ConfigError(f"{args.command} needs --config")
        if cfg is not None and cfg.kind != args.command:
            raise cfg.error("run", "kind", f"config is for {cfg.kind!r}, not {args.command!r}")
        run = Run(args.command, cfg, args.out_dir, args)
        passed = COMMANDS[args.command](run)
        run.manifest(passed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, CapacityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GeometryError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if passed else EXIT_FAIL


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
