"""Shared fixtures.  Expensive PDE runs are cached for the whole session so
that module tests and the acceptance suite reuse the same trajectories."""
from __future__ import annotations

import functools
from pathlib import Path

import numpy as np
import pytest

from wienerlab.capacity import capacity_profile
from wienerlab.geometry import build_domain
from wienerlab.pde import FluxModel, SolverSettings, solve_cauchy_dirichlet
from wienerlab.verify import AuxConfig, ExperimentConfig, run_experiment

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "wienerlab" / "configs"

FAR_DATUM = {"kind": "far-field", "value": 1.0, "center": [0.0, 0.0], "radius": 0.75, "width": 0.2}

GEOMETRIES = {
    "half-space": {"kind": "half-space", "dim": 2, "half_edge": 1.0},
    "spike": {"kind": "spike", "dim": 2, "half_edge": 1.0, "beta": 1.8, "length": 0.5},
    "exterior-ball": {"kind": "union", "dim": 2, "half_edge": 1.0, "invert": True,
                      "shapes": [{"shape": "ball", "center": [0.5, 0.0], "size": 0.5}]},
}


def experiment(name: str, grid_n: int, **kw) -> ExperimentConfig:
    dom = dict(GEOMETRIES[name], grid_n=grid_n)
    base = dict(domain=dom, x_o=(0.0, 0.0), datum=FAR_DATUM, t_o=1.0, R_o=0.5, num_scales=4, name=name)
    base.update(kw)
    return ExperimentConfig(**base)


@functools.lru_cache(maxsize=None)
def decay_run(name: str, grid_n: int):
    """(config, trajectory, capacity profile) of a boundary-decay experiment."""
    cfg = experiment(name, grid_n)
    domain = cfg.build()
    traj = run_experiment(cfg, domain)
    profile = capacity_profile(domain, cfg.x_o, cfg.p, cfg.num_scales, cfg.capacity,
                               rho_max=cfg.scales[0], rho_ref=cfg.R_o)
    return cfg, traj, profile


@functools.lru_cache(maxsize=None)
def aux_run(grid_n: int, amplitude: float = 1.0):
    """Auxiliary problem run over the full horizon (for extinction checks)."""
    aux = AuxConfig(grid_n=grid_n, amplitude=amplitude)
    if grid_n != 64:
        base = AuxConfig(grid_n=64, amplitude=amplitude)
        while base.grid_n < grid_n:
            base = base.refined()
        aux = base
    traj, t_int, avg = aux.run()
    return aux, traj, t_int, avg


@pytest.fixture(scope="session")
def decay():
    return decay_run


@pytest.fixture(scope="session")
def aux():
    return aux_run


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


# ---- solver verification runs shared with the acceptance suite

MMS_P = 4 / 3
MMS_LEVELS = ((16, 0.04), (32, 0.02), (64, 0.01))


def mms_exact(x, t):
    return np.exp(2 * t) * (x[0] + 0.5 * np.sin(2 * x[1])) + 3 * x[0]


def mms_source(x, t):
    """u_t - div(|Du|^(p-2) Du) for ``mms_exact``, written out by hand:
    div(|Du|^(p-2) Du) = |Du|^(p-2) (lap u + (p-2) Du.D2u.Du / |Du|^2)."""
    p = MMS_P
    e = np.exp(2 * t)
    ut = 2 * e * (x[0] + 0.5 * np.sin(2 * x[1]))
    g1 = e + 3 + 0 * x[0]
    g2 = e * np.cos(2 * x[1])
    h22 = -2 * e * np.sin(2 * x[1])
    q = g1 ** 2 + g2 ** 2
    return ut - q ** ((p - 2) / 2) * (h22 + (p - 2) * g2 * h22 * g2 / q)


@functools.lru_cache(maxsize=None)
def mms_errors():
    errs = []
    for n, dt in MMS_LEVELS:
        dom = build_domain({"kind": "full-cube", "dim": 2, "grid_n": n, "half_edge": 1.0})
        cfg = SolverSettings(dt0=dt, dt_max=dt, dt_growth=1.0, tol=1e-11)
        tr = solve_cauchy_dirichlet(dom, FluxModel(), MMS_P, 0.4, cfg, g=mms_exact, initial=mms_exact,
                                    source=mms_source)
        x = dom.coords()
        errs.append(max(float(np.abs(f - mms_exact(x, t)).max()) for f, t in zip(tr.fields, tr.times)))
    return tuple(errs)


COMPARISON_GEOMETRIES = {
    "half-space": {"kind": "half-space", "dim": 2, "grid_n": 32},
    "spike": {"kind": "spike", "dim": 2, "grid_n": 32, "beta": 1.8, "length": 0.5},
}


@functools.lru_cache(maxsize=None)
def comparison_violation(name: str, pairs: int = 20, seed: int = 0) -> float:
    """Largest ``u1 - u2`` over ``pairs`` random ordered data pairs ``g1 <= g2``."""
    dom = build_domain(COMPARISON_GEOMETRIES[name])
    rng = np.random.default_rng(seed)
    cfg = SolverSettings(dt0=1e-3, dt_max=1e-2, tol=1e-11)
    worst = -np.inf
    for _ in range(pairs):
        a0, a1, a2 = rng.uniform(-1, 1), rng.uniform(0, 0.5), rng.uniform(-0.5, 0.5)
        shift, phase, kx = rng.uniform(0, 0.3), rng.uniform(0, 2 * np.pi), rng.uniform(1, 8)

        def g1(x, t, a0=a0, a1=a1, a2=a2, kx=kx):
            return a0 + a1 * np.sin(kx * x[0] + 5 * t) * np.cos(2 * x[1]) + a2 * x[1] ** 2

        def g2(x, t, g1=g1, shift=shift, phase=phase):
            return g1(x, t) + shift * (1 + np.sin(7 * x[0] * x[1] + phase)) / 2

        t1 = solve_cauchy_dirichlet(dom, FluxModel(), 4 / 3, 0.1, cfg, g=g1)
        t2 = solve_cauchy_dirichlet(dom, FluxModel(), 4 / 3, 0.1, cfg, g=g2)
        worst = max(worst, max(float((f1 - f2).max()) for f1, f2 in zip(t1.fields, t2.fields)))
    return worst


@pytest.fixture(scope="session")
def mms():
    return mms_errors


@pytest.fixture(scope="session")
def comparison():
    return comparison_violation
