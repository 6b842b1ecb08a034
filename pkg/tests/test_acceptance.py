"""Acceptance criteria, one test per criterion.  Each test prints a single
``criterion N: PASS|FAIL`` line with the measured numbers."""
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import (COMPARISON_GEOMETRIES, CONFIG_DIR, decay_run, experiment, mms_errors)
from wienerlab.capacity import CapacityProfile, ball_condenser, cube_condenser, p_capacity
from wienerlab.cli import main
from wienerlab.criteria import DEFAULT
from wienerlab.geometry import build_datum, build_domain
from wienerlab.oracles import radial_capacity
from wienerlab.pde import FluxModel, solve_cauchy_dirichlet
from wienerlab.verify import check_pfat_holder, run_experiment, verify_boundary_decay
from wienerlab.wiener import AdmissibilityError, qo_exponent, wiener_integral


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


@pytest.mark.parametrize("N,p", [(2, 1.2), (2, 1.3), (3, 1.4), (3, 1.5)])
def test_criterion_1_capacity_oracle(report, N, p):
    t0 = time.perf_counter()
    value = p_capacity(ball_condenser(N, p, 0.25, 0.75, 128)).value
    elapsed = time.perf_counter() - t0
    rel = value / radial_capacity(N, p, 0.25, 0.75) - 1
    assert report(1, abs(rel) < 0.02 and elapsed < 60,
                  f"N={N} p={p}: relative error {rel:+.4f}, {elapsed:.1f} s")


def test_criterion_2_capacity_scaling(report):
    N, p = 2, 1.3
    expected = 0.5 ** (N - p)
    a = p_capacity(cube_condenser(N, p, 0.5, 128)).value
    b = p_capacity(cube_condenser(N, p, 0.25, 128)).value
    rel = (b / a) / expected - 1
    assert expected == pytest.approx(0.6156, abs=1e-4)
    assert report(2, abs(rel) < 0.03, f"ratio {b / a:.4f} vs {expected:.4f} ({rel:+.4f})")


def test_criterion_3_wiener_exactness(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 16))
        deltas = rng.uniform(0, 1, n)
        q = float(rng.uniform(0.5, 10))
        prof = CapacityProfile.from_deltas([0.5 ** (j + 1) for j in range(n)], list(deltas), 0.5, 1.0)
        # each dyadic piece [2^-(j+1), 2^-j) contributes delta_j^q ln 2
        exact = float(np.sum(deltas ** q) * math.log(2))
        got = wiener_integral(prof, q, 0.5 ** n)
        worst = max(worst, abs(got / exact - 1))
    assert report(3, worst < 1e-12, f"max relative error {worst:.2e} over 200 random profiles")


def test_criterion_4_qo_arithmetic(report):
    par = qo_exponent(4 / 3, 2, r=2)
    got = (par.lambda_r, par.d, par.q_o)
    ok = np.allclose(got, (4 / 3, 1.75, 8.25), rtol=0, atol=1e-12)
    with pytest.raises(AdmissibilityError):
        qo_exponent(4 / 3, 2, r=1)
    assert report(4, ok, f"(lambda_r, d, q_o) = {got}; r=1 rejected")


def test_criterion_5_solver_verification(report):
    errs = np.asarray(mms_errors())
    orders = np.log2(errs[:-1] / errs[1:])
    dom = build_domain({"kind": "half-space", "dim": 2, "grid_n": 32}, build_datum({"kind": "constant", "value": 0.7}))
    tr = solve_cauchy_dirichlet(dom, FluxModel(), 4 / 3, 0.05)
    const_err = max(float(np.abs(f - 0.7).max()) for f in tr.fields)
    from conftest import comparison_violation
    viol = {name: comparison_violation(name, pairs=20) for name in COMPARISON_GEOMETRIES}
    ok = bool((np.diff(errs) < 0).all() and (orders >= 1).all() and const_err < 1e-10
              and all(v <= DEFAULT.comparison_tolerance for v in viol.values()))
    assert report(5, ok, f"MMS errors {np.round(errs, 6).tolist()} orders {np.round(orders, 2).tolist()}; "
                         f"constant drift {const_err:.1e}; comparison max(u1-u2) {viol}")


def _cli(tmp_path, command, config):
    out = tmp_path / command
    code = main([command, "--config", str(CONFIG_DIR / config), "--out-dir", str(out)])
    return code, out


def test_criterion_6_finite_extinction(report, tmp_path):
    code, out = _cli(tmp_path, "extinction-check", "extinction.ini")
    s = json.loads((out / "extinction.json").read_text())
    ok = (code == 0 and all(s[k]["t_ext"] is not None and s[k]["t_ext"] <= s[k]["horizon"]
                            and s[k]["fraction"] > 0 for k in ("coarse", "fine"))
          and s["drift"] < DEFAULT.stability_factor)
    assert report(6, ok, f"extinction ratios {s['coarse']['ratio']:.3f}/{s['fine']['ratio']:.3f}; "
                         f"fractions {s['coarse']['fraction']:.4f}/{s['fine']['fraction']:.4f}; "
                         f"drift {s['drift']:.3f}")


def test_criterion_7_harnack_constants(report, tmp_path):
    code, out = _cli(tmp_path, "harnack-check", "harnack.ini")
    s = json.loads((out / "harnack.json").read_text())
    lows, l1 = s["harnack_lower_bound"], s["l1_gamma_fit"]
    ok = (code == 0 and all(0 < v < math.inf for v in lows.values()) and all(v > 0 for v in l1.values())
          and s["harnack_drift"] < DEFAULT.stability_factor and s["l1_drift"] < DEFAULT.stability_factor)
    assert report(7, ok, f"Harnack-type lower bound {lows} drift {s['harnack_drift']:.3f}; "
                         f"L1 gamma {l1} drift {s['l1_drift']:.4f}")


@pytest.mark.parametrize("name", ["spike", "half-space"])
def test_criterion_8_main_decay(report, name):
    t0 = time.perf_counter()
    cfg, tr, prof = decay_run(name, 256)
    rep = verify_boundary_decay(cfg, tr, prof)
    elapsed = time.perf_counter() - t0
    used = sum(1 for r in rep.rows if r["resolvable"])
    corr = rep.fit.correlation
    ok = rep.gamma_fit > 0 and corr >= 0.9 and used >= 4 and elapsed < 1800
    assert report(8, ok, f"{name}: gamma_fit {rep.gamma_fit:.3f}, correlation {corr:.4f}, "
                         f"{used} scales, {elapsed:.0f} s")


@pytest.mark.parametrize("name", ["half-space", "exterior-ball"])
def test_criterion_9_pfat_holder(report, name):
    cfg, tr, prof = decay_run(name, 128)
    rep = check_pfat_holder(cfg, tr, prof)
    ok = rep.alpha_fit > 0 and rep.fit.correlation >= 0.9
    assert report(9, ok, f"{name}: alpha_fit {rep.alpha_fit:.3f}, correlation {rep.fit.correlation:.4f}")


def test_criterion_10_future_independence(report):
    cfg, tr, prof = decay_run("spike", 128)
    longer = replace(cfg, T=cfg.t_o + 0.5)
    rep_a = verify_boundary_decay(cfg, tr, prof)
    rep_b = verify_boundary_decay(longer, run_experiment(longer), prof)
    keys = [k for k in rep_a.rows[0]]
    same = all(ra[k] == rb[k] or (isinstance(ra[k], float) and math.isnan(ra[k]) and math.isnan(rb[k]))
               for ra, rb in zip(rep_a.rows, rep_b.rows) for k in keys)
    same &= rep_a.gamma_fit == rep_b.gamma_fit and len(rep_a.rows) == len(rep_b.rows)
    assert report(10, same, f"T={cfg.t_o} vs T={longer.T}: {len(rep_a.rows)} rows x {len(keys)} columns "
                            f"bit-identical={same}")
