"""Acceptance criteria, one printed PASS/FAIL line per criterion.

The heavy criteria (spatial and temporal convergence, packed bed) take
several minutes each on one core. Tolerances are the required ones and are
not adjusted to force a pass.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vansfem.errors import NonConvergenceError
from vansfem.mms import (TRANSIENT_VISCOSITY, fit_order, get_case, make_problem, run_convergence_study, run_transient,
                         solve_steady_case)
from vansfem.packedbed import BedConfig, generate_packing, run_bed_case, run_bed_sweep, wen_yu_umf
from vansfem.solver import continuity_cell_integrals
from vansfem.stepdemo import compare_graddiv

TESTS = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return _report


@pytest.fixture(scope="module")
def bed():
    cfg = BedConfig()
    return cfg, generate_packing(cfg)


# -- 1 ---------------------------------------------------------------------

@pytest.mark.slow
def test_mms_spatial_convergence(report):
    start = time.perf_counter()
    lines, ok = [], True
    for case, form in ((1, "B"), (1, "A"), (2, "B")):
        for k in (1, 2):
            try:
                table = run_convergence_study(case, form, k, meshes=(16, 32, 64))
            except NonConvergenceError as exc:
                ok = False
                lines.append(f"case {case}{form} Q{k}: no convergence ({exc})")
                continue
            vel, pres = fit_order(table)
            good = abs(vel - (k + 1)) <= 0.2 and pres >= k + 0.8
            ok &= good
            lines.append(f"case {case}{form} Q{k}: u {vel:.2f} p {pres:.2f}{'' if good else ' !'}")
    minutes = (time.perf_counter() - start) / 60
    assert report(1, "MMS spatial orders", ok, "; ".join(lines) + f"; {minutes:.1f} min")


# -- 2 ---------------------------------------------------------------------

@pytest.mark.slow
def test_mms_temporal_convergence(report):
    orders = {}
    for bdf in (1, 2):
        table = run_convergence_study(3, "B", 2, dts=(0.1, 0.05, 0.025), bdf_order=bdf, temporal_mesh=48)
        orders[bdf] = fit_order(table)[0]
    ok = abs(orders[1] - 1.0) <= 0.15 and abs(orders[2] - 2.0) <= 0.2
    assert report(2, "MMS temporal orders", ok, f"BDF1 {orders[1]:.3f}, BDF2 {orders[2]:.3f}")


# -- 3 ---------------------------------------------------------------------

def test_steady_global_mass_conservation(report):
    worst = 0.0
    for case, form in ((1, "B"), (1, "A"), (2, "B")):
        problem, state, _ = solve_steady_case(case, form, 16, 1, tolerance=1e-10, max_iterations=30)
        worst = max(worst, abs(continuity_cell_integrals(problem, state).sum()))
    assert report(3, "steady global mass", worst <= 1e-9, f"max |global| {worst:.2e} <= 1e-9")


# -- 4 ---------------------------------------------------------------------

def test_transient_global_mass_conservation(report):
    problem = make_problem(3, "B", 16, 2, nu=TRANSIENT_VISCOSITY, dt=0.01, tolerance=1e-10)
    values = []
    run_transient(problem, get_case(3), 0.2,
                  callback=lambda st: values.append(abs(continuity_cell_integrals(problem, st).sum())))
    worst = max(values)
    assert report(4, "transient global mass", worst <= 1e-5, f"max per-step |global| {worst:.2e} over 20 steps")


# -- 5 ---------------------------------------------------------------------

def test_minimum_fluidization_velocity(report):
    umf, _ = wen_yu_umf(1.0, 2500.0, 1e-3, 1e-5)
    assert report(5, "U_mf", abs(umf - 0.718) <= 1e-3, f"{umf:.4f} m/s")


# -- 6 ---------------------------------------------------------------------

@pytest.mark.slow
def test_packed_bed_pressure_drop(report, bed):
    cfg, particles = bed
    lines, ok = [], True
    sweeps = {}
    for form, drag in (("B", "difelice"), ("B", "rong"), ("A", "difelice")):
        rep = run_bed_sweep(cfg, particles, form=form, drag_model=drag)
        sweeps[form, drag] = rep
        ratios = [r.dp_sim / r.dp_ergun for r in rep.rows]
        conv = all(r.converged for r in rep.rows)
        if form == "B":
            good = conv and rep.monotone and all(abs(q - 1) <= 0.25 for q in ratios)
            ok &= good
            lines.append(f"{drag}: dp/Ergun " + ",".join(f"{q:.3f}" for q in ratios)
                         + f" monotone={rep.monotone}")
    a = sweeps["A", "difelice"].rows
    b = sweeps["B", "difelice"].rows
    ab = [ra.dp_sim / rb.dp_sim for ra, rb in zip(a, b)]
    ok &= all(abs(q - 1) <= 0.10 for q in ab)
    lines.append("A/B " + ",".join(f"{q:.3f}" for q in ab))
    re_max = max(r.re_bed for r in b)
    assert report(6, "packed-bed pressure drop", ok, "; ".join(lines) + f"; Re_bed up to {re_max:.0f}")


# -- 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_bounding_raises_mass_source(report, bed):
    cfg, particles = bed
    free = run_bed_case(cfg, particles, 0.1, bound=False)
    bounded = run_bed_case(cfg, particles, 0.1, bound=True)
    eps = bounded.problem.void_fraction_field
    ratio = bounded.mass_global / max(free.mass_global, 1e-300)
    ok = ratio >= 10.0 and 1e-8 <= bounded.mass_global <= 1e-4
    assert report(7, "bounding mass-source diagnostic", ok,
                  f"global unbounded {free.mass_global:.2e}, bounded {bounded.mass_global:.2e}, "
                  f"ratio {ratio:.2f}; projected eps range [{eps.nodal_values.min():.3f}, "
                  f"{eps.nodal_values.max():.3f}]")


# -- 8 ---------------------------------------------------------------------

def test_graddiv_step_demo(report):
    off, on = compare_graddiv(n_cells=32, nu=0.01)
    reduced = on.overshoot <= 0.5 * off.overshoot
    ok = off.converged and on.converged and on.continuity_l2 < off.continuity_l2 and reduced
    assert report(8, "grad-div step demo", ok,
                  f"continuity L2 {off.continuity_l2:.3f} -> {on.continuity_l2:.3f}, "
                  f"overshoot {off.overshoot:.4f} -> {on.overshoot:.4f}")


# -- 9 ---------------------------------------------------------------------

PROPERTY_TESTS = [
    "test_drag.py::test_form_conversion",
    "test_drag.py::test_models_coincide_at_unit_void_fraction",
    "test_solver.py::test_jacobian_matches_finite_differences",
    "test_mms.py::test_sources_match_operator_oracle",
    "test_voidfraction.py::test_projection_preserves_integral",
    "test_voidfraction.py::test_bounded_projection_kkt",
    "test_voidfraction.py::test_bounded_projection_matches_brute_force_enumeration",
    "test_fem.py::test_gauss_rule_monomial_exactness",
]


def test_property_suites(report):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(TESTS / t) for t in PROPERTY_TESTS]],
                          capture_output=True, text=True, cwd=TESTS.parent)
    seconds = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and seconds < 120
    assert report(9, "property suites", ok, f"{summary.strip('= ')}; {seconds:.0f} s")
