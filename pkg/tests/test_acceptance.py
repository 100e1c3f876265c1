"""Acceptance criteria, one test per criterion (criterion 6 has two parts).

Each test records a PASS/FAIL line, printed in the terminal summary, before
asserting.  Runtimes are part of each criterion and are checked too.
"""
import math
import time

import mpmath
import numpy as np
import pytest

from conftest import icosphere
from warp_harmonic.bubbles import (EpsilonPolicy, detect_concentration, energy_identity_defect, extract_bubble,
                                   identity_family, neck_oscillation, pinned_winds_family, single_bubble_map,
                                   ConcentrationPoint)
from warp_harmonic.energy import DiscreteMap, alpha_energy, energy, energy_and_gradient
from warp_harmonic.solver import SolveOptions, alpha_sweep, init_neck, minimize
from warp_harmonic.spectrum import accumulation_report, critical_points, verify_harmonic_root
from warp_harmonic.spheremesh import NORTH, build_log_polar_mesh, geodesic_distance, stereographic
from warp_harmonic.warpgeom import ledger, make_spectrum_warp, make_tube_warp, tube_psi0

TUBE = make_tube_warp(0.3)
SPEC = make_spectrum_warp(1.0)
PSI0 = TUBE.psi0
Q = 4 * math.pi * PSI0
T1 = float(critical_points(1, 128)[0])


# --- 1 ----------------------------------------------------------------------

def identity_energy(level, warp, t0):
    m = icosphere(level)
    return energy(DiscreteMap(m, m.vertices, np.full(m.n_vertices, t0)), warp).total_E


def test_c01_identity_energy(record):
    cases = [(TUBE, 0.0), (SPEC, 0.0), (SPEC, T1)]
    icosphere(6)
    ok, parts, worst_time = True, [], 0.0
    for warp, t0 in cases:
        exact = 4 * math.pi * float(warp(np.array(t0)))
        errs = []
        for L in (5, 6):
            t = time.perf_counter()
            errs.append(abs(identity_energy(L, warp, t0) - exact) / exact)
            worst_time = max(worst_time, time.perf_counter() - t)
        order = math.log2(errs[0] / errs[1])
        ok &= errs[0] < 1e-2 and errs[1] < 3e-3 and 1.7 <= order <= 2.3
        parts.append(f"{warp.kind}(t0={t0:.4f}) err5={errs[0]:.2e} err6={errs[1]:.2e} order={order:.3f}")
    ok &= worst_time < 10
    record("1 identity energy", ok, "; ".join(parts) + f"; max eval {worst_time:.2f}s")
    assert ok


# --- 2 ----------------------------------------------------------------------

def test_c02_gradient_exactness(record):
    m = icosphere(3)
    t = time.perf_counter()
    worst = 0.0
    for alpha in (1.0, 1.05, 1.2):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            u = DiscreteMap.projected(m, m.vertices + 0.4 * rng.normal(size=m.vertices.shape),
                                      0.3 * rng.uniform(-1, 1, m.n_vertices))
            dv, df = rng.normal(size=u.v.shape), rng.normal(size=u.f.shape)
            _, gv, gf = energy_and_gradient(u, TUBE, alpha, project=False)
            exact = float(np.sum(gv * dv) + np.sum(gf * df))
            h = 1e-5
            Ep = alpha_energy(DiscreteMap(m, u.v + h * dv, u.f + h * df), TUBE, alpha).total_E_alpha
            Em = alpha_energy(DiscreteMap(m, u.v - h * dv, u.f - h * df), TUBE, alpha).total_E_alpha
            fd = (Ep - Em) / (2 * h)
            worst = max(worst, abs(exact - fd) / abs(fd))
    elapsed = time.perf_counter() - t
    ok = worst < 1e-6 and elapsed < 60
    record("2 gradient exactness", ok, f"300 maps, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# --- 3 ----------------------------------------------------------------------

def confinement_run():
    m = icosphere(5)
    y10 = math.sqrt(3 / (4 * math.pi)) * m.vertices[:, 2]
    u0 = DiscreteMap(m, m.vertices.copy(), 0.25 + 0.1 * y10)
    return minimize(u0, TUBE, 1.0, SolveOptions(max_iters=3000))


def test_c03_confinement(record):
    t = time.perf_counter()
    rep = confinement_run()
    elapsed = time.perf_counter() - t
    fmax = float(np.abs(rep.final_map.f).max())
    rel = rep.final_E / Q - 1
    ok = fmax < 0.02 and abs(rel) < 0.02 and elapsed < 300
    record("3 confinement", ok, f"max|f|={fmax:.2e}, E/(4 pi psi0)-1={rel:+.4f}, "
                                f"converged={rep.converged}, {elapsed:.1f}s")
    assert ok


# --- 4 ----------------------------------------------------------------------

def test_c04_quantization_ledger(record):
    t = time.perf_counter()
    rs = np.random.default_rng(4).uniform(0.05, 0.35, 20)
    holds = [ledger(r, 2 ** 1.5 * r * r).all_hold and ledger(r, tube_psi0(r, "C2")).all_hold for r in rs]
    fails = [not ledger(r, tube_psi0(r, "C2")).all_hold and not ledger(r, 2 ** 1.5 * r * r).all_hold
             for r in (0.352, 0.36, 0.4)]
    elapsed = time.perf_counter() - t
    ok = all(holds) and all(fails) and elapsed < 1
    record("4 quantization ledger", ok, f"{sum(holds)}/20 hold in (0.05, 0.35), "
                                       f"{sum(fails)}/3 fail at r >= 0.352, {elapsed:.2f}s")
    assert ok


# --- 5 ----------------------------------------------------------------------

def test_c05_spectrum(record):
    t = time.perf_counter()
    table = accumulation_report(5, 1.0, 512)
    elapsed = time.perf_counter() - t
    rows = table.rows
    res_ok = all(r.residual < mpmath.mpf(10) ** -100 for r in rows)
    gaps_ok = all(r.gap > 0 for r in rows) and all(b.gap < a.gap for a, b in zip(rows, rows[1:]))
    asym = [abs(float(r.t) * r.k * math.pi - 1) for r in rows if r.k >= 3]
    ok = res_ok and gaps_ok and max(asym) < 0.06 and elapsed < 5
    record("5 spectrum", ok, f"max residual {mpmath.nstr(max(r.residual for r in rows), 3)}, "
                            f"gaps decreasing={gaps_ok}, max |t k pi - 1| (k>=3)={max(asym):.4f}, {elapsed:.2f}s")
    assert ok


# --- 6 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def harmonic_root():
    t = time.perf_counter()
    rep = verify_harmonic_root(T1, 1.0, levels=(4, 5, 6), offset=0.05)
    return rep, time.perf_counter() - t


def test_c06a_residual_refinement(record, harmonic_root):
    rep, elapsed = harmonic_root
    ok = rep.decreasing and elapsed < 120
    record("6a residual halves per level", ok,
           "f-norms " + ", ".join(f"L{L}={n:.3e}" for L, n in zip(rep.levels, rep.root_norms))
           + ", ratios " + ", ".join(f"{r:.3f}" for r in rep.ratios) + f", {elapsed:.1f}s")
    assert ok


def test_c06b_root_separation(record, harmonic_root):
    rep, elapsed = harmonic_root
    ok = rep.separated and elapsed < 120
    record("6b root vs t1+0.05", ok, f"separation {rep.separation:.3e} at level {rep.levels[-1]}")
    assert ok


# --- 7 ----------------------------------------------------------------------

def test_c07_bubble_recovery(record):
    t = time.perf_counter()
    u = single_bubble_map(icosphere(6), 0.02)
    pts = detect_concentration(u, TUBE, EpsilonPolicy.for_warp(TUBE))
    ok = len(pts) == 1
    detail = f"{len(pts)} points"
    if ok:
        dist = geodesic_distance(pts[0].location, NORTH)
        _, e10 = extract_bubble(u, pts[0], TUBE, R=10.0)
        ref = Q * 100 / 101
        elapsed = time.perf_counter() - t
        ok = dist < 0.05 and abs(e10 / ref - 1) < 0.05 and elapsed < 60
        detail += f", distance {dist:.2e}, E(R=10)/ref-1={e10 / ref - 1:+.4f}, {elapsed:.1f}s"
    record("7 bubble recovery", ok, detail)
    assert ok


# --- 8 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def family_mesh():
    return build_log_polar_mesh(-24.0, 6.0, 128)


FAMILY_POLICY = EpsilonPolicy(min_radius=0.01, max_radius=2 * math.atan(0.02))


def test_c08a_identity_family(record, family_mesh):
    t = time.perf_counter()
    fam = identity_family(family_mesh, [1e-4, 1e-5, 1e-6, 1e-7])
    rep = energy_identity_defect([(m.alpha, m.map) for m in fam], TUBE, FAMILY_POLICY)
    elapsed = time.perf_counter() - t
    last = rep.defects[-1] / Q
    ok = abs(last) < 0.05 and "identity-consistent" in rep.flags and elapsed < 300
    record("8a identity-consistent family", ok, f"defects/q " + ", ".join(f"{d / Q:+.4f}" for d in rep.defects)
           + f", flags {rep.flags}, {elapsed:.1f}s")
    assert ok


def winds_family_report(mesh):
    fam = pinned_winds_family(mesh, TUBE, [1, 2, 3, 4])
    return energy_identity_defect([(m.alpha, m.map) for m in fam], TUBE, FAMILY_POLICY)


def test_c08b_winds_family(record, family_mesh):
    t = time.perf_counter()
    rep = winds_family_report(family_mesh)
    elapsed = time.perf_counter() - t
    target = 2 * math.pi * PSI0
    rel = rep.defects[-1] / target - 1
    ok = (abs(rel) < 0.1 and abs(rep.tau_ratio - 2.5) < 0.01 and "tau/quantum non-integer" in rep.flags
          and "defect bounded away from 0" in rep.flags and elapsed < 300)
    record("8b pinned-neck winds family", ok, f"defect/(2 pi psi0)-1={rel:+.4f}, tau/q={rep.tau_ratio:.4f}, "
                                              f"flags {rep.flags}, {elapsed:.1f}s")
    assert ok


# --- 9 ----------------------------------------------------------------------

@pytest.mark.slow
def test_c09_phi_alpha(record):
    alphas = [1.0, 1.01, 1.02, 1.05, 1.1]
    t = time.perf_counter()
    rows = alpha_sweep(1, TUBE, alphas, SolveOptions(seed=0), mesh=icosphere(5))
    elapsed = time.perf_counter() - t
    phi = [r.phi for r in rows]
    mono = all(b >= a * (1 - 0.005) for a, b in zip(phi, phi[1:]))
    cont = abs(phi[1] - phi[0]) < 0.02 * phi[0]
    ok = all(math.isfinite(p) for p in phi) and mono and cont and elapsed < 900
    record("9 phi(alpha)", ok, "phi " + ", ".join(f"{a:g}:{p:.5f}" for a, p in zip(alphas, phi))
           + f", |phi(1.01)-phi(1)|/phi(1)={abs(phi[1] - phi[0]) / phi[0]:.4f}, {elapsed:.0f}s")
    assert ok


# --- 10 ---------------------------------------------------------------------

def test_c10_neck_oscillation(record):
    amp, winds, delta0, R0 = 0.3, 3, 0.05, 40.0
    t = time.perf_counter()
    mesh = build_log_polar_mesh(-22.0, 6.0, 128)
    radii = np.abs(stereographic(mesh.barycenter_directions))
    energies, oscs = [], []
    for G in (1.5, 6.0):
        eps = delta0 * math.exp(-G) / R0
        u = init_neck(mesh, delta0, R0, eps, amp, winds)
        e = energy(u, TUBE).face_energy() * mesh.flat_area
        energies.append(float(e[(radii > R0 * eps) & (radii < delta0)].sum()))
        cp = ConcentrationPoint(NORTH.copy(), [], 1.0 / eps, eps)
        osc = neck_oscillation(u, cp, delta0, region="neck", t_inner=R0 * eps)
        oscs.append(osc.osc_f)
    elapsed = time.perf_counter() - t
    ratio = energies[0] / energies[1]
    ok = ratio >= 3 and min(oscs) >= 0.8 * amp and elapsed < 120
    record("10 neck oscillation", ok, f"annulus energy {energies[0]:.4f} -> {energies[1]:.4f} (x{ratio:.2f}), "
                                      f"osc_f {oscs[0]:.3f}, {oscs[1]:.3f}, {elapsed:.1f}s")
    assert ok


# --- 11 ---------------------------------------------------------------------

def test_c11_determinism(record, family_mesh):
    a, b = confinement_run(), confinement_run()
    same_solve = (a.as_dict(timing=False) == b.as_dict(timing=False)
                  and np.array_equal(a.final_map.v, b.final_map.v) and np.array_equal(a.final_map.f, b.final_map.f))
    r1, r2 = winds_family_report(family_mesh), winds_family_report(family_mesh)
    same_family = r1.to_json() == r2.to_json()
    s1, s2 = accumulation_report(5, 1.0, 512), accumulation_report(5, 1.0, 512)
    same_spec = all(x.t == y.t and x.gap == y.gap for x, y in zip(s1.rows, s2.rows))
    ok = same_solve and same_family and same_spec
    record("11 determinism", ok, f"criterion 3 rerun identical={same_solve}, 8b identical={same_family}, "
                                 f"5 identical={same_spec}")
    assert ok
