"""Projected descent for E_alpha, degree-class initialisers and the neck family.

The descent direction is the H^1 (Sobolev) gradient: the L^2 gradient is
preconditioned with (K + M) (P1 stiffness plus lumped mass), then the
v-part is projected onto the tangent planes of the unit sphere.  Iterates
are retracted by renormalising v, and f is clamped into the warp domain.
"""
from __future__ import annotations

import json
import logging
import math
import time
import weakref
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.linalg import splu

from .energy import DOMAIN_MARGIN, DiscreteMap, MapError, alpha_energy, dual_norm, energy_and_gradient
from .spheremesh import NORTH, TriMesh, chart_homogeneous, from_homogeneous, rotation_to_north, signed_solid_angle
from .warpgeom import WarpFunction

log = logging.getLogger(__name__)

DEGREE_GUARD = 0.2


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 2000
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    step_init: float = 1.0
    step_shrink: float = 0.5
    seed: int = 0
    record_every: int = 10
    method: str = "pgd"          # "pgd" or "cg"
    precondition: bool = True
    min_step: float = 1e-14
    domain_margin: float = DOMAIN_MARGIN

    def __post_init__(self):
        for name in ("max_iters", "grad_tol", "armijo_c", "step_init", "step_shrink", "record_every", "min_step"):
            if not getattr(self, name) > 0:
                raise SolverError(f"{name} must be positive")
        if not (self.armijo_c < 1 and self.step_shrink < 1):
            raise SolverError("armijo_c and step_shrink must lie in (0, 1)")
        if self.method not in ("pgd", "cg"):
            raise SolverError(f"unknown method {self.method!r}")
        if self.seed < 0:
            raise SolverError("seed must be nonnegative")


@dataclass
class IterRecord:
    iter: int
    E_alpha: float
    grad_norm: float
    max_grad: float
    degree: int


@dataclass
class SolveReport:
    iterates: list
    final_map: DiscreteMap
    converged: bool
    wall_time: float
    alpha: float
    n_iters: int
    message: str = ""
    clamped_steps: int = 0
    degree_events: list = field(default_factory=list)
    final_E: float = float("nan")
    final_E_alpha: float = float("nan")
    final_grad_norm: float = float("nan")
    max_gradient: float = float("nan")

    def as_dict(self, timing: bool = True) -> dict:
        d = {
            "alpha": self.alpha, "converged": self.converged, "n_iters": self.n_iters,
            "message": self.message, "clamped_steps": self.clamped_steps,
            "degree_events": self.degree_events, "final_E": self.final_E,
            "final_E_alpha": self.final_E_alpha, "final_grad_norm": self.final_grad_norm,
            "max_gradient": self.max_gradient,
            "iterates": [asdict(r) for r in self.iterates],
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


@dataclass(frozen=True)
class AlphaSchedule:
    alphas: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        object.__setattr__(self, "alphas", a)
        if not a:
            raise SolverError("empty alpha schedule")
        if any(y >= x for x, y in zip(a, a[1:])):
            raise SolverError("alpha schedule must be strictly decreasing")
        if any(x <= 1.0 for x in a[:-1]) or a[-1] < 1.0 or a[0] > 2.0:
            raise SolverError("alphas must exceed 1 (the last may equal 1) and not exceed 2")


# ---------------------------------------------------------------------------
# degree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegreeResult:
    value: int
    raw: float
    distance: float
    ill_resolved: bool

    def __int__(self):
        return self.value


def compute_degree(u: DiscreteMap) -> DegreeResult:
    """Sum of signed solid angles of the image triangles over 4 pi."""
    tri = u.v[u.mesh.faces]
    raw = float(np.sum(signed_solid_angle(tri[:, 0], tri[:, 1], tri[:, 2])) / (4 * math.pi))
    d = int(round(raw))
    dist = abs(raw - d)
    return DegreeResult(d, raw, dist, dist > DEGREE_GUARD)


# ---------------------------------------------------------------------------
# initialisers
# ---------------------------------------------------------------------------

def _chart(mesh: TriMesh, center):
    Q = rotation_to_north(center)
    p, q = chart_homogeneous(mesh.vertices @ Q.T)
    return Q, p, q


def init_degree(mesh: TriMesh, d: int, f0: float = 0.0) -> DiscreteMap:
    """v = S^{-1}(z^d) (z-bar^|d| for d < 0), f = f0."""
    d = int(d)
    if abs(d) > 5:
        raise SolverError("|d| must not exceed 5")
    f = np.full(mesh.n_vertices, float(f0))
    if d == 1:
        return DiscreteMap(mesh, mesh.vertices.copy(), f)
    if d == 0:
        return DiscreteMap(mesh, np.tile([1.0, 0.0, 0.0], (mesh.n_vertices, 1)), f)
    p, q = chart_homogeneous(mesh.vertices)
    if d < 0:
        p, q = np.conj(p), np.conj(q)
    # normalise the homogeneous pair first so high powers cannot overflow
    s = np.sqrt(np.abs(p) ** 2 + np.abs(q) ** 2)
    p, q = p / s, q / s
    return DiscreteMap(mesh, from_homogeneous(p ** abs(d), q ** abs(d)), f)


def smooth_step(x):
    """C-infinity monotone step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)

    def h(y):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)

    a, b = h(x), h(1.0 - x)
    return a / (a + b)


def _as_path(path) -> Callable:
    if callable(path):
        return path
    amp = float(path)
    return lambda s: amp * np.asarray(s, dtype=float)


def neck_profile(s, path, winds: int):
    """f along the neck, s in [0, 1]: path traversed forth and back `winds` times."""
    s = np.asarray(s, dtype=float)
    return _as_path(path)((1.0 - np.cos(2.0 * math.pi * winds * s)) / 2.0)


def init_neck(mesh: TriMesh, delta0: float, R0: float, eps0: float, path=0.0, winds: int = 0,
              center=NORTH, R0c: float | None = None) -> DiscreteMap:
    """Three-zone neck map in the stereographic chart centred at `center`.

    |z| >= delta0             v = w0(lam(|z|) z), f = 0
    R0 eps0 < |z| < delta0    v frozen at w0(0), f = path(.) along log|z|
    |z| <= R0 eps0            v = w0(nu(|z|/eps0) eps0 / z), f = 0

    w0 is the chart identity onto the neck sphere.  The inner bubble is
    written in the swapped chart eps0/z so that it meets the frozen value
    w0(0) continuously at |z| = R0 eps0; it still has degree one.
    `path` is a callable on [0, 1] with path(0) = 0, or an amplitude a for
    the straight path s -> a s.
    """
    if R0c is None:
        R0c = 0.5 * R0
    if not (eps0 > 0 and R0 > 0 and 0 < R0c < R0):
        raise SolverError("need eps0 > 0, R0 > 0 and 0 < R0c < R0")
    if not (R0 * eps0 < delta0 < 1.0):
        raise SolverError(f"zones overlap: need R0*eps0 < delta0 < 1 (got {R0 * eps0:.3g}, {delta0:.3g})")
    if int(winds) < 0:
        raise SolverError("winds must be nonnegative")
    pth = _as_path(path)
    if abs(float(pth(0.0))) > 1e-12:
        raise SolverError("path must start at 0 (on the neck sphere)")

    Q, p, q = _chart(mesh, center)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q == 0, np.inf, np.abs(p) / np.where(q == 0, 1.0, np.abs(q)))
    rin = R0 * eps0
    outer = r >= delta0
    inner = r <= rin
    ann = ~(outer | inner)

    P = np.zeros_like(p)
    Qh = np.ones_like(q)
    lam = smooth_step((np.where(np.isfinite(r), r, 2 * delta0) - delta0) / delta0)
    P[outer], Qh[outer] = lam[outer] * p[outer], q[outer]
    nu = 1.0 - smooth_step((r / eps0 - (R0 - R0c)) / R0c)
    P[inner], Qh[inner] = nu[inner] * eps0 * q[inner], p[inner]
    v = from_homogeneous(P, Qh) @ Q

    f = np.zeros(mesh.n_vertices)
    s = (np.log(r[ann]) - math.log(rin)) / (math.log(delta0) - math.log(rin))
    f[ann] = neck_profile(s, pth, int(winds))
    return DiscreteMap.projected(mesh, v, f)


def neck_energy_estimate(path, winds: int, warp: WarpFunction, log_gap: float) -> float:
    """Continuum energy of the annulus: (pi / G) int_0^1 psi(f) f'(s)^2 ds."""
    if winds == 0:
        return 0.0
    h = 1e-6

    def integrand(s):
        f = float(neck_profile(s, path, winds))
        df = float(neck_profile(s + h, path, winds) - neck_profile(s - h, path, winds)) / (2 * h)
        return float(warp(np.array(f))) * df * df

    val, _ = quad(integrand, 0.0, 1.0, limit=200 * max(winds, 1))
    return math.pi * val / log_gap


def log_gap_for_energy(target: float, path, winds: int, warp: WarpFunction) -> float:
    """Log-gap G making the continuum annulus energy equal `target`."""
    if not (target > 0 and winds > 0):
        raise SolverError("pinning needs a positive target and winds > 0")
    return neck_energy_estimate(path, winds, warp, 1.0) / target


# ---------------------------------------------------------------------------
# descent
# ---------------------------------------------------------------------------

_H1_CACHE: "weakref.WeakKeyDictionary[TriMesh, object]" = weakref.WeakKeyDictionary()


def h1_factor(mesh: TriMesh):
    """Sparse LU of K + M (P1 stiffness plus lumped mass), cached per mesh."""
    lu = _H1_CACHE.get(mesh)
    if lu is None:
        F = mesh.faces
        rows = np.repeat(F, 3, axis=1).ravel()
        cols = np.tile(F, (1, 3)).ravel()
        data = (mesh.stiffness_local * mesh.flat_area[:, None, None]).ravel()
        K = sp.coo_matrix((data, (rows, cols)), shape=(mesh.n_vertices,) * 2).tocsc()
        lu = splu((K + sp.diags(mesh.vertex_dual_area)).tocsc())
        _H1_CACHE[mesh] = lu
    return lu


class _Problem:
    def __init__(self, mesh, warp, alpha, opts):
        self.mesh, self.warp, self.alpha, self.opts = mesh, warp, alpha, opts
        self.lu = h1_factor(mesh) if opts.precondition else None
        lo, hi = warp.domain
        self.lo, self.hi = lo + opts.domain_margin, hi - opts.domain_margin

    def eval(self, v, f):
        E, gv, gf = energy_and_gradient(DiscreteMap(self.mesh, v, f), self.warp, self.alpha, project=True)
        return E, gv, gf

    def precondition(self, gv, gf):
        if self.lu is None:
            d = self.mesh.vertex_dual_area
            return gv / d[:, None], gf / d
        sol = self.lu.solve(np.column_stack([gv, gf]))
        return sol[:, :3], sol[:, 3]

    def retract(self, v, f, dv, df, s):
        vn = v + s * dv
        vn /= np.linalg.norm(vn, axis=1)[:, None]
        fn = f + s * df
        fc = np.clip(fn, self.lo, self.hi)
        return vn, fc, bool(np.any(fc != fn))


def _tangent(v, x):
    return x - np.sum(x * v, axis=1)[:, None] * v


def minimize(initial: DiscreteMap, warp: WarpFunction, alpha: float = 1.0,
             opts: SolveOptions | None = None) -> SolveReport:
    """Projected (H^1-preconditioned) descent with Armijo backtracking."""
    opts = opts or SolveOptions()
    if not 1.0 <= alpha <= 2.0:
        raise SolverError(f"alpha must lie in [1, 2], got {alpha}")
    initial.check(warp, margin=0.0)
    t0 = time.perf_counter()
    mesh = initial.mesh
    prob = _Problem(mesh, warp, alpha, opts)
    v, f = initial.v.copy(), initial.f.copy()
    E, gv, gf = prob.eval(v, f)
    h = mesh.max_edge_length
    records, events = [], []
    clamped = 0
    step = opts.step_init
    converged, message = False, "max_iters reached"
    prev_deg = compute_degree(initial).value
    dv_old = df_old = None
    pg_old = None
    it = 0

    def record(k, E, gnorm):
        nonlocal prev_deg
        u = DiscreteMap(mesh, v, f)
        br = alpha_energy(u, warp, 1.0)
        mg = br.max_gradient()
        deg = compute_degree(u)
        if deg.value != prev_deg:
            flag = mg * h > 1.0
            msg = (f"discrete degree changed {prev_deg} -> {deg.value} at iter {k}"
                   + (" (under-resolved: max|grad u| h > 1)" if flag else ""))
            log.warning(msg)
            events.append({"iter": k, "from": prev_deg, "to": deg.value, "under_resolved": bool(flag)})
            prev_deg = deg.value
        records.append(IterRecord(k, float(E), float(gnorm), float(mg), deg.value))

    for it in range(opts.max_iters + 1):
        gnorm = dual_norm(mesh, gv, gf)
        if it % opts.record_every == 0:
            record(it, E, gnorm)
        if gnorm < opts.grad_tol * (1.0 + E):
            converged, message = True, "gradient tolerance reached"
            break
        if it == opts.max_iters:
            break
        pv, pf = prob.precondition(gv, gf)
        pv = _tangent(v, pv)
        dv, df = -pv, -pf
        if opts.method == "cg" and dv_old is not None:
            num = np.sum((gv - pg_old[0]) * pv) + np.sum((gf - pg_old[1]) * pf)
            den = pg_old[2]
            beta = max(0.0, num / den) if den > 0 else 0.0
            dv = dv + beta * _tangent(v, dv_old)
            df = df + beta * df_old
        slope = float(np.sum(gv * dv) + np.sum(gf * df))
        if not slope < 0:
            dv, df = -pv, -pf
            slope = float(np.sum(gv * dv) + np.sum(gf * df))
        s = step
        accepted = False
        while s >= opts.min_step:
            vn, fn, clip = prob.retract(v, f, dv, df, s)
            En, gvn, gfn = prob.eval(vn, fn)
            if En <= E + opts.armijo_c * s * slope and En < E:
                accepted = True
                break
            s *= opts.step_shrink
        if not accepted:
            message = "line search failed (no descent at minimum step)"
            break
        clamped += clip
        pg_old = (gv, gf, float(np.sum(gv * pv) + np.sum(gf * pf)))
        dv_old, df_old = dv, df
        v, f, E, gv, gf = vn, fn, En, gvn, gfn
        step = min(s / opts.step_shrink, 1e6 * opts.step_init)

    gnorm = dual_norm(mesh, gv, gf)
    if not records or records[-1].iter != it:
        record(it, E, gnorm)
    final = DiscreteMap(mesh, v, f)
    br = alpha_energy(final, warp, alpha)
    if clamped:
        message += f"; f clamped into the warp domain on {clamped} steps"
    return SolveReport(records, final, converged, time.perf_counter() - t0, float(alpha), it, message,
                       clamped, events, br.total_E, br.total_E_alpha, gnorm, br.max_gradient())


def alpha_continuation(initial: DiscreteMap, warp: WarpFunction, schedule: AlphaSchedule,
                       opts: SolveOptions | None = None) -> list:
    """Minimise at each alpha of the schedule, warm-starting from the previous result."""
    reports = []
    u = initial
    for a in schedule.alphas:
        rep = minimize(u, warp, a, opts)
        reports.append(rep)
        u = rep.final_map
    return reports


def smooth_perturbation(mesh: TriMesh, rng: np.random.Generator, amplitude: float):
    """Random low-degree polynomial fields (3 for v, 1 for f) of sup-size ~ amplitude."""
    x = mesh.vertices
    basis = np.column_stack([x, x[:, [0, 1, 2]] * x[:, [1, 2, 0]], x ** 2 - 1.0 / 3.0])
    coef = rng.standard_normal((basis.shape[1], 4))
    fields = basis @ coef
    fields *= amplitude / np.max(np.abs(fields), axis=0)
    return fields[:, :3], fields[:, 3]


@dataclass
class SweepRow:
    alpha: float
    phi: float
    restarts: list
    converged: list


def alpha_sweep(degree: int, warp: WarpFunction, alphas, opts: SolveOptions | None = None,
                mesh: TriMesh | None = None, n_restarts: int = 5, amplitude: float = 0.1,
                f0: float = 0.0) -> list:
    """Best-of-restarts estimate of phi(alpha) = inf E_alpha over a degree class.

    Starts are init_degree and `n_restarts` seeded smooth perturbations of
    it; each start is minimized at the largest alpha first and the result
    seeds the next smaller alpha.  The lowest final E_alpha among runs that stay in
    the degree class is kept (nan if none does).  The estimate is an upper
    bound for the true infimum.
    """
    opts = opts or SolveOptions()
    if mesh is None:
        raise SolverError("alpha_sweep needs a mesh")
    alphas = [float(a) for a in alphas]
    if any(not 1.0 <= a <= 1.3 for a in alphas):
        raise SolverError("sweep alphas must lie in [1, 1.3]")
    base = init_degree(mesh, degree, f0)
    rng = np.random.default_rng(opts.seed)
    starts = [base]
    for _ in range(n_restarts):
        dv, df = smooth_perturbation(mesh, rng, amplitude)
        if degree == 0:
            dv, df = dv * 0.0, df * 0.0
        starts.append(DiscreteMap.projected(mesh, base.v + dv, base.f + df))
    starts = [u0 for u0 in starts if compute_degree(u0).value == degree]
    # each start is carried down the alphas in decreasing order (warm starts)
    order = sorted(range(len(alphas)), key=lambda i: -alphas[i])
    energies = [[math.nan] * len(starts) for _ in alphas]
    conv = [[False] * len(starts) for _ in alphas]
    for j, u in enumerate(starts):
        for i in order:
            rep = minimize(u, warp, alphas[i], opts)
            # a run whose discrete degree jumped has left the class
            if compute_degree(rep.final_map).value != degree:
                break
            energies[i][j] = rep.final_E_alpha
            conv[i][j] = rep.converged
            u = rep.final_map
    rows = []
    for i, a in enumerate(alphas):
        kept = [e for e in energies[i] if not math.isnan(e)]
        rows.append(SweepRow(a, float(min(kept)) if kept else math.nan, energies[i], conv[i]))
    return rows
