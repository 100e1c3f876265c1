"""Concentration detection, bubble extraction, neck oscillation and defect accounting.

Blow-up scales are expressed in stereographic chart units: the standard
bubble S^{-1}(z / lam) has peak sphere-metric gradient sqrt(2 psi) / lam,
so blowup_scale = sqrt(2 psi(f)) / peak_gradient recovers lam exactly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import DiscreteMap, alpha_energy
from .solver import SolverError, init_neck, log_gap_for_energy
from .spheremesh import (NORTH, MeshError, TriMesh, chart_homogeneous, chart_radius, from_homogeneous,
                         geodesic_distance, inverse_stereographic, resample_stereographic,
                         rotation_to_north)
from .warpgeom import WarpFunction, quantization_values


class BubbleError(ValueError):
    pass


@dataclass(frozen=True)
class EpsilonPolicy:
    """Concentration threshold eps0 and the geodesic ball scan range."""

    eps0: float = 1.0
    min_radius: float = 0.1
    max_radius: float = 0.5
    n_profile: int = 8
    psi0: float | None = None

    def __post_init__(self):
        if not self.eps0 > 0:
            raise BubbleError("eps0 must be positive")
        if not 0 < self.min_radius < self.max_radius <= math.pi:
            raise BubbleError("need 0 < min_radius < max_radius <= pi")
        if self.psi0 is not None:
            self.check_quantum(self.psi0)

    def check_quantum(self, psi0: float) -> None:
        if not self.eps0 < 4 * math.pi * psi0:
            raise BubbleError(f"eps0 = {self.eps0} must lie below the quantum 4 pi psi0 = {4 * math.pi * psi0:.4g}")

    @classmethod
    def for_warp(cls, warp: WarpFunction, **kw) -> "EpsilonPolicy":
        return cls(psi0=warp.psi0, **kw)

    @property
    def outer_chart_radius(self) -> float:
        """Chart radius of the geodesic ball of radius max_radius."""
        return math.tan(self.max_radius / 2.0)


@dataclass
class ConcentrationPoint:
    location: np.ndarray
    ball_energy_profile: list
    peak_gradient: float
    blowup_scale: float
    face: int = -1

    def as_dict(self) -> dict:
        return {"location": [float(x) for x in self.location], "peak_gradient": self.peak_gradient,
                "blowup_scale": self.blowup_scale, "face": self.face,
                "ball_energy_profile": [[float(r), float(e)] for r, e in self.ball_energy_profile]}


def _density(u: DiscreteMap, warp: WarpFunction):
    br = alpha_energy(u, warp, 1.0)
    return br, br.face_energy() * u.mesh.flat_area


def _local_maxima(mesh: TriMesh, g: np.ndarray) -> np.ndarray:
    ptr, idx = mesh.face_neighbors
    nb_max = np.full(mesh.n_faces, -np.inf)
    has = np.diff(ptr) > 0
    nb_max[has] = np.maximum.reduceat(g[idx], ptr[:-1][has])
    return np.flatnonzero(g >= nb_max)


def detect_concentration(u: DiscreteMap, warp: WarpFunction, policy: EpsilonPolicy | None = None) -> list:
    """Local maxima of |grad u| whose min_radius ball holds more than eps0 / 2."""
    policy = policy or EpsilonPolicy()
    policy.check_quantum(warp.psi0)
    mesh = u.mesh
    br, e = _density(u, warp)
    grad = np.sqrt((br.grad_v2 + br.grad_f2) * br.psi_face)
    cand = _local_maxima(mesh, grad)
    cand = cand[np.argsort(-grad[cand], kind="stable")]
    dirs = mesh.barycenter_directions
    kept = []
    for fc in cand:
        loc = dirs[fc]
        if any(geodesic_distance(loc, k) < 2 * policy.min_radius for k in (c.location for c in kept)):
            continue
        if e[mesh.faces_in_ball(loc, policy.min_radius)].sum() <= policy.eps0 / 2:
            continue
        radii = np.geomspace(policy.min_radius, policy.max_radius, policy.n_profile)
        profile = [(float(r), float(e[mesh.faces_in_ball(loc, r)].sum())) for r in radii]
        psi_peak = float(br.psi_face[fc])
        scale = math.sqrt(2 * psi_peak) / float(grad[fc])
        kept.append(ConcentrationPoint(_refine_location(mesh, e, loc, scale), profile, float(grad[fc]),
                                       scale, int(fc)))
    return kept


def _refine_location(mesh: TriMesh, e: np.ndarray, loc: np.ndarray, scale: float) -> np.ndarray:
    """Fixed point of the energy centroid over balls of radius 2*scale.

    The peak face only locates the maximum to within a mesh width; the
    bubble profile is symmetric about its centre, so a ball centred there
    has its energy centroid at the centre and sub-face accuracy follows.
    """
    x = loc.copy()
    # mean shift: each pass roughly halves the offset from the centre
    for _ in range(40):
        idx = mesh.faces_in_ball(x, 2.0 * scale)
        if len(idx) < 4:
            return x
        c = e[idx] @ mesh.barycenter_directions[idx]
        n = np.linalg.norm(c)
        if n == 0:
            return x
        c /= n
        step = np.linalg.norm(c - x)
        x = c
        if step < 1e-4 * scale:
            break
    return x


def extract_bubble(u: DiscreteMap, cp: ConcentrationPoint, warp: WarpFunction, R: float = 10.0,
                   n_grid: int = 201):
    """Rescale at the concentration point and measure the bubble on D_R."""
    try:
        patch = resample_stereographic(u.mesh, u.v, u.f, cp.location, cp.blowup_scale, R, n_grid)
    except MeshError as exc:
        raise BubbleError(f"{exc}; choose R below {1.0 / cp.blowup_scale:.4g}") from exc
    return patch, patch.energy(warp)


# ---------------------------------------------------------------------------
# oscillation
# ---------------------------------------------------------------------------

def _sample_chart(u: DiscreteMap, center, z):
    """Interpolated (v, f) at chart points z around `center`."""
    pts = inverse_stereographic(np.asarray(z).ravel()) @ rotation_to_north(center)
    faces, bary = u.mesh.locate(pts)
    corners = u.mesh.faces[faces]
    v = np.einsum("qk,qkc->qc", bary, u.v[corners])
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v, np.einsum("qk,qk->q", bary, u.f[corners])


def _osc(v, f):
    vv = np.clip(v @ v.T, -1.0, 1.0)
    return float(np.arccos(np.min(vv))), float(np.max(f) - np.min(f))


def _diameter(v, sweeps: int = 3) -> float:
    """Geodesic diameter of a point set by repeated farthest-point sweeps."""
    i, best = 0, 0.0
    for _ in range(sweeps):
        d = np.arccos(np.clip(v @ v[i], -1.0, 1.0))
        j = int(np.argmax(d))
        if d[j] <= best:
            break
        best, i = float(d[j]), j
    return best


@dataclass
class Oscillation:
    osc_v: float
    osc_f: float
    n: int
    under_resolved: bool

    def __iter__(self):
        return iter((self.osc_v, self.osc_f))


def neck_oscillation(u: DiscreteMap, cp: ConcentrationPoint, t: float, n: int = 64,
                     region: str = "circle", t_inner: float | None = None, R: float = 10.0) -> Oscillation:
    """Oscillation of u on the chart circle |z| = t around cp.

    region="circle" is osc over the circle dD_t.  region="neck" is osc over
    the whole annulus t_inner <= |z| <= t (t_inner defaults to R * scale),
    i.e. along the neck rather than around it.  The sampling is repeated
    with 2n points; a relative change above 5% marks the result
    under-resolved.
    """
    if not t > 0:
        raise BubbleError("t must be positive")
    if region not in ("circle", "neck"):
        raise BubbleError(f"unknown region {region!r}")
    if region == "neck":
        t_inner = R * cp.blowup_scale if t_inner is None else t_inner
        if not 0 < t_inner < t:
            raise BubbleError(f"empty annulus: inner {t_inner:.3g} >= outer {t:.3g}")

    def sample(m):
        th = 2 * math.pi * np.arange(m) / m
        if region == "circle":
            z = t * np.exp(1j * th)
        else:
            rr = np.geomspace(t_inner, t, m)
            z = (rr[:, None] * np.exp(1j * th[None, :])).ravel()
        v, f = _sample_chart(u, cp.location, z)
        if region == "neck":
            return _diameter(v), float(np.max(f) - np.min(f))
        return _osc(v, f)

    a = sample(n)
    b = sample(2 * n)
    scale = max(abs(a[0]) + abs(a[1]), 1e-12)
    under = (abs(a[0] - b[0]) + abs(a[1] - b[1])) / scale > 0.05 and scale > 1e-8
    return Oscillation(b[0], b[1], 2 * n, bool(under))


# ---------------------------------------------------------------------------
# decomposition and defect
# ---------------------------------------------------------------------------

@dataclass
class BubbleRecord:
    point: ConcentrationPoint
    patch: object
    energy: float
    mesh_energy: float


@dataclass
class NeckRecord:
    inner: float
    outer: float
    energy: float
    osc_v: float
    osc_f: float
    neck_osc_v: float
    neck_osc_f: float
    profile: list = field(default_factory=list)   # (t, osc_v, osc_f, energy inside D_t minus bubble)


@dataclass
class BubbleDecomposition:
    total_E: float
    total_E_alpha: float
    alpha: float
    base_energy: float
    bubbles: list
    neck_annuli: list
    closure_error: float
    psi0: float

    @property
    def bubble_energy(self) -> float:
        return float(sum(b.energy for b in self.bubbles))

    @property
    def neck_energy(self) -> float:
        return float(sum(n.energy for n in self.neck_annuli))

    @property
    def defect(self) -> float:
        return self.total_E_alpha - (self.base_energy + self.bubble_energy)

    def as_dict(self) -> dict:
        return {
            "total_E": self.total_E, "total_E_alpha": self.total_E_alpha, "alpha": self.alpha,
            "base_energy": self.base_energy, "bubble_energy": self.bubble_energy,
            "neck_energy": self.neck_energy, "defect": self.defect,
            "closure_error": self.closure_error, "psi0": self.psi0,
            "bubbles": [{"point": b.point.as_dict(), "energy": b.energy, "mesh_energy": b.mesh_energy,
                         "patch": {"R": b.patch.R, "scale": b.patch.scale, "n_grid": b.patch.z.shape[0]}}
                        for b in self.bubbles],
            "neck_annuli": [{"inner": n.inner, "outer": n.outer, "energy": n.energy, "osc_v": n.osc_v,
                             "osc_f": n.osc_f, "neck_osc_v": n.neck_osc_v, "neck_osc_f": n.neck_osc_f}
                            for n in self.neck_annuli],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=1)

    def write_annulus_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bubble", "t", "osc_v", "osc_f", "energy"])
            for i, n in enumerate(self.neck_annuli):
                for row in n.profile:
                    w.writerow([i, *("%.12g" % x for x in row)])


def decompose(u: DiscreteMap, warp: WarpFunction, policy: EpsilonPolicy | None = None, alpha: float = 1.0,
              R: float = 10.0, n_grid: int = 201, n_osc: int = 64, n_t: int = 12) -> BubbleDecomposition:
    """Split E(u) into base, bubble (D_R at blow-up scale) and neck parts.

    The neck of a bubble is the chart annulus R*scale < |z| < tan(max_radius/2)
    around its concentration point; the base is everything outside the necks.
    """
    policy = policy or EpsilonPolicy()
    mesh = u.mesh
    br, e = _density(u, warp)
    E_a = alpha_energy(u, warp, alpha).total_E_alpha if alpha != 1.0 else br.total_E
    rho = policy.outer_chart_radius
    covered = np.zeros(mesh.n_faces, bool)
    bubbles, necks = [], []
    for cp in detect_concentration(u, warp, policy):
        patch, eb = extract_bubble(u, cp, warp, R, n_grid)
        r_in = R * cp.blowup_scale
        if r_in >= rho:
            raise BubbleError(f"bubble disk R*scale = {r_in:.3g} exceeds the neck outer radius {rho:.3g}")
        rf = chart_radius(mesh.barycenter_directions, cp.location)
        inner = rf <= r_in
        ring = (rf > r_in) & (rf < rho) & ~covered
        mesh_bubble = float(e[inner & ~covered].sum())
        neck_e = float(e[ring].sum())
        covered |= (rf < rho)
        ts = np.geomspace(r_in, rho, n_t)
        prof = []
        for t in ts:
            o = neck_oscillation(u, cp, t, n_osc)
            prof.append((float(t), o.osc_v, o.osc_f, float(e[(rf > r_in) & (rf <= t)].sum())))
        nk = neck_oscillation(u, cp, rho, n_osc, region="neck", t_inner=r_in)
        necks.append(NeckRecord(r_in, rho, neck_e, max(p[1] for p in prof), max(p[2] for p in prof),
                                nk.osc_v, nk.osc_f, prof))
        bubbles.append(BubbleRecord(cp, patch, float(eb), mesh_bubble))
    base = float(e[~covered].sum())
    closure = base + sum(b.energy for b in bubbles) + sum(n.energy for n in necks) - br.total_E
    return BubbleDecomposition(br.total_E, float(E_a), float(alpha), base, bubbles, necks,
                               float(closure), warp.psi0)


@dataclass
class DefectReport:
    label: str
    alphas: list
    defects: list
    E_alpha: list
    base: list
    bubble: list
    neck: list
    n_bubbles: list
    trend: float
    quantum: float
    tau: float
    tau_ratio: float
    tau_integer_distance: float
    defect_ratio: float
    defect_integer_distance: float
    flags: list
    decompositions: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("label", "alphas", "defects", "E_alpha", "base", "bubble", "neck",
                                           "n_bubbles", "trend", "quantum", "tau", "tau_ratio",
                                           "tau_integer_distance", "defect_ratio",
                                           "defect_integer_distance", "flags")}
        d["members"] = [x.as_dict() for x in self.decompositions]
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=1)


def energy_identity_defect(family, warp: WarpFunction, policy: EpsilonPolicy | None = None,
                           label: str = "constructed family", identity_tol: float = 0.05,
                           integer_tol: float = 0.1, **kw) -> DefectReport:
    """defect_k = E_alpha_k(u_k) - (base_k + sum of bubble energies_k) along a family.

    `family` is a list of (alpha, DiscreteMap) with alpha decreasing toward 1.
    """
    family = list(family)
    if len(family) < 2:
        raise BubbleError("a family needs at least two members")
    alphas = [float(a) for a, _ in family]
    if any(b > a for a, b in zip(alphas, alphas[1:])):
        raise BubbleError("family alphas must be nonincreasing")
    decs = [decompose(u, warp, policy, a, **kw) for a, u in family]
    defects = [d.defect for d in decs]
    k = min(3, len(defects))
    trend = float(np.polyfit(np.arange(k), defects[-k:], 1)[0]) if k >= 2 else 0.0
    quantum = quantization_values(warp.psi0, 1)[0]
    tau = decs[-1].total_E_alpha
    tau_ratio = tau / quantum
    d_ratio = defects[-1] / quantum
    flags = []
    if abs(defects[-1]) < identity_tol * quantum:
        flags.append("identity-consistent")
    else:
        flags.append("defect bounded away from 0")
    tau_dist = abs(tau_ratio - round(tau_ratio))
    if tau_dist > integer_tol:
        flags.append("tau/quantum non-integer")
    d_dist = abs(d_ratio - round(d_ratio))
    if "defect bounded away from 0" in flags and d_dist > integer_tol:
        flags.append("defect not a quantum multiple")
    return DefectReport(label, alphas, defects, [d.total_E_alpha for d in decs],
                        [d.base_energy for d in decs], [d.bubble_energy for d in decs],
                        [d.neck_energy for d in decs], [len(d.bubbles) for d in decs], trend, quantum,
                        tau, tau_ratio, tau_dist, d_ratio, d_dist, flags, decs)


# ---------------------------------------------------------------------------
# synthetic maps and families
# ---------------------------------------------------------------------------

def single_bubble_map(mesh: TriMesh, lam: float, center=NORTH, f0: float = 0.0) -> DiscreteMap:
    """v = S^{-1}(z / lam) in the chart centred at `center`, f = f0."""
    if not lam > 0:
        raise BubbleError("lam must be positive")
    Q = rotation_to_north(center)
    p, q = chart_homogeneous(mesh.vertices @ Q.T)
    v = from_homogeneous(p, lam * q) @ Q
    return DiscreteMap.projected(mesh, v, np.full(mesh.n_vertices, float(f0)))


def two_bubble_map(mesh: TriMesh, lam: float, center=NORTH, f0: float = 0.0) -> DiscreteMap:
    """v = S^{-1}(lam (z + 1/z)): bubbles of scale lam at center and antipode.

    Away from both points the map stays near w = 0; lam / z covers the
    sphere inside |z| < lam and lam z covers it outside |z| > 1 / lam.
    """
    if not lam > 0:
        raise BubbleError("lam must be positive")
    Q = rotation_to_north(center)
    p, q = chart_homogeneous(mesh.vertices @ Q.T)
    s = np.sqrt(np.abs(p) ** 2 + np.abs(q) ** 2)
    p, q = p / s, q / s
    v = from_homogeneous(lam * (p * p + q * q), p * q) @ Q
    return DiscreteMap.projected(mesh, v, np.full(mesh.n_vertices, float(f0)))


@dataclass
class FamilyMember:
    alpha: float
    map: DiscreteMap
    eps0: float
    log_gap: float
    winds: int


def default_alpha(eps0: float) -> float:
    """alpha_k - 1 = 10 eps0_k: tends to 1 fast enough that E_alpha - E vanishes on the family."""
    return 1.0 + min(0.3, 10.0 * eps0)


def identity_family(mesh: TriMesh, eps_list, delta0: float = 0.02, R0: float = 100.0,
                    center=NORTH) -> list:
    """Shrinking bubble glued through a frozen neck (winds = 0)."""
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    out = []
    for eps in eps_list:
        u = init_neck(mesh, delta0, R0, eps, 0.0, 0, center)
        out.append(FamilyMember(default_alpha(eps), u, eps, math.log(delta0 / (R0 * eps)), 0))
    return out


def pinned_winds_family(mesh: TriMesh, warp: WarpFunction, winds_list, amplitude: float = 0.3,
                        neck_energy: float | None = None, delta0: float = 0.02, R0: float = 100.0,
                        center=NORTH) -> list:
    """Neck maps whose annulus energy is pinned by choosing the log-gap.

    Member k winds the path s -> amplitude * s back and forth winds_k times;
    its log-gap G_k is chosen so that the continuum annulus energy equals
    `neck_energy` (default 2 pi psi0).  The bubble scale follows from G_k.
    """
    if neck_energy is None:
        neck_energy = 2 * math.pi * warp.psi0
    out = []
    for w in winds_list:
        G = log_gap_for_energy(neck_energy, amplitude, int(w), warp)
        eps = delta0 * math.exp(-G) / R0
        try:
            u = init_neck(mesh, delta0, R0, eps, amplitude, int(w), center)
        except SolverError as exc:
            raise BubbleError(str(exc)) from exc
        out.append(FamilyMember(default_alpha(eps), u, eps, G, int(w)))
    return out
