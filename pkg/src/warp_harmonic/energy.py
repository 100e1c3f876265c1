"""Dirichlet and Sacks-Uhlenbeck alpha-energies of maps u = (v, f): S^2 -> S^2 x I.

For the warped target metric psi(t)(ds^2 + dt^2) the energy density is
|grad u|^2 = (|grad v|^2 + |grad f|^2) psi(f).  On the mesh both gradients
are face-constant (P1) and psi is evaluated at the face mean of f, so

    E       = 1/2 sum_F q_F A_F,                q_F = (|dv|^2 + |df|^2)_F psi(fbar_F)
    E_alpha = 1/2 sum_F ((1 + q_F)^alpha - 1) A_F

with A_F the flat face area.  Gradients below are exact derivatives of these
sums with respect to the vertex values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spheremesh import TriMesh, field_gradients
from .warpgeom import WarpFunction

DOMAIN_MARGIN = 1e-6
UNIT_TOL = 1e-10


class MapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMap:
    """Vertex samples of u = (v, f); v unit vectors, f real."""

    mesh: TriMesh
    v: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if v.shape != (self.mesh.n_vertices, 3) or f.shape != (self.mesh.n_vertices,):
            raise MapError("map arrays do not match the mesh vertex count")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "f", f)

    @classmethod
    def projected(cls, mesh, v, f):
        """Build a map after renormalising v onto the unit sphere."""
        v = np.asarray(v, dtype=float)
        return cls(mesh, v / np.linalg.norm(v, axis=1)[:, None], f)

    def unit_error(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.v, axis=1) - 1.0)))

    def check(self, warp: WarpFunction | None = None, margin: float = DOMAIN_MARGIN,
              unit: bool = True) -> None:
        if unit and self.unit_error() > UNIT_TOL:
            err = np.abs(np.linalg.norm(self.v, axis=1) - 1.0)
            raise MapError(f"|v| deviates from 1 by {err.max():.2e} at vertex {int(np.argmax(err))}")
        if warp is not None:
            bad = ~warp.contains(self.f, margin)
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise MapError(f"f[{i}] = {self.f[i]!r} lies outside the warp domain {warp.domain}")


@dataclass
class EnergyBreakdown:
    total_E: float
    total_E_alpha: float
    alpha: float
    v_part: float
    f_part: float
    grad_v2: np.ndarray      # |grad v|^2 per face
    grad_f2: np.ndarray      # |grad f|^2 per face
    psi_face: np.ndarray     # psi(fbar) per face

    @property
    def per_face_density(self) -> np.ndarray:
        """(F, 3) columns |grad v|^2, |grad f|^2, psi(fbar)."""
        return np.stack([self.grad_v2, self.grad_f2, self.psi_face], axis=1)

    def face_energy(self) -> np.ndarray:
        """Dirichlet energy density 1/2 |grad u|^2 per face (not area weighted)."""
        return 0.5 * (self.grad_v2 + self.grad_f2) * self.psi_face

    def max_gradient(self) -> float:
        return float(np.sqrt(np.max((self.grad_v2 + self.grad_f2) * self.psi_face)))

    def as_dict(self) -> dict:
        return {"total_E": self.total_E, "total_E_alpha": self.total_E_alpha, "alpha": self.alpha,
                "v_part": self.v_part, "f_part": self.f_part}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def write_face_csv(self, path) -> None:
        np.savetxt(Path(path), self.per_face_density, delimiter=",",
                   header="grad_v2,grad_f2,psi", comments="", fmt="%.17g")


def _check_alpha(alpha):
    if not 1.0 <= alpha <= 2.0:
        raise MapError(f"alpha must lie in [1, 2], got {alpha}")


def _face_terms(u: DiscreteMap, warp: WarpFunction):
    # the discrete functional is defined for any v in R^3; only f is constrained
    u.check(warp, margin=0.0, unit=False)
    mesh = u.mesh
    gv = field_gradients(mesh, u.v)        # (F, 3 comps, 3 space)
    gf = field_gradients(mesh, u.f)        # (F, 3)
    ev = np.einsum("fcs,fcs->f", gv, gv)
    ef = np.einsum("fs,fs->f", gf, gf)
    fbar = u.f[mesh.faces].mean(axis=1)
    return gv, gf, ev, ef, fbar, np.asarray(warp(fbar), dtype=float)


def _alpha_integrand(q, alpha):
    if alpha == 1.0:
        return q
    return np.expm1(alpha * np.log1p(q))


def alpha_energy(u: DiscreteMap, warp: WarpFunction, alpha: float = 1.0) -> EnergyBreakdown:
    _check_alpha(alpha)
    _, _, ev, ef, _, psi = _face_terms(u, warp)
    A = u.mesh.flat_area
    q = (ev + ef) * psi
    v_part = 0.5 * float(np.sum(ev * psi * A))
    f_part = 0.5 * float(np.sum(ef * psi * A))
    total = 0.5 * float(np.sum(q * A))
    total_a = total if alpha == 1.0 else 0.5 * float(np.sum(_alpha_integrand(q, alpha) * A))
    return EnergyBreakdown(total, total_a, float(alpha), v_part, f_part, ev, ef, psi)


def energy(u: DiscreteMap, warp: WarpFunction) -> EnergyBreakdown:
    return alpha_energy(u, warp, 1.0)


def _scatter(mesh: TriMesh, per_corner):
    """Sum (F, 3[, C]) corner contributions into vertices."""
    idx = mesh.faces.ravel()
    n = mesh.n_vertices
    if per_corner.ndim == 2:
        return np.bincount(idx, weights=per_corner.ravel(), minlength=n)
    flat = per_corner.reshape(-1, per_corner.shape[-1])
    return np.stack([np.bincount(idx, weights=flat[:, c], minlength=n) for c in range(flat.shape[1])],
                    axis=1)


def energy_and_gradient(u: DiscreteMap, warp: WarpFunction, alpha: float = 1.0, project: bool = True):
    """E_alpha and its exact vertex gradient (grad_v, grad_f).

    With ``project`` the v-gradient is projected onto the tangent plane of
    the unit sphere at each v.
    """
    _check_alpha(alpha)
    mesh = u.mesh
    gv, gf, ev, ef, fbar, psi = _face_terms(u, warp)
    dpsi = np.asarray(warp.derivative(fbar), dtype=float)
    A = mesh.flat_area
    q = (ev + ef) * psi
    if alpha == 1.0:
        total = 0.5 * float(np.sum(q * A))
        c = 0.5 * A
    else:
        total = 0.5 * float(np.sum(_alpha_integrand(q, alpha) * A))
        c = 0.5 * alpha * np.exp((alpha - 1.0) * np.log1p(q)) * A
    G = mesh.gradient_basis
    w = (2.0 * c * psi)
    corner_v = np.einsum("fcs,fms->fmc", gv, G) * w[:, None, None]
    corner_f = np.einsum("fs,fms->fm", gf, G) * w[:, None] + (c * (ev + ef) * dpsi / 3.0)[:, None]
    grad_v = _scatter(mesh, corner_v)
    grad_f = _scatter(mesh, corner_f)
    if project:
        grad_v = grad_v - np.sum(grad_v * u.v, axis=1)[:, None] * u.v
    return total, grad_v, grad_f


def energy_gradient(u: DiscreteMap, warp: WarpFunction, alpha: float = 1.0, project: bool = True):
    _, gv, gf = energy_and_gradient(u, warp, alpha, project)
    return gv, gf


def dual_norm(mesh: TriMesh, grad_v, grad_f=None) -> float:
    """Dual-area-weighted L2 norm of a weak (per-vertex integrated) quantity."""
    d = mesh.vertex_dual_area
    s = np.sum(np.atleast_2d(np.asarray(grad_v).T).T ** 2 / d[:, None]) if grad_v is not None else 0.0
    if grad_f is not None:
        s += np.sum(np.asarray(grad_f) ** 2 / d)
    return math.sqrt(float(s))


@dataclass
class Residual:
    residual_v: np.ndarray
    residual_f: np.ndarray
    norm_v: float
    norm_f: float


def el_residual(u: DiscreteMap, warp: WarpFunction) -> Residual:
    """Weak residuals of the reduced harmonic map system.

        -div(psi(f) grad v) - psi(f) |grad v|^2 v = 0
        -div(psi(f) grad f) + 1/2 (|grad v|^2 + |grad f|^2) psi'(f) = 0

    tested against the P1 hat functions, with lumped (one third per corner)
    quadrature of the zero-order terms.
    """
    mesh = u.mesh
    gv, gf, ev, ef, fbar, psi = _face_terms(u, warp)
    dpsi = np.asarray(warp.derivative(fbar), dtype=float)
    A = mesh.flat_area
    G = mesh.gradient_basis
    stiff_v = _scatter(mesh, np.einsum("fcs,fms->fmc", gv, G) * (A * psi)[:, None, None])
    lagrange = _scatter(mesh, np.repeat((A * psi * ev / 3.0)[:, None], 3, axis=1))
    res_v = stiff_v - lagrange[:, None] * u.v
    res_f = _scatter(mesh, np.einsum("fs,fms->fm", gf, G) * (A * psi)[:, None]
                     + (0.5 * A * (ev + ef) * dpsi / 3.0)[:, None])
    return Residual(res_v, res_f, dual_norm(mesh, res_v), dual_norm(mesh, None, res_f))


def f_pairing_terms(u: DiscreteMap, warp: WarpFunction):
    """Face-sum form of int |grad f|^2 psi(f) + 1/2 int |grad u|^2/psi psi'(f) f.

    Equals sum_i residual_f[i] * f[i] exactly (up to rounding).
    """
    _, _, ev, ef, fbar, psi = _face_terms(u, warp)
    dpsi = np.asarray(warp.derivative(fbar), dtype=float)
    A = u.mesh.flat_area
    return float(np.sum(A * ef * psi)) + 0.5 * float(np.sum(A * (ev + ef) * dpsi * fbar))
