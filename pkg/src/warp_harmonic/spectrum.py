"""Critical points of psi(t) = exp(-beta/t^2) sin(1/t) + 1 and their energies.

With x = 1/t, psi'(t) = 0 for t > 0 becomes tan x = 1 / (2 beta x), which
has exactly one root on each branch (k pi, k pi + pi/2) because
tan x - 1/(2 beta x) is increasing there.  For beta = 1 this is
tan(1/t) = t/2.  The identity map with f = t_k is harmonic with energy
4 pi psi(t_k); the gaps |4 pi psi(t_k) - 4 pi| are positive and shrink to 0.

Each call works in its own mpmath context, so concurrent calls with
different precisions do not interfere.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np

from .energy import DiscreteMap, el_residual
from .spheremesh import build_icosphere
from .warpgeom import make_spectrum_warp

K_MAX = 50
MIN_BITS = 64


class SpectrumError(ValueError):
    pass


class PrecisionError(SpectrumError):
    def __init__(self, required: int, given: int, what: str = ""):
        super().__init__(f"{what}needs at least {required} bits of precision, got {given}")
        self.required = required
        self.given = given


class TheoremCheckError(SpectrumError):
    pass


def _ctx(bits: int):
    ctx = mpmath.MPContext()
    ctx.prec = int(bits)
    return ctx


def required_bits(t, beta: float = 1.0) -> int:
    """Bits needed for exp(-beta/t^2) to keep 64 significant bits next to 1."""
    t = mpmath.mpf(t)
    return int(math.ceil(float(mpmath.mpf(beta) / t ** 2) / math.log(2.0))) + 64


def required_bits_for_branch(k: int, beta: float = 1.0) -> int:
    """Lower bound of required_bits(t_k): the root satisfies 1/t_k > k pi."""
    return int(math.ceil(beta * (k * math.pi) ** 2 / math.log(2.0))) + 64


def _check_args(k_max, bits):
    if int(k_max) != k_max or not 1 <= k_max <= K_MAX:
        raise SpectrumError(f"k_max must be an integer in [1, {K_MAX}], got {k_max}")
    if int(bits) < MIN_BITS:
        raise SpectrumError(f"precision_bits must be at least {MIN_BITS}, got {bits}")


def _root_on_branch(ctx, k: int, beta):
    """Root of g(x) = tan x - 1/(2 beta x) on (k pi, k pi + pi/2)."""
    two_b = 2 * beta

    def g(x):
        return ctx.tan(x) - 1 / (two_b * x)

    def dg(x):
        return ctx.sec(x) ** 2 + 1 / (two_b * x * x)

    a = k * ctx.pi
    delta = ctx.mpf("0.1")
    b = a + ctx.pi / 2 - delta
    while g(b) <= 0:
        delta /= 16
        b = a + ctx.pi / 2 - delta
        if delta < ctx.mpf(2) ** (-ctx.prec // 2):
            raise SpectrumError(f"no sign change on branch k={k}")
    if not g(a) < 0 < g(b):
        raise SpectrumError(f"bracket failure on branch k={k}")
    # a few bisection steps, then safeguarded Newton
    for _ in range(40):
        m = (a + b) / 2
        if g(m) < 0:
            a = m
        else:
            b = m
    x = (a + b) / 2
    tol = ctx.mpf(2) ** (-ctx.prec + 6) * x
    for _ in range(4 * ctx.prec):
        gx = g(x)
        if gx == 0:
            break
        if gx < 0:
            a = x
        else:
            b = x
        xn = x - gx / dg(x)
        if not a < xn < b:
            xn = (a + b) / 2
        if abs(xn - x) < tol:
            x = xn
            break
        x = xn
    return x


def critical_points(k_max: int, precision_bits: int, beta: float = 1.0) -> list:
    """t_1 > t_2 > ... > t_kmax with 1/t_k in (k pi, k pi + pi/2), as mpf values."""
    _check_args(k_max, precision_bits)
    if not beta > 0:
        raise SpectrumError("beta must be positive")
    ctx = _ctx(precision_bits)
    b = ctx.mpf(beta)
    return [1 / _root_on_branch(ctx, k, b) for k in range(1, int(k_max) + 1)]


def root_residual(t, beta: float, precision_bits: int):
    """|tan(1/t) - t/(2 beta)| evaluated at the given precision."""
    ctx = _ctx(precision_bits)
    t = ctx.mpf(t)
    return abs(ctx.tan(1 / t) - t / (2 * ctx.mpf(beta)))


def psi_prime(t, beta: float, precision_bits: int):
    ctx = _ctx(precision_bits)
    t = ctx.mpf(t)
    b = ctx.mpf(beta)
    return ctx.exp(-b / t ** 2) * (2 * b / t ** 3 * ctx.sin(1 / t) - ctx.cos(1 / t) / t ** 2)


def energy_of_root(t_k, beta: float = 1.0, precision_bits: int = 512):
    """(psi(t_k), 4 pi psi(t_k), |4 pi psi(t_k) - 4 pi|) in high precision.

    The gap is computed directly as 4 pi exp(-beta/t^2)|sin(1/t)|, so it
    keeps full relative precision.
    """
    need = required_bits(t_k, beta)
    if precision_bits < need:
        raise PrecisionError(need, precision_bits, "energy_of_root ")
    ctx = _ctx(precision_bits)
    t = ctx.mpf(t_k)
    dev = ctx.exp(-ctx.mpf(beta) / t ** 2) * ctx.sin(1 / t)
    psi = 1 + dev
    four_pi = 4 * ctx.pi
    return psi, four_pi * psi, four_pi * abs(dev)


@dataclass
class SpectrumRow:
    k: int
    t: object
    residual: object
    psi: object
    energy: object
    gap: object


@dataclass
class SpectrumTable:
    rows: list
    beta: float
    precision_bits: int
    checks: dict = field(default_factory=dict)
    claim: str = ""

    def digits(self) -> int:
        return int(self.precision_bits * math.log10(2))

    def write_csv(self, path) -> None:
        """Decimal strings at full working precision; no binary floats."""
        n = self.digits()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k", "residual", "psi_tk", "energy", "gap"])
            for r in self.rows:
                w.writerow([r.k] + [mpmath.nstr(x, n, min_fixed=1, max_fixed=0)
                                    for x in (r.t, r.residual, r.psi, r.energy, r.gap)])

    def format(self, digits: int = 20) -> str:
        head = f"{'k':>3} {'t_k':>{digits + 8}} {'residual':>12} {'gap':>{digits + 8}}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.k:>3} {mpmath.nstr(r.t, digits):>{digits + 8}} "
                         f"{mpmath.nstr(r.residual, 3):>12} {mpmath.nstr(r.gap, digits):>{digits + 8}}")
        return "\n".join(lines)


def accumulation_report(k_max: int, beta: float = 1.0, precision_bits: int = 512) -> SpectrumTable:
    """Roots, residuals and energy gaps; raises TheoremCheckError on any invariant failure."""
    _check_args(k_max, precision_bits)
    need = required_bits_for_branch(int(k_max), beta)
    if precision_bits < need:
        raise PrecisionError(need, precision_bits, f"k_max={k_max}, beta={beta} ")
    ts = critical_points(k_max, precision_bits, beta)
    rows = []
    for k, t in enumerate(ts, start=1):
        psi, E, gap = energy_of_root(t, beta, precision_bits)
        rows.append(SpectrumRow(k, t, root_residual(t, beta, precision_bits), psi, E, gap))
    bound = mpmath.mpf(10) ** (-(precision_bits * 0.2))
    checks = {
        "t_decreasing": all(b.t < a.t for a, b in zip(rows, rows[1:])),
        "residual_bound": all(r.residual < bound for r in rows),
        "gap_positive": all(r.gap > 0 for r in rows),
        "gap_decreasing": all(b.gap < a.gap for a, b in zip(rows, rows[1:])),
    }
    table = SpectrumTable(rows, float(beta), int(precision_bits), checks)
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise TheoremCheckError("spectrum invariants failed: " + ", ".join(failed))
    table.claim = f"4 pi is an accumulation point of the harmonic sphere energies (verified for k <= {k_max})"
    return table


def float_gaps(k_max: int, beta: float) -> list:
    """Gaps |4 pi psi(t_k) - 4 pi| from the double-precision warp (0.0 when invisible)."""
    warp = make_spectrum_warp(beta)
    ts = critical_points(k_max, MIN_BITS, beta)
    return [abs(4 * math.pi * float(warp(np.array(float(t)))) - 4 * math.pi) for t in ts]


@dataclass
class HarmonicityReport:
    t: float
    beta: float
    levels: list
    root_norms: list
    offset_norms: list
    ratios: list
    decreasing: bool
    separation: float
    separated: bool


def verify_harmonic_root(t_k, beta: float = 1.0, levels=(4, 5, 6), offset: float = 0.05) -> HarmonicityReport:
    """f-residual of (identity, f = t_k) against (identity, f = t_k + offset) over mesh levels."""
    warp = make_spectrum_warp(beta)
    t = float(t_k)
    root, off = [], []
    for L in levels:
        mesh = build_icosphere(L)
        for val, out in ((t, root), (t + offset, off)):
            u = DiscreteMap(mesh, mesh.vertices.copy(), np.full(mesh.n_vertices, val))
            out.append(el_residual(u, warp).norm_f)
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(root, root[1:])]
    sep = off[-1] / root[-1] if root[-1] > 0 else math.inf
    return HarmonicityReport(t, float(beta), list(levels), root, off, ratios,
                             all(r <= 0.5 for r in ratios), sep, sep >= 10.0)
