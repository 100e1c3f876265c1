"""Warp profiles psi(t) for the target S^2 x I with metric psi(t)(ds^2 + dt^2).

Two families are provided:

* ``tube``: the neck profile psi = r^2 exp(2 sigma(t)), with sigma(t) = |t|
  for |t| >= log 2 and an even polynomial blend inside, so that 0 is the
  only critical point.
* ``spectrum``: psi = exp(-beta / t^2) sin(1/t) + 1, whose critical points
  accumulate at 0 with values accumulating at 1.

The module also carries the exact inequality bookkeeping that decides when
every harmonic sphere in the tube geometry has energy 4 m pi psi(0).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy

LOG2 = math.log(2.0)
R_MAX = math.pi / (4.0 * math.sqrt(3.0) + 2.0)
SPECTRUM_EDGE = 0.5
SPECTRUM_BLEND = 0.05


class WarpError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WarpFunction:
    """A positive warp profile on an open interval."""

    kind: str
    domain: tuple[float, float]
    value: Callable = field(repr=False)
    derivative: Callable = field(repr=False)
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.value(t)

    @property
    def psi0(self) -> float:
        return float(self.value(np.array(0.0)))

    def contains(self, t, margin: float = 0.0):
        t = np.asarray(t, dtype=float)
        return (t > self.domain[0] + margin) & (t < self.domain[1] - margin)

    def descriptor(self) -> dict:
        if self.kind == "custom":
            raise WarpError("custom warps carry code and have no JSON descriptor")
        d = {"kind": self.kind, "domain": list(self.domain)}
        d.update(self.params)
        return d

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


def warp_from_descriptor(desc) -> WarpFunction:
    """Rebuild a warp from its JSON descriptor (dict or string)."""
    if isinstance(desc, str):
        desc = json.loads(desc)
    kind = desc.get("kind")
    if kind == "tube":
        if "r" not in desc:
            raise WarpError("tube warp requires field 'r'")
        return make_tube_warp(_number(desc, "r"), desc.get("blend_order", "C2"))
    if kind == "spectrum":
        if "beta" not in desc:
            raise WarpError("spectrum warp requires field 'beta'")
        return make_spectrum_warp(_number(desc, "beta"))
    raise WarpError(f"unknown warp kind {kind!r}")


def _number(desc, key) -> float:
    try:
        return float(desc[key])
    except (TypeError, ValueError):
        raise WarpError(f"warp field {key!r} must be a number, got {desc[key]!r}") from None


def parse_warp(spec: str) -> WarpFunction:
    """Parse the command-line form ``tube:r=0.3[,blend=C4]`` or ``spectrum:beta=1``."""
    kind, _, rest = spec.partition(":")
    desc = {"kind": kind.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise WarpError(f"malformed warp parameter {item!r}")
        key = {"blend": "blend_order"}.get(key.strip(), key.strip())
        desc[key] = val.strip()
    return warp_from_descriptor(desc)


def custom_warp(value, derivative, domain) -> WarpFunction:
    return WarpFunction("custom", (float(domain[0]), float(domain[1])), value, derivative)


# ---------------------------------------------------------------------------
# tube
# ---------------------------------------------------------------------------

def _blend_coefficients(order: str) -> np.ndarray:
    """Even polynomial g(s) = sum a_j s^(2j) on [0, 1] matching |s| at s = 1.

    C2 matches value, slope and curvature (quartic); C4 also the third and
    fourth derivatives (degree 8).
    """
    n = {"C2": 3, "C4": 5}[order]
    powers = 2 * np.arange(n)
    rows, rhs = [], []
    for d in range(n):
        # d-th derivative of s^p at s = 1
        coef = [math.prod(range(p - d + 1, p + 1)) if p >= d else 0.0 for p in powers]
        rows.append(coef)
        rhs.append(1.0 if d <= 1 else 0.0)
    return np.linalg.solve(np.array(rows, float), np.array(rhs))


def tube_psi0(r: float, blend_order: str = "C2") -> float:
    """psi(0) = r^2 exp(2 sigma(0)) of the tube blend, for any r > 0.

    Unlike make_tube_warp this does not enforce r < R_MAX, so the ledger
    can be evaluated on both sides of the admissible range.
    """
    if not r > 0:
        raise WarpError(f"tube radius must be positive, got {r}")
    if blend_order not in ("C2", "C4"):
        raise WarpError(f"blend_order must be C2 or C4, got {blend_order!r}")
    return float(r) ** 2 * math.exp(2.0 * LOG2 * _blend_coefficients(blend_order)[0])


def make_tube_warp(r: float, blend_order: str = "C2") -> WarpFunction:
    """Tube profile psi(t) = r^2 exp(2 sigma(t)) on (-log(pi/r), log(pi/r))."""
    if not (0.0 < r < R_MAX):
        raise WarpError(f"tube radius must lie in (0, {R_MAX:.6f}), got {r}")
    if blend_order not in ("C2", "C4"):
        raise WarpError(f"blend_order must be C2 or C4, got {blend_order!r}")
    a = _blend_coefficients(blend_order)
    L = LOG2
    da = a[1:] * 2 * np.arange(1, len(a))  # coefficients of g'(s) / s in s^(2j-2)

    def sigma(t):
        s = np.abs(np.asarray(t, dtype=float))
        u = (s / L) ** 2
        inner = L * np.polyval(a[::-1], u)
        return np.where(s >= L, s, inner)

    def dsigma(t):
        t = np.asarray(t, dtype=float)
        s = np.abs(t)
        u = (s / L) ** 2
        inner = (t / L) * np.polyval(da[::-1], u)
        return np.where(s >= L, np.sign(t), inner)

    # sigma' must vanish only at 0 inside the blend
    grid = np.linspace(1e-6, L, 20001)
    if not np.all(dsigma(grid) > 0):
        raise WarpError(f"{blend_order} blend is not monotone on (0, log 2)")

    r2 = r * r

    def value(t):
        return r2 * np.exp(2.0 * sigma(t))

    def derivative(t):
        return 2.0 * dsigma(t) * value(t)

    half = math.log(math.pi / r)
    return WarpFunction("tube", (-half, half), value, derivative,
                        {"r": float(r), "blend_order": blend_order})


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

def _ramp(x):
    """C2 quintic smoothstep on [0, 1] with derivative."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10 - 15 * x + 6 * x * x), 30 * x * x * (1 - x) ** 2


def make_spectrum_warp(beta: float = 1.0) -> WarpFunction:
    """psi(t) = exp(-beta/t^2) sin(1/t) + 1 on |t| <= 1/2, frozen beyond.

    Over 1/2 <= |t| <= 0.55 the profile is blended (C2) into the constant
    psi(+-1/2); the formula itself is untouched on (-1/2, 1/2).
    """
    if not beta > 0:
        raise WarpError(f"beta must be positive, got {beta}")
    beta = float(beta)

    def core(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            inv = np.where(t == 0, 0.0, 1.0 / np.where(t == 0, 1.0, t))
            damp = np.exp(-beta * inv * inv)  # underflows to 0 near t = 0
            val = np.where(damp > 0, damp * np.sin(inv), 0.0) + 1.0
            der = np.where(damp > 0,
                           damp * (2 * beta * inv ** 3 * np.sin(inv) - inv * inv * np.cos(inv)), 0.0)
        return val, der

    edge_val = {s: float(core(np.array(s * SPECTRUM_EDGE))[0]) for s in (1, -1)}

    def both(t):
        t = np.asarray(t, dtype=float)
        val, der = core(t)
        s = np.abs(t)
        c = np.where(t >= 0, edge_val[1], edge_val[-1])
        w, dw = _ramp((s - SPECTRUM_EDGE) / SPECTRUM_BLEND)
        dw = dw * np.sign(t) / SPECTRUM_BLEND
        bval = c + (val - c) * (1 - w)
        bder = der * (1 - w) - (val - c) * dw
        out = s > SPECTRUM_EDGE
        return np.where(out, bval, val), np.where(out, bder, der)

    return WarpFunction("spectrum", (-1.0, 1.0), lambda t: both(t)[0], lambda t: both(t)[1],
                        {"beta": beta})


# ---------------------------------------------------------------------------
# quantization ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LedgerReport:
    r: float
    psi0: float
    bounds: dict
    r_max: float
    verdicts: dict

    @property
    def all_hold(self) -> bool:
        return all(self.verdicts.values())

    def as_dict(self) -> dict:
        return {"r": self.r, "psi0": self.psi0, "bounds": self.bounds, "r_max": self.r_max,
                "verdicts": self.verdicts, "all_hold": self.all_hold}


def _exact(x):
    if isinstance(x, sympy.Basic):
        return x
    if isinstance(x, str):
        return sympy.sympify(x)
    return sympy.Rational(float(x))  # exact binary value of the float


def _compare(lhs, rhs, strict: bool) -> bool:
    diff = lhs - rhs
    approx = sympy.N(diff, 60)
    if abs(approx) > sympy.Float("1e-45"):
        return bool(approx < 0) if strict else bool(approx <= 0)
    zero = sympy.simplify(diff) == 0
    if zero:
        return not strict
    return bool(sympy.N(diff, 400) < 0)


def ledger(r, psi0) -> LedgerReport:
    """Decide the four inequalities behind the 4 m pi psi(0) quantization.

    (a) 4 pi psi0 <= 16 pi r^2, (b) 12 pi psi0 < 48 pi r^2,
    (c) 48 pi r^2 < pi (pi - 2r)^2, (d) r < pi / (4 sqrt 3 + 2).
    Comparisons are exact: floats enter as their exact binary rationals and
    r may also be given as a sympy expression or string.
    """
    R = _exact(r)
    P = _exact(psi0)
    if not (R > 0 and P > 0):
        raise WarpError("ledger requires r > 0 and psi0 > 0")
    pi = sympy.pi
    rmax = pi / (4 * sympy.sqrt(3) + 2)
    q = {
        "4pi_psi0": 4 * pi * P,
        "12pi_psi0": 12 * pi * P,
        "16pi_r2": 16 * pi * R ** 2,
        "48pi_r2": 48 * pi * R ** 2,
        "pi_(pi-2r)^2": pi * (pi - 2 * R) ** 2,
    }
    verdicts = {
        "a": _compare(q["4pi_psi0"], q["16pi_r2"], strict=False),
        "b": _compare(q["12pi_psi0"], q["48pi_r2"], strict=True),
        "c": _compare(q["48pi_r2"], q["pi_(pi-2r)^2"], strict=True),
        "d": _compare(R, rmax, strict=True),
    }
    bounds = {k: float(sympy.N(v, 30)) for k, v in q.items()}
    return LedgerReport(float(sympy.N(R, 30)), float(sympy.N(P, 30)), bounds,
                        float(sympy.N(rmax, 30)), verdicts)


def quantization_values(psi0: float, m_max: int) -> list[float]:
    """[4 pi psi0, 8 pi psi0, ..., 4 m_max pi psi0]."""
    if not psi0 > 0:
        raise WarpError("psi0 must be positive")
    if int(m_max) < 1:
        raise WarpError("m_max must be at least 1")
    return [4.0 * m * math.pi * psi0 for m in range(1, int(m_max) + 1)]
