"""Two-shape population balance on extended, periodic radius domains.

Each shape obeys ``d psi/dt + G(t, r) d psi/dr = 0`` with the separable
growth rate ``G = g f(t) / r**m`` inside ``[r_min, r_max]`` and the boundary
value frozen outside. The radius axis is extended so that material which
nucleates during the horizon is already present at ``t = 0`` below
``r_min``, and the extended interval is closed periodically.

Characteristics are integrated exactly. Writing ``Lambda(r) = int dr / h(r)``
(with ``h`` frozen outside the window), a characteristic satisfies
``Lambda(rho(t)) = Lambda(rho(t0)) + g (F(t) - F(t0))`` where ``F`` is the
antiderivative of ``f``. ``Lambda`` is piecewise linear or a power, so window
crossings fall out of the closed-form inverse without root finding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad
from scipy.optimize import brentq

from .exceptions import ConfigurationError
from .kernel import _check_eta

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class ShapeSpec:
    """One crystal morphology."""

    eta: float
    g: float
    r_min: float
    r_max: float

    def __post_init__(self):
        _check_eta(self.eta)
        if not 0 < self.r_min < self.r_max:
            raise ConfigurationError(
                f"need 0 < r_min < r_max, got r_min={self.r_min}, r_max={self.r_max}")
        if not math.isfinite(self.g):
            raise ConfigurationError("growth constant g must be finite")


@dataclass(frozen=True)
class GrowthLaw:
    """Separable time profile ``f`` and size exponent ``m`` (``h(r) = r**-m``).

    ``f`` is either a polynomial (``poly``, increasing powers, integrated
    exactly) or an arbitrary callable integrated with adaptive quadrature.
    """

    T: float
    m: int = 0
    poly: tuple[float, ...] | None = (1.0,)
    f_callable: Callable[[float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T}")
        if int(self.m) != self.m or self.m < 0:
            raise ConfigurationError(f"exponent m must be a non-negative integer, got {self.m}")
        if self.poly is None and self.f_callable is None:
            raise ConfigurationError("growth law needs either poly coefficients or a callable")
        if self.poly is not None:
            object.__setattr__(self, "poly", tuple(float(c) for c in self.poly))

    def f(self, t):
        if self.poly is not None:
            return P.polyval(np.asarray(t, dtype=float), self.poly)
        return np.vectorize(self.f_callable, otypes=[float])(t)

    def F(self, t):
        """``int_0^t f``."""
        if self.poly is not None:
            return P.polyval(np.asarray(t, dtype=float), P.polyint(self.poly))
        t = np.asarray(t, dtype=float)
        out = np.array([quad(self.f_callable, 0.0, ti, epsabs=1e-13, epsrel=1e-12)[0]
                        for ti in t.ravel()])
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def _F_extrema(self):
        ts = np.linspace(0.0, self.T, 4001)
        if self.poly is not None and len(self.poly) > 1:
            roots = P.polyroots(self.poly)
            real = roots[np.abs(roots.imag) < 1e-12].real
            ts = np.concatenate([ts, real[(real > 0) & (real < self.T)]])
        vals = self.F(ts)
        return float(np.min(vals)), float(np.max(vals))

    def _check_time(self, *ts):
        for t in ts:
            if np.any(np.asarray(t) < -1e-12) or np.any(np.asarray(t) > self.T + 1e-12):
                raise ValueError(f"time {t} outside [0, {self.T}]")


def growth_rate(shape: ShapeSpec, law: GrowthLaw, t, r):
    """Growth velocity, frozen at the window boundary values outside the window."""
    law._check_time(t)
    rc = np.clip(np.asarray(r, dtype=float), shape.r_min, shape.r_max)
    out = shape.g * law.f(t) / rc**law.m
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ExtendedDomain:
    """Uniform periodic grid anchored on ``r_min``.

    Nodes are ``r_lo + j dx`` for ``j < n``; ``r_hi = r_lo + n dx`` is
    identified with ``r_lo``. ``r_min`` and ``r_max`` are nodes.
    """

    r_lo: float
    r_hi: float
    dx: float
    r_min: float
    r_max: float
    i_min: int
    i_max: int

    @property
    def grid(self) -> np.ndarray:
        return self.r_min + self.dx * (np.arange(self.n) - self.i_min)

    @property
    def n(self) -> int:
        return int(round((self.r_hi - self.r_lo) / self.dx))

    @property
    def length(self) -> float:
        return self.r_hi - self.r_lo

    @property
    def window(self) -> slice:
        """Rectangle-rule nodes of the physical window (left endpoints)."""
        return slice(self.i_min, self.i_max)

    @property
    def window_grid(self) -> np.ndarray:
        return self.grid[self.window]


def literal_extension(shape: ShapeSpec, law: GrowthLaw) -> tuple[float, float]:
    """Extended bounds before snapping to a grid."""
    fmin, fmax = law._F_extrema()
    # int_0^tau G(t, r_b) dt = g F(tau) / r_b**m; extrema over tau of g F
    lo_growth = [shape.g * fmin / shape.r_min**law.m, shape.g * fmax / shape.r_min**law.m]
    hi_growth = [shape.g * fmin / shape.r_max**law.m, shape.g * fmax / shape.r_max**law.m]
    r_lo = min(shape.r_min, shape.r_min - max(lo_growth))
    r_hi = max(shape.r_max, shape.r_max - min(hi_growth))
    return r_lo, r_hi


def extend_domain(shape: ShapeSpec, law: GrowthLaw, dx: float,
                  r_lo: float | None = None, r_hi: float | None = None) -> ExtendedDomain:
    """Grid the extended interval with spacing ``dx``.

    ``r_lo`` / ``r_hi`` override the literal bounds; bounds are rounded
    outward to grid nodes and at least one padding node is kept above
    ``r_max`` so the outflow boundary is sampled.
    """
    if not dx > 0:
        raise ConfigurationError(f"dx must be positive, got {dx}")
    lit_lo, lit_hi = literal_extension(shape, law)
    lo = lit_lo if r_lo is None else r_lo
    hi = lit_hi if r_hi is None else r_hi
    if lo > shape.r_min or hi < shape.r_max:
        raise ConfigurationError("domain overrides must contain [r_min, r_max]")
    n_window = (shape.r_max - shape.r_min) / dx
    if abs(n_window - round(n_window)) > _GRID_TOL * max(1.0, n_window):
        raise ConfigurationError(
            f"dx={dx} does not divide the window length {shape.r_max - shape.r_min}")
    n_window = int(round(n_window))
    k_lo = int(math.ceil((shape.r_min - lo) / dx - _GRID_TOL))
    k_hi = max(1, int(math.ceil((hi - shape.r_max) / dx - _GRID_TOL)))
    return ExtendedDomain(
        r_lo=shape.r_min - k_lo * dx,
        r_hi=shape.r_max + k_hi * dx,
        dx=dx,
        r_min=shape.r_min,
        r_max=shape.r_max,
        i_min=k_lo,
        i_max=k_lo + n_window,
    )


def _potential(shape, m, r):
    r = np.asarray(r, dtype=float)
    a, b = shape.r_min, shape.r_max
    lam_b = (b ** (m + 1) - a ** (m + 1)) / (m + 1)
    inside = (np.clip(r, a, b) ** (m + 1) - a ** (m + 1)) / (m + 1)
    below = a**m * np.minimum(r - a, 0.0)
    above = b**m * np.maximum(r - b, 0.0)
    out = below + inside + above
    return out, lam_b


def _inverse_potential(shape, m, lam):
    lam = np.asarray(lam, dtype=float)
    a, b = shape.r_min, shape.r_max
    lam_b = (b ** (m + 1) - a ** (m + 1)) / (m + 1)
    out = np.empty_like(lam)
    lo = lam < 0.0
    hi = lam > lam_b
    mid = ~(lo | hi)
    out[lo] = a + lam[lo] / a**m
    out[hi] = b + (lam[hi] - lam_b) / b**m
    out[mid] = (a ** (m + 1) + (m + 1) * lam[mid]) ** (1.0 / (m + 1))
    return out


def characteristic_advance(shape: ShapeSpec, law: GrowthLaw, r0, t0: float, t1: float,
                           domain: ExtendedDomain | None = None):
    """Position at ``t1`` of the characteristic through ``(t0, r0)``.

    With a ``domain`` the motion wraps periodically on ``[r_lo, r_hi)``.
    """
    law._check_time(t0, t1)
    scalar = np.ndim(r0) == 0
    r0 = np.atleast_1d(np.asarray(r0, dtype=float))
    m = int(law.m)
    budget = shape.g * (law.F(t1) - law.F(t0))
    lam, _ = _potential(shape, m, r0)
    target = lam + budget
    if domain is not None:
        lam_lo, _ = _potential(shape, m, domain.r_lo)
        lam_hi, _ = _potential(shape, m, domain.r_hi)
        period = lam_hi - lam_lo
        target = lam_lo + np.mod(target - lam_lo, period)
    out = _inverse_potential(shape, m, target)
    if domain is not None:
        # rounding in the inverse can land a hair outside the periodic cell
        out = np.where(out >= domain.r_hi, out - domain.length, out)
        out = np.where(out < domain.r_lo, out + domain.length, out)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class PsdState:
    """Sampled PSD ``psi(t, .)`` on an extended domain."""

    t: float
    values: np.ndarray
    domain: ExtendedDomain

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.domain.n,):
            raise ConfigurationError(
                f"PSD has {v.shape} samples, domain expects ({self.domain.n},)")
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> np.ndarray:
        return self.domain.grid

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["r", "psi"])
            for r, v in zip(self.grid, self.values):
                writer.writerow([f"{r:.17g}", f"{v:.17g}"])

    @staticmethod
    def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1]


class _PeriodicInterpolant:
    """Linear interpolation weights for sampling a periodic grid at fixed points."""

    def __init__(self, domain: ExtendedDomain, points: np.ndarray):
        pos = (points - domain.r_lo) / domain.dx
        i0 = np.floor(pos)
        frac = pos - i0
        # snap positions within rounding of a node onto it
        snap = np.isclose(frac, 1.0, rtol=0.0, atol=1e-9)
        i0 = np.where(snap, i0 + 1, i0)
        frac = np.where(snap | np.isclose(frac, 0.0, rtol=0.0, atol=1e-9), 0.0, frac)
        n = domain.n
        self.i0 = np.mod(i0.astype(np.int64), n)
        self.i1 = np.mod(self.i0 + 1, n)
        self.frac = frac

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return (1.0 - self.frac) * values[..., self.i0] + self.frac * values[..., self.i1]


def transport_map(shape: ShapeSpec, law: GrowthLaw, domain: ExtendedDomain,
                  t0: float, t1: float) -> _PeriodicInterpolant:
    """Semi-Lagrangian map taking samples at ``t0`` to samples at ``t1``."""
    feet = characteristic_advance(shape, law, domain.grid, t1, t0, domain)
    return _PeriodicInterpolant(domain, feet)


def transport_solve(initial: PsdState, shape: ShapeSpec, law: GrowthLaw, t1: float,
                    dt: float | None = None) -> PsdState:
    """Solve the transport equation from ``initial.t`` to ``t1`` (either direction).

    Without ``dt`` the exact characteristic map is applied once; with ``dt``
    the interval is covered in steps of ``dt`` (the last one possibly shorter),
    re-sampling on the grid after each step.
    """
    t0 = initial.t
    law._check_time(t0, t1)
    if t1 == t0 or shape.g == 0.0:
        return PsdState(t=t1, values=initial.values.copy(), domain=initial.domain)
    if dt is None:
        times = [t0, t1]
    else:
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        times = step_times(t0, t1, dt)
    values = initial.values
    for a, b in zip(times[:-1], times[1:]):
        values = transport_map(shape, law, initial.domain, a, b)(values)
    return PsdState(t=t1, values=values, domain=initial.domain)


def step_times(t0: float, t1: float, dt: float) -> list[float]:
    """Times from ``t0`` to ``t1`` in steps of ``dt``.

    When the span is a whole number of steps the nodes are ``min(t0, t1) + j dt``
    in either direction, so forward and backward solves visit the same floats
    as :func:`time_grid`; otherwise they are ``t0 +/- j dt`` with a short last step.
    """
    n = abs(t1 - t0) / dt
    if abs(n - round(n)) < 1e-9:
        k = int(round(n))
        lo, hi = min(t0, t1), max(t0, t1)
        times = [lo + j * dt for j in range(k)] + [hi]
        return times if t1 >= t0 else times[::-1]
    k = int(math.ceil(n))
    sgn = 1.0 if t1 >= t0 else -1.0
    return [t0 + sgn * j * dt for j in range(k)] + [t1]


def time_grid(T: float, dt: float) -> np.ndarray:
    n = T / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigurationError(f"dt={dt} does not divide the horizon T={T}")
    out = np.arange(int(round(n)) + 1) * dt
    out[-1] = T
    return out


def embed_nucleation(u: Callable[[float], float], shape: ShapeSpec, law: GrowthLaw,
                     domain: ExtendedDomain, t: float = 0.0) -> PsdState:
    """Encode the inflow ``u`` at ``r_min`` as PSD values on the strip below ``r_min``.

    The node at ``r`` receives ``u(t + tau)`` where ``tau`` is the time needed
    to reach ``r_min`` at the frozen boundary velocity. Nodes that would not
    reach ``r_min`` before the horizon are left at zero. Values on and above
    ``r_min`` are zero.
    """
    law._check_time(t)
    values = np.zeros(domain.n)
    strip = np.arange(domain.i_min)
    if strip.size == 0:
        return PsdState(t=t, values=values, domain=domain)
    ts = np.linspace(t, law.T, 2001)
    speed = shape.g * law.f(ts)
    if np.all(speed == 0.0):
        raise ConfigurationError("growth at r_min vanishes; nucleation embedding undefined")
    if np.any(speed < 0.0):
        raise ConfigurationError("growth at r_min changes sign or is negative; "
                                 "inflow cannot be embedded")
    scale = shape.r_min**law.m / shape.g
    F_t = law.F(t)
    F_end = law.F(law.T)
    for j in strip:
        need = (shape.r_min - domain.grid[j]) * scale
        if F_t + need > F_end + 1e-14:
            continue
        if need == 0.0:
            tau = 0.0
        elif F_end - F_t - need <= 0.0:
            tau = law.T - t  # arrives exactly at the horizon, up to rounding
        else:
            tau = brentq(lambda s: law.F(t + s) - F_t - need, 0.0, law.T - t, xtol=1e-14)
        values[j] = u(t + tau)
    return PsdState(t=t, values=values, domain=domain)
