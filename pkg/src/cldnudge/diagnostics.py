"""Observability diagnostics for a pair of spheroid shapes.

Three families of checks:

* the geometric separation condition ``r1**2 A(eta2) != r2**2 A(eta1)``;
* the asymptotics of the inverse-power moments ``F^{2n}(psi)`` near ``r_min``;
* the two sides ``U_n`` and ``V_n`` of the moment identity obtained by
  differentiating ``K_1 psi_1 = K_2 psi_2`` twice in time, whose ratio limits
  must differ when the condition holds.

Quantities such as ``r**-2n`` leave floating point range for ``n`` in the
hundreds, so sequences are carried as ``(log|x|, sign)`` pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernel import OrientationQuadrature, amplification, log_a_moments
from .population import PsdState, ShapeSpec

_COND_RTOL = 1e-9


@dataclass(frozen=True)
class ConditionReport:
    lhs: float
    rhs: float
    satisfied: bool
    margin: float


def check_condition(shape1: ShapeSpec, shape2: ShapeSpec) -> ConditionReport:
    lhs = shape1.r_min**2 * amplification(shape2.eta)
    rhs = shape2.r_min**2 * amplification(shape1.eta)
    margin = abs(lhs - rhs) / max(lhs, rhs)
    return ConditionReport(lhs=lhs, rhs=rhs, satisfied=margin > _COND_RTOL, margin=margin)


def _signed_sum(logs, signs):
    """``sum sign_k exp(log_k)`` as ``(log|s|, sign)``; zero terms carry ``-inf``."""
    logs = np.asarray(logs, dtype=float)
    signs = np.asarray(signs, dtype=float)
    if np.all(np.isneginf(logs)):
        return -np.inf, 0.0
    val, sgn = logsumexp(logs, b=signs, return_sign=True)
    return float(val), float(sgn)


def _log_term(coef, log_mag):
    if coef == 0.0:
        return -np.inf, 0.0
    return math.log(abs(coef)) + log_mag, math.copysign(1.0, coef)


@dataclass
class SequencePair:
    n: np.ndarray
    log_u: np.ndarray
    sign_u: np.ndarray
    log_v: np.ndarray
    sign_v: np.ndarray

    def ratios(self):
        """``U_{n+1}/U_n`` and ``V_{n+1}/V_n`` (nan where a term vanishes)."""
        def rat(lg, sg):
            with np.errstate(invalid="ignore"):
                r = np.exp(np.diff(lg)) * sg[1:] * sg[:-1]
            r[(sg[1:] == 0) | (sg[:-1] == 0)] = np.nan
            return r
        return rat(self.log_u, self.sign_u), rat(self.log_v, self.sign_v)


def log_moment_F(psi: PsdState, n: int) -> tuple[float, float]:
    """Rectangle-rule ``F^n(psi)`` as ``(log|F|, sign)``."""
    dom = psi.domain
    r = dom.window_grid
    vals = psi.values[dom.window] * dom.dx
    nz = vals != 0
    logs = np.full(vals.shape, -np.inf)
    logs[nz] = np.log(np.abs(vals[nz])) - n * np.log(r[nz])
    return _signed_sum(logs, np.sign(vals))


def un_vn_sequences(boundary1: tuple[float, float], boundary2: tuple[float, float],
                    log_F1: dict[int, tuple[float, float]] | callable,
                    shape1: ShapeSpec, shape2: ShapeSpec, m: int, n_range,
                    quad: OrientationQuadrature | None = None) -> SequencePair:
    """Evaluate ``U_n`` and ``V_n`` over ``n_range``.

    Parameters
    ----------
    boundary1, boundary2:
        ``(psi_i(r_i), d psi_i/dr (r_i))`` at the lower window edge of each shape.
    log_F1:
        ``F_1^{2n+2}(psi_1)`` as ``(log|F|, sign)``, either a mapping keyed by
        ``2n + 2`` or a callable of that order.
    """
    n_range = np.asarray(list(n_range), dtype=int)
    if n_range.size == 0:
        raise ValueError("empty n_range")
    if n_range.min() - m < 1:
        raise IndexError(f"U_n/V_n need n - m >= 1; got n={n_range.min()}, m={m}")
    get_F = log_F1 if callable(log_F1) else log_F1.__getitem__
    n_top = int(n_range.max()) + 1
    la1 = log_a_moments(shape1.eta, n_top, quad)
    la2 = log_a_moments(shape2.eta, n_top, quad)
    gr = (shape2.g / shape1.g) ** 2
    p1, dp1 = boundary1
    p2, dp2 = boundary2
    r1, r2 = shape1.r_min, shape2.r_min

    log_u = np.empty(n_range.size)
    sign_u = np.empty(n_range.size)
    log_v = np.empty(n_range.size)
    sign_v = np.empty(n_range.size)
    for k, n in enumerate(n_range):
        # U_n = gr a_{n-m}(2)/a_{n-m}(1) r2**(-2n-1) (-dp2 r2 - (2n-m) p2)
        bracket = -dp2 * r2 - (2 * n - m) * p2
        lu, su = _log_term(bracket, (-2 * n - 1) * math.log(r2))
        if su != 0.0:
            lu += math.log(gr) + la2[n - m] - la1[n - m]
        log_u[k], sign_u[k] = lu, su

        ratio = gr * math.exp(la2[n - m] - la2[n + 1] + la1[n + 1] - la1[n - m])
        lf, sf = get_F(2 * n + 2)
        terms = [
            _log_term(-dp1, -2 * n * math.log(r1)),
            _log_term(-(2 * n - m) * p1, (-2 * n - 1) * math.log(r1)),
        ]
        if sf != 0.0:
            lt, st = _log_term(-(2 * n - m) * (2 * n + 1) * (1.0 - ratio), lf)
            terms.append((lt, st * sf))
        log_v[k], sign_v[k] = _signed_sum([t[0] for t in terms], [t[1] for t in terms])
    return SequencePair(n_range, log_u, sign_u, log_v, sign_v)


def boundary_values(psi: PsdState) -> tuple[float, float]:
    """``psi(r_min)`` and a second-order one-sided ``d psi/dr`` at ``r_min``."""
    dom = psi.domain
    v = psi.values
    i = dom.i_min
    return float(v[i]), float((-3.0 * v[i] + 4.0 * v[i + 1] - v[i + 2]) / (2.0 * dom.dx))


def scaled_moment(psi: PsdState, n: int) -> float:
    """``r_min**(n-1) F^n(psi)`` with ``psi`` linearly interpolated between samples.

    The scaling keeps the value finite for large ``n``; linear functions are
    integrated exactly.
    """
    dom = psi.domain
    a = dom.r_min
    r = dom.grid[dom.i_min:dom.i_max + 1]
    v = psi.values[dom.i_min:dom.i_max + 1]
    x0, x1 = r[:-1] / a, r[1:] / a
    slope = np.diff(v) / np.diff(r)
    c0 = v[:-1] - slope * r[:-1]  # psi = c0 + slope * r on each segment

    def prim(x, p):
        # int x**-p dx
        return np.log(x) if p == 1 else x ** (1 - p) / (1 - p)

    seg = c0 * (prim(x1, n) - prim(x0, n)) + slope * a * (prim(x1, n - 1) - prim(x0, n - 1))
    return float(np.sum(seg))


@dataclass
class AsymptoticsReport:
    variant: str  # "value", "slope" or "skipped"
    n: np.ndarray
    ratio: np.ndarray  # tends to 1 when the asymptotic equivalent holds

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.ratio - 1.0)


def moment_asymptotics_check(psi: PsdState, n_range, zero_tol: float = 1e-12) -> AsymptoticsReport:
    """Compare ``F^{2n}`` with its leading behaviour driven by the boundary at ``r_min``."""
    n_range = np.asarray(list(n_range), dtype=int)
    scale = float(np.max(np.abs(psi.values[psi.domain.i_min:psi.domain.i_max + 1]), initial=0.0))
    if scale == 0.0:
        return AsymptoticsReport("skipped", n_range, np.full(n_range.size, np.nan))
    val, slope = boundary_values(psi)
    a = psi.domain.r_min
    s = np.array([scaled_moment(psi, 2 * n) for n in n_range])
    if abs(val) > zero_tol * scale:
        return AsymptoticsReport("value", n_range, 2 * n_range * s / val)
    if abs(slope) > zero_tol * scale / psi.domain.dx:
        return AsymptoticsReport("slope", n_range, 4 * n_range**2 * s / (a * slope))
    return AsymptoticsReport("skipped", n_range, np.full(n_range.size, np.nan))


def ratio_limits(shape1: ShapeSpec, shape2: ShapeSpec) -> tuple[float, float]:
    """Limits of ``U_{n+1}/U_n`` and of ``V_{n+1}/V_n``."""
    u_lim = amplification(shape2.eta) / (shape2.r_min**2 * amplification(shape1.eta))
    return u_lim, 1.0 / shape1.r_min**2
