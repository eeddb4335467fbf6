"""Orientation-averaged chord kernel of a spheroid.

A spheroid of equatorial radius ``r`` and eccentricity ``eta`` projects onto
an ellipse whose chord-length CDF is ``1 - sqrt(1 - alpha * l**2 / (4 r**2))``.
Averaging over a uniformly random orientation gives the kernel ``k(l, r)``.
The orientation average is computed with a tensor midpoint rule in
``(phi, cos(theta))`` so that the weights form an exact probability measure.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import ConfigurationError

#: nodes are processed in blocks of this many orientation samples
_CHUNK = 1 << 14


def amplification(eta: float) -> float:
    """Supremum of ``alpha_eta`` over orientations: 1 if eta >= 1 else 1/eta**2."""
    _check_eta(eta)
    return 1.0 if eta >= 1.0 else 1.0 / eta**2


def _check_eta(eta):
    if not eta > 0:
        raise ConfigurationError(f"eccentricity must be positive, got {eta!r}")


def alpha(eta, phi, theta):
    """Projection coefficient of a spheroid seen at orientation ``(phi, theta)``."""
    _check_eta(eta)
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c2 = np.cos(theta) ** 2
    s2 = np.sin(theta) ** 2
    return np.cos(phi) ** 2 / (c2 + eta**2 * s2) + np.sin(phi) ** 2


@dataclass(frozen=True)
class OrientationQuadrature:
    """Midpoint rule on ``[0, 2pi) x [-1, 1]`` in ``(phi, u = cos(theta))``.

    The substitution ``u = cos(theta)`` turns the density ``sin(theta)/(4 pi)``
    into the uniform density on the rectangle, so every node carries the
    weight ``1 / (n_phi * n_theta)``.
    """

    n_phi: int = 256
    n_theta: int = 256
    phi_shift: float = 0.0
    phi: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)
    u: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_phi < 2 or self.n_theta < 2:
            raise ConfigurationError("orientation quadrature needs at least 2x2 nodes")
        phi = (np.arange(self.n_phi) + 0.5) * (2.0 * np.pi / self.n_phi) + self.phi_shift
        u = -1.0 + (np.arange(self.n_theta) + 0.5) * (2.0 / self.n_theta)
        pp, uu = np.meshgrid(phi, u, indexing="ij")
        object.__setattr__(self, "phi", pp.ravel())
        object.__setattr__(self, "u", uu.ravel())
        object.__setattr__(self, "theta", np.arccos(uu.ravel()))
        w = np.full(pp.size, 1.0 / pp.size)
        object.__setattr__(self, "weights", w)

    def alpha_nodes(self, eta: float) -> np.ndarray:
        _check_eta(eta)
        u2 = self.u**2
        return np.cos(self.phi) ** 2 / (u2 + eta**2 * (1.0 - u2)) + np.sin(self.phi) ** 2

    def merged_nodes(self, eta: float) -> tuple[np.ndarray, np.ndarray]:
        """Distinct ``alpha`` values with their summed weights.

        Symmetric nodes give the same ``alpha`` up to rounding; values closer
        than ``1e-13`` relative are pooled.
        """
        key = float(eta)
        cache = self.__dict__.setdefault("_merged", {})
        if key not in cache:
            a = self.alpha_nodes(eta)
            order = np.argsort(a, kind="stable")
            a, w = a[order], self.weights[order]
            brk = np.flatnonzero(np.diff(a) > 1e-13 * a[1:]) + 1
            starts = np.concatenate(([0], brk))
            wsum = np.add.reduceat(w, starts)
            amean = np.add.reduceat(a * w, starts) / wsum
            cache[key] = (amean, wsum)
        return cache[key]


_DEFAULT_QUAD: OrientationQuadrature | None = None


def default_quadrature() -> OrientationQuadrature:
    global _DEFAULT_QUAD
    if _DEFAULT_QUAD is None:
        _DEFAULT_QUAD = OrientationQuadrature()
    return _DEFAULT_QUAD


def _kernel_from_ratio(s2, alpha_nodes, weights):
    """``1 - E[sqrt(max(0, 1 - s2 * alpha))]`` for an array of ``s2 = l**2/(4 r**2)``."""
    s2 = np.asarray(s2, dtype=float)
    flat = s2.ravel()
    acc = np.zeros(flat.shape)
    for start in range(0, alpha_nodes.size, _CHUNK):
        a = alpha_nodes[start:start + _CHUNK]
        w = weights[start:start + _CHUNK]
        root = np.sqrt(np.maximum(0.0, 1.0 - flat[:, None] * a[None, :]))
        acc += root @ w
    return (1.0 - acc).reshape(s2.shape)


def kernel_point(eta, ell, r, quad: OrientationQuadrature | None = None):
    """Probability that a chord measured on a crystal of radius ``r`` is shorter than ``ell``.

    ``ell`` and ``r`` broadcast against each other.
    """
    quad = quad or default_quadrature()
    ell = np.asarray(ell, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    if np.any(ell < 0):
        raise ValueError("chord length must be non-negative")
    s2 = ell**2 / (4.0 * r**2)
    out = _kernel_from_ratio(s2, *quad.merged_nodes(eta))
    return np.clip(out, 0.0, 1.0) if out.ndim else float(np.clip(out, 0.0, 1.0))


def sphere_kernel_closed_form(ell, r):
    ell = np.asarray(ell, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    out = 1.0 - np.sqrt(np.maximum(0.0, 1.0 - ell**2 / (4.0 * r**2)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KernelTable:
    """Kernel sampled on a ``(r, ell)`` grid; ``values[i, j] = k(ell[j], r[i])``."""

    eta: float
    ell_grid: np.ndarray
    r_grid: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["r\\ell"] + [_fmt(v) for v in self.ell_grid])
            for r, row in zip(self.r_grid, self.values):
                writer.writerow([_fmt(r)] + [_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path, eta: float) -> "KernelTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        ell = np.array([float(v) for v in rows[0][1:]])
        r = np.array([float(row[0]) for row in rows[1:]])
        values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        return cls(eta=eta, ell_grid=ell, r_grid=r, values=values)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _check_increasing(name, grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigurationError(f"{name} must be a non-empty 1-d array")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ConfigurationError(f"{name} must be strictly increasing")
    return grid


def build_kernel_table(eta, ell_grid, r_grid, quad: OrientationQuadrature | None = None) -> KernelTable:
    ell_grid = _check_increasing("ell_grid", ell_grid)
    r_grid = _check_increasing("r_grid", r_grid)
    if r_grid[0] <= 0:
        raise ConfigurationError("r_grid must be positive")
    if ell_grid[0] < 0:
        raise ConfigurationError("ell_grid must be non-negative")
    values = kernel_point(eta, ell_grid[None, :], r_grid[:, None], quad)
    values = np.atleast_2d(values)
    # past the longest chord every orientation is saturated
    values[ell_grid[None, :] >= 2.0 * r_grid[:, None] * max(1.0, eta)] = 1.0
    # the CDF must not decrease through rounding in the quadrature sum
    values = np.maximum.accumulate(values, axis=1)
    values.setflags(write=False)
    return KernelTable(eta=float(eta), ell_grid=ell_grid, r_grid=r_grid, values=values)


def log_a_moment(eta, n, quad: OrientationQuadrature | None = None) -> float:
    """``log E[alpha_eta**n]``, computed per node in log space."""
    if n < 0:
        raise ValueError("moment order must be non-negative")
    quad = quad or default_quadrature()
    la = np.log(quad.alpha_nodes(eta))
    return float(logsumexp(n * la, b=quad.weights))


def log_a_moments(eta, n_max, quad: OrientationQuadrature | None = None) -> np.ndarray:
    """``log a_n`` for ``n = 0..n_max`` (index ``n``)."""
    quad = quad or default_quadrature()
    la = np.log(quad.alpha_nodes(eta))
    n = np.arange(n_max + 1)[:, None]
    return logsumexp(n * la[None, :], b=quad.weights[None, :], axis=1)


def a_moment(eta, n, quad: OrientationQuadrature | None = None) -> float:
    if n < 1:
        raise ValueError("moment order must be >= 1")
    return math.exp(log_a_moment(eta, n, quad))


def series_coefficient(n: int) -> float:
    """Coefficient of ``l**(2n) / r**(2n)`` in the expansion of the kernel.

    ``1 - sqrt(1 - x) = sum_n c_n x**n`` with
    ``c_n = (2n)! / ((2n - 1) (n!)**2 4**n)``, evaluated at
    ``x = alpha * l**2 / (4 r**2)``; hence ``beta_n = c_n / 4**n``.
    """
    if n < 1:
        raise ValueError("series index must be >= 1")
    log_c = gammaln(2 * n + 1) - 2 * gammaln(n + 1) - n * math.log(4.0) - math.log(2 * n - 1)
    return math.exp(log_c - n * math.log(4.0))


def printed_series_coefficient(n: int) -> float:
    """``1 / ((n!)**2 (1 - 2n) 16**n)``, kept for comparison with :func:`series_coefficient`."""
    if n < 1:
        raise ValueError("series index must be >= 1")
    return 1.0 / (math.factorial(n) ** 2 * (1 - 2 * n) * 16.0**n)
