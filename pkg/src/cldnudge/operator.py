"""Measurement operator from a PSD pair to the cumulative chord length distribution.

The operator integrates each PSD against its kernel over the physical window
with the left-endpoint rectangle rule. The kernel is extended by zero on the
extension strips, so the adjoint vanishes there. Inner products are plain
sums scaled by ``dx`` (PSD side) and ``dl`` (CLD side), and the adjoint uses
the same weights, which makes the discrete adjoint identity exact up to
rounding.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError
from .kernel import KernelTable, OrientationQuadrature, build_kernel_table
from .population import ExtendedDomain, PsdState, ShapeSpec


def max_chord(shapes: Sequence[ShapeSpec]) -> float:
    return 2.0 * max(s.r_max * max(1.0, s.eta) for s in shapes)


def chord_grid(shapes: Sequence[ShapeSpec], d_ell: float) -> np.ndarray:
    """Uniform chord grid ``0, d_ell, ..., >= l_max`` (rounded up to a node)."""
    if not d_ell > 0:
        raise ConfigurationError(f"chord step must be positive, got {d_ell}")
    n = int(np.ceil(max_chord(shapes) / d_ell - 1e-9))
    return np.arange(n + 1) * d_ell


@dataclass(frozen=True)
class CldCurve:
    t: float
    ell_grid: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["ell", "Q"])
            for ell, q in zip(self.ell_grid, self.values):
                writer.writerow([f"{ell:.17g}", f"{q:.17g}"])


class CldOperator:
    """Discretised ``K`` for two shapes on their extended domains.

    Parameters
    ----------
    shapes, domains:
        One entry per crystal shape.
    ell_grid:
        Uniform chord grid starting at 0.
    quad:
        Orientation quadrature used to tabulate the kernels.
    tables:
        Pre-built kernel tables; built from ``quad`` when omitted.
    """

    def __init__(self, shapes: Sequence[ShapeSpec], domains: Sequence[ExtendedDomain],
                 ell_grid: np.ndarray, quad: OrientationQuadrature | None = None,
                 tables: Sequence[KernelTable] | None = None):
        if len(shapes) != len(domains):
            raise ConfigurationError("one domain per shape is required")
        self.shapes = tuple(shapes)
        self.domains = tuple(domains)
        self.ell_grid = np.asarray(ell_grid, dtype=float)
        steps = np.diff(self.ell_grid)
        if self.ell_grid[0] != 0.0 or steps.size == 0 or not np.allclose(steps, steps[0]):
            raise ConfigurationError("chord grid must be uniform and start at 0")
        self.d_ell = float(steps[0])
        if tables is None:
            tables = [build_kernel_table(s.eta, self.ell_grid, d.window_grid, quad)
                      for s, d in zip(self.shapes, self.domains)]
        for table, dom in zip(tables, self.domains):
            if (table.ell_grid.shape != self.ell_grid.shape
                    or not np.allclose(table.ell_grid, self.ell_grid)
                    or table.r_grid.shape != dom.window_grid.shape
                    or not np.allclose(table.r_grid, dom.window_grid)):
                raise ConfigurationError("kernel table grids do not match the operator grids")
        self.tables = tuple(tables)
        # (n_ell, n_window) blocks including the rectangle weight dx
        self._blocks = [t.values.T * d.dx for t, d in zip(self.tables, self.domains)]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(d.n for d in self.domains)

    def _split(self, psis):
        if len(psis) != len(self.domains):
            raise ConfigurationError("expected one PSD per shape")
        out = []
        for psi, dom in zip(psis, self.domains):
            v = psi.values if isinstance(psi, PsdState) else np.asarray(psi, dtype=float)
            if v.shape[-1] != dom.n:
                raise ConfigurationError(
                    f"PSD with {v.shape[-1]} samples does not match domain of {dom.n} nodes")
            out.append(v)
        return out

    def apply(self, psis) -> np.ndarray:
        """``Q(l) = sum_i int_window k_i(l, r) psi_i(r) dr``; accepts stacked samples."""
        out = 0.0
        for v, block, dom in zip(self._split(psis), self._blocks, self.domains):
            out = out + v[..., dom.window] @ block.T
        return np.asarray(out)

    def adjoint(self, q) -> list[np.ndarray]:
        """``(K* Q)_i(r) = int k_i(l, r) Q(l) dl`` on the window, zero on the strips."""
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.ell_grid.size:
            raise ConfigurationError(
                f"CLD with {q.shape[-1]} samples does not match chord grid of {self.ell_grid.size}")
        out = []
        for table, dom in zip(self.tables, self.domains):
            field = np.zeros(q.shape[:-1] + (dom.n,))
            field[..., dom.window] = (q @ table.values.T) * self.d_ell
            out.append(field)
        return out

    def inner_y(self, q1, q2) -> float:
        return float(np.sum(np.asarray(q1) * np.asarray(q2)) * self.d_ell)

    def inner_x(self, a, b) -> float:
        return float(sum(np.sum(ai * bi) * d.dx for ai, bi, d in zip(a, b, self.domains)))

    def norm_y(self, q) -> float:
        return float(np.sqrt(self.inner_y(q, q)))

    def norm_x(self, a) -> float:
        return float(np.sqrt(self.inner_x(a, a)))

    def normal_norm(self, n_iter: int = 200, seed: int = 0) -> float:
        """Largest eigenvalue of ``K* K`` by power iteration."""
        rng = np.random.default_rng(seed)
        v = [rng.standard_normal(d.n) for d in self.domains]
        lam = 0.0
        for _ in range(n_iter):
            w = self.adjoint(self.apply(v))
            nw = self.norm_x(w)
            if nw == 0.0:
                return 0.0
            lam = nw / self.norm_x(v)
            v = [wi / nw for wi in w]
        return float(lam)


def moment_F(psi: PsdState, n: int) -> float:
    """Rectangle-rule ``int_window psi(r) / r**n dr``."""
    if n < 0:
        raise ValueError("moment order must be non-negative")
    dom = psi.domain
    r = dom.window_grid
    return float(np.sum(psi.values[dom.window] / r**n) * dom.dx)


def output_energy(record: np.ndarray, dt: float, d_ell: float) -> float:
    """``int_0^T ||Q(t)||_Y**2 dt``; trapezoid in time over rows of ``record``."""
    record = np.asarray(record, dtype=float)
    if record.ndim != 2:
        raise ValueError("record must be (n_times, n_ell)")
    sq = np.sum(record**2, axis=1) * d_ell
    if sq.size == 1:
        return 0.0
    return float(dt * (0.5 * sq[0] + sq[1:-1].sum() + 0.5 * sq[-1]))


def write_record_csv(path, times: np.ndarray, ell_grid: np.ndarray, record: np.ndarray) -> None:
    """Long-format CSV with columns ``t, ell, Q``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "ell", "Q"])
        for t, row in zip(times, record):
            for ell, q in zip(ell_grid, row):
                writer.writerow([f"{t:.17g}", f"{ell:.17g}", f"{q:.17g}"])


def read_record_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(data[:, 0])
    ell = data[data[:, 0] == times[0], 1]
    record = data[:, 2].reshape(times.size, ell.size)
    return times, ell, record
