"""Back-and-forth nudging reconstruction of the initial PSDs from a CLD record.

One iteration is a forward Luenberger pass over ``[0, T]`` followed by a
backward pass from ``T`` to 0; the end state of each pass seeds the next.
Each Euler step applies the output-injection correction at the current
time and then moves the samples along the exact characteristics:

    forward   psi_{k+1} = S_k   (psi_k     - mu dt K*(K psi_k     - Q_k))
    backward  psi_k     = S_k^-1(psi_{k+1} - mu dt K*(K psi_{k+1} - Q_{k+1}))

The correction sign is the same in both formulas because the backward
observer runs reversed time with the opposite injection sign.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, NumericalAbort
from .operator import CldOperator
from .population import ExtendedDomain, GrowthLaw, ShapeSpec, transport_map

logger = logging.getLogger(__name__)


class ObserverModel:
    """Shapes, growth law, grids and the cached per-step transport maps."""

    def __init__(self, shapes: Sequence[ShapeSpec], law: GrowthLaw,
                 domains: Sequence[ExtendedDomain], operator: CldOperator,
                 times: np.ndarray):
        self.shapes = tuple(shapes)
        self.law = law
        self.domains = tuple(domains)
        self.operator = operator
        self.times = np.asarray(times, dtype=float)
        steps = np.diff(self.times)
        if steps.size == 0 or not np.allclose(steps, steps[0]):
            raise ConfigurationError("observer time grid must be uniform with at least 2 samples")
        self.dt = float(steps[0])
        self._fwd = None
        self._bwd = None

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def _build_maps(self):
        t = self.times
        self._fwd = [[transport_map(s, self.law, d, t[k], t[k + 1])
                      for s, d in zip(self.shapes, self.domains)]
                     for k in range(self.n_steps)]
        self._bwd = [[transport_map(s, self.law, d, t[k + 1], t[k])
                      for s, d in zip(self.shapes, self.domains)]
                     for k in range(self.n_steps)]

    def forward_map(self, k):
        if self._fwd is None:
            self._build_maps()
        return self._fwd[k]

    def backward_map(self, k):
        if self._bwd is None:
            self._build_maps()
        return self._bwd[k]

    def simulate(self, psi0: Sequence[np.ndarray]) -> list[list[np.ndarray]]:
        """Truth trajectory on the time grid: ``out[k][i]`` is shape ``i`` at ``t_k``."""
        traj = [[np.asarray(p, dtype=float).copy() for p in psi0]]
        for k in range(self.n_steps):
            traj.append([m(v) for m, v in zip(self.forward_map(k), traj[-1])])
        return traj

    def measure(self, trajectory) -> np.ndarray:
        return np.stack([self.operator.apply(state) for state in trajectory])


def stability_number(model: ObserverModel, mu: float) -> float:
    """``mu dt ||K*K||``; explicit correction steps need this below 2."""
    return mu * model.dt * model.operator.normal_norm()


@dataclass
class PassResult:
    state: list[np.ndarray]
    innovation: np.ndarray  # ||K psi_k - Q_k||_Y at every time sample


def _correct(model, state, q, mu, dt, sign_step, step, direction):
    # overflow is reported below as NumericalAbort
    with np.errstate(over="ignore", invalid="ignore"):
        innov = model.operator.apply(state) - q
        corr = model.operator.adjoint(innov)
        new = [v - mu * dt * c for v, c in zip(state, corr)]
        norm = model.operator.norm_y(innov)
    for v in new:
        if not np.all(np.isfinite(v)):
            raise NumericalAbort(
                f"{direction} pass produced non-finite values at step {step} "
                f"(t={model.times[sign_step]:.6g}); reduce mu*dt")
    return new, norm


def forward_pass(estimate0: Sequence[np.ndarray], record: np.ndarray, mu: float,
                 model: ObserverModel) -> PassResult:
    record = _check_record(record, model)
    state = [np.asarray(v, dtype=float) for v in estimate0]
    norms = np.empty(model.n_steps + 1)
    for k in range(model.n_steps):
        state, norms[k] = _correct(model, state, record[k], mu, model.dt, k, k, "forward")
        state = [m(v) for m, v in zip(model.forward_map(k), state)]
    with np.errstate(over="ignore", invalid="ignore"):
        norms[-1] = model.operator.norm_y(model.operator.apply(state) - record[-1])
    return PassResult(state, norms)


def backward_pass(estimateT: Sequence[np.ndarray], record: np.ndarray, mu: float,
                  model: ObserverModel) -> PassResult:
    record = _check_record(record, model)
    state = [np.asarray(v, dtype=float) for v in estimateT]
    norms = np.empty(model.n_steps + 1)
    for k in range(model.n_steps, 0, -1):
        state, norms[k] = _correct(model, state, record[k], mu, model.dt, k, k, "backward")
        state = [m(v) for m, v in zip(model.backward_map(k - 1), state)]
    with np.errstate(over="ignore", invalid="ignore"):
        norms[0] = model.operator.norm_y(model.operator.apply(state) - record[0])
    return PassResult(state, norms)


def _check_record(record, model):
    record = np.asarray(record, dtype=float)
    expected = (model.times.size, model.operator.ell_grid.size)
    if record.shape != expected:
        raise ConfigurationError(f"record shape {record.shape} does not match grids {expected}")
    return record


@dataclass
class Metrics:
    l2: tuple[float, ...]
    peak: tuple[float, ...]
    innovation: float


def error_metrics(estimate: Sequence[np.ndarray], truth: Sequence[np.ndarray],
                  domains: Sequence[ExtendedDomain], innovation: float = 0.0) -> Metrics:
    """L2 error and arg-max displacement per shape on the extended domains.

    The peak error is ``nan`` when exactly one of the two profiles is zero.
    """
    l2, peak = [], []
    for e, t, d in zip(estimate, truth, domains):
        e = np.asarray(e, dtype=float)
        t = np.asarray(t, dtype=float)
        if e.shape != t.shape or e.shape != (d.n,):
            raise ConfigurationError("estimate and truth must live on the same grid")
        l2.append(float(np.sqrt(np.sum((e - t) ** 2) * d.dx)))
        if np.all(e == 0.0) and np.all(t == 0.0):
            peak.append(0.0)
        elif np.all(e == 0.0) or np.all(t == 0.0):
            # arg-max of an identically zero profile is meaningless
            peak.append(float("nan"))
        else:
            peak.append(float(abs(d.grid[np.argmax(e)] - d.grid[np.argmax(t)])))
    return Metrics(tuple(l2), tuple(peak), float(innovation))


@dataclass
class EstimateHistory:
    """Estimates at ``t = 0`` after each iteration (index 0 is the initial guess)."""

    estimates: list[list[np.ndarray]] = field(default_factory=list)
    innovation: list[float] = field(default_factory=list)
    metrics: list[Metrics] = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.estimates) - 1


def bfn_run(record: np.ndarray, model: ObserverModel, mu: float, n_iterations: int,
            initial_guess: Sequence[np.ndarray] | None = None,
            truth: Sequence[np.ndarray] | None = None,
            keep: Sequence[int] | None = None,
            check_stability: bool = True) -> EstimateHistory:
    """Alternate forward and backward passes ``n_iterations`` times.

    ``keep`` restricts which iterations store full estimates (the last one is
    always stored); metrics are recorded for every iteration when ``truth``
    is given.
    """
    if mu < 0:
        raise ConfigurationError("observer gain mu must be non-negative")
    if n_iterations < 0:
        raise ConfigurationError("n_iterations must be non-negative")
    if check_stability and mu > 0:
        s = stability_number(model, mu)
        if s >= 2.0:
            raise ConfigurationError(
                f"mu*dt*||K*K|| = {s:.3g} >= 2; the explicit correction is unstable")
    if initial_guess is None:
        initial_guess = [np.zeros(d.n) for d in model.domains]
    state = [np.asarray(v, dtype=float).copy() for v in initial_guess]
    keep = None if keep is None else set(keep)

    hist = EstimateHistory()
    with np.errstate(over="ignore", invalid="ignore"):
        innov0 = model.operator.norm_y(model.operator.apply(state) - record[0])
    hist.estimates.append([v.copy() for v in state])
    hist.innovation.append(innov0)
    if truth is not None:
        hist.metrics.append(error_metrics(state, truth, model.domains, innov0))

    for it in range(1, n_iterations + 1):
        fwd = forward_pass(state, record, mu, model)
        bwd = backward_pass(fwd.state, record, mu, model)
        state = bwd.state
        innov = float(np.sqrt(model.dt * np.sum(fwd.innovation**2)))
        hist.innovation.append(innov)
        if keep is None or it in keep or it == n_iterations:
            hist.estimates.append([v.copy() for v in state])
        else:
            hist.estimates.append(None)
        if truth is not None:
            hist.metrics.append(error_metrics(state, truth, model.domains, innov))
        logger.debug("iteration %d innovation %.3e", it, innov)
    return hist
