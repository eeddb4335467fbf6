"""scikit-learn style front ends.

:class:`CLDTransformer` wraps the measurement operator as a linear
transformer from stacked PSD samples to CLD curves. :class:`BFNObserver`
fits the initial PSD pair to a recorded CLD time series.

PSD pairs are exchanged as one row per sample with shape-1 nodes followed by
shape-2 nodes (``n1 + n2`` columns).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError
from .kernel import OrientationQuadrature
from .observer import ObserverModel, bfn_run
from .operator import CldOperator, chord_grid
from .population import GrowthLaw, ShapeSpec, extend_domain, time_grid


def _as_shapes(shapes) -> tuple[ShapeSpec, ...]:
    out = []
    for s in shapes:
        out.append(s if isinstance(s, ShapeSpec) else ShapeSpec(**dict(s)))
    if len(out) != 2:
        raise ConfigurationError("exactly two shapes are required")
    return tuple(out)


def _pair(value, name):
    if value is None:
        return (None, None)
    value = tuple(value)
    if len(value) != 2:
        raise ConfigurationError(f"{name} must have one entry per shape")
    return value


def build_operator(shapes, growth: GrowthLaw, dx: float, d_ell: float,
                   n_phi: int = 256, n_theta: int = 256, r_lo=None, r_hi=None):
    shapes = _as_shapes(shapes)
    lo, hi = _pair(r_lo, "r_lo"), _pair(r_hi, "r_hi")
    domains = tuple(extend_domain(s, growth, dx, lo[i], hi[i]) for i, s in enumerate(shapes))
    quad = OrientationQuadrature(n_phi, n_theta)
    op = CldOperator(shapes, domains, chord_grid(shapes, d_ell), quad)
    return shapes, domains, op


def build_model(shapes, growth: GrowthLaw, dx: float, dt: float, d_ell: float,
                n_phi: int = 256, n_theta: int = 256, r_lo=None, r_hi=None) -> ObserverModel:
    shapes, domains, op = build_operator(shapes, growth, dx, d_ell, n_phi, n_theta, r_lo, r_hi)
    return ObserverModel(shapes, growth, domains, op, time_grid(growth.T, dt))


def split_pair(X, sizes: Sequence[int]) -> list[np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != sum(sizes):
        raise ConfigurationError(f"expected {sum(sizes)} PSD columns, got {X.shape[-1]}")
    return [X[..., : sizes[0]], X[..., sizes[0]:]]


def _validate_rows(X, n_features, what):
    X = check_array(X, ensure_2d=False, dtype=float, ensure_all_finite=True)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"{what} has {X.shape[1]} columns, expected {n_features}")
    return X


class CLDTransformer(TransformerMixin, BaseEstimator):
    """Map PSD pairs to cumulative CLD curves.

    Parameters
    ----------
    shapes : sequence of two ShapeSpec (or dicts with eta, g, r_min, r_max)
    growth : GrowthLaw
        Only used to size the extended radius domains.
    dx, d_ell : float
        Radius and chord grid steps.
    n_phi, n_theta : int
        Orientation quadrature resolution.
    r_lo, r_hi : pair of float or None
        Overrides of the extended domain bounds.
    """

    def __init__(self, shapes=None, growth=None, dx=0.01, d_ell=0.01, n_phi=256, n_theta=256,
                 r_lo=None, r_hi=None):
        self.shapes = shapes
        self.growth = growth
        self.dx = dx
        self.d_ell = d_ell
        self.n_phi = n_phi
        self.n_theta = n_theta
        self.r_lo = r_lo
        self.r_hi = r_hi

    def fit(self, X=None, y=None):
        if self.shapes is None or self.growth is None:
            raise ConfigurationError("shapes and growth must be set before fit")
        self.shapes_, self.domains_, self.operator_ = build_operator(
            self.shapes, self.growth, self.dx, self.d_ell, self.n_phi, self.n_theta,
            self.r_lo, self.r_hi)
        self.sizes_ = self.operator_.sizes
        self.n_features_in_ = sum(self.sizes_)
        self.ell_grid_ = self.operator_.ell_grid
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = _validate_rows(X, self.n_features_in_, "PSD matrix")
        return self.operator_.apply(split_pair(X, self.sizes_))

    def adjoint(self, Q):
        """Adjoint map from CLD rows back to stacked PSD rows."""
        check_is_fitted(self, "operator_")
        Q = _validate_rows(Q, self.ell_grid_.size, "CLD matrix")
        return np.concatenate(self.operator_.adjoint(Q), axis=-1)


class BFNObserver(BaseEstimator):
    """Back-and-forth nudging estimate of the initial PSD pair.

    ``fit`` takes the CLD record as an ``(n_times, n_ell)`` array sampled on
    ``0, dt, ..., T``.

    Attributes
    ----------
    initial_state_ : ndarray of shape (n1 + n2,)
        Estimated PSDs at ``t = 0``.
    history_ : EstimateHistory
        Per-iteration estimates (at ``checkpoints``) and metrics.
    model_ : ObserverModel
    """

    def __init__(self, shapes=None, growth=None, dx=0.01, dt=0.01, d_ell=0.01, mu=0.001,
                 n_iterations=20, n_phi=256, n_theta=256, r_lo=None, r_hi=None,
                 checkpoints=None, check_stability=True):
        self.shapes = shapes
        self.growth = growth
        self.dx = dx
        self.dt = dt
        self.d_ell = d_ell
        self.mu = mu
        self.n_iterations = n_iterations
        self.n_phi = n_phi
        self.n_theta = n_theta
        self.r_lo = r_lo
        self.r_hi = r_hi
        self.checkpoints = checkpoints
        self.check_stability = check_stability

    def _model(self):
        model = getattr(self, "model_", None)
        key = (self.shapes, self.growth, self.dx, self.dt, self.d_ell, self.n_phi, self.n_theta,
               self.r_lo, self.r_hi)
        if model is None or getattr(self, "_model_key", None) != repr(key):
            if self.shapes is None or self.growth is None:
                raise ConfigurationError("shapes and growth must be set before fit")
            model = build_model(self.shapes, self.growth, self.dx, self.dt, self.d_ell,
                                 self.n_phi, self.n_theta, self.r_lo, self.r_hi)
            self._model_key = repr(key)
        return model

    def fit(self, X, y=None, initial_guess=None):
        """Run the iteration on the record ``X``.

        ``y``, when given, is the true stacked initial PSD and is used only for
        the error metrics in ``history_``.
        """
        model = self._model()
        sizes = model.operator.sizes
        X = check_array(X, dtype=float, ensure_all_finite=True)
        expected = (model.times.size, model.operator.ell_grid.size)
        if X.shape != expected:
            raise ConfigurationError(
                f"record of shape {X.shape} does not match the grids: "
                f"{expected[0]} times (dt={self.dt}, T={model.law.T}) x "
                f"{expected[1]} chord lengths (d_ell={self.d_ell})")
        truth = None if y is None else split_pair(_validate_rows(y, sum(sizes), "truth")[0], sizes)
        guess = None if initial_guess is None else split_pair(
            _validate_rows(initial_guess, sum(sizes), "initial guess")[0], sizes)
        self.model_ = model
        self.history_ = bfn_run(X, model, self.mu, self.n_iterations, guess, truth,
                                keep=self.checkpoints, check_stability=self.check_stability)
        self.initial_state_ = np.concatenate(self.history_.estimates[-1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X=None):
        """CLD record generated by the estimated initial PSDs."""
        check_is_fitted(self, "initial_state_")
        sizes = self.model_.operator.sizes
        traj = self.model_.simulate(split_pair(self.initial_state_, sizes))
        return self.model_.measure(traj)

    def score(self, X, y=None):
        """Negative RMS innovation between ``X`` and the predicted record."""
        X = check_array(X, dtype=float)
        resid = self.predict() - X
        return -float(np.sqrt(np.mean(resid**2)))
