"""Sticky HDP switching-VAR hidden Markov model: types and likelihoods."""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import InsufficientHistoryError, InvalidParameterError, ShapeError
from .stats import LOG_2PI, cholesky_spd, mvn_logpdf, sample_dirichlet, sample_stick_breaking

PROB_FLOOR = 1e-300


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """A T x d time series sampled at a fixed rate."""

    data: np.ndarray
    sample_rate: float = 200.0
    skill_label: Optional[str] = None
    trial_id: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ShapeError(f"observation data must be T x d with T >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = int(np.argwhere(~np.isfinite(data))[0, 0])
            raise InvalidParameterError(f"non-finite observation at frame {bad}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def T(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def __len__(self):
        return self.T


@dataclass(frozen=True, eq=False)
class VAREmission:
    """y_t = sum_i A_i y_{t-i} (+ mean) + e_t,  e_t ~ N(0, noise).

    ``coeffs`` has shape (r, d, d); r = 0 gives a plain Gaussian emission
    around ``mean`` (zero when no mean is configured).
    """

    coeffs: np.ndarray
    noise: np.ndarray
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        noise = np.atleast_2d(np.array(self.noise, dtype=float))
        d = noise.shape[0]
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.size == 0:
            coeffs = coeffs.reshape(0, d, d)
        if coeffs.ndim != 3 or coeffs.shape[1:] != (d, d):
            raise ShapeError(f"coeffs must be (r, {d}, {d}), got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidParameterError("coefficient matrices must be finite")
        chol = cholesky_spd(noise, "noise covariance")
        object.__setattr__(self, "coeffs", _frozen(coeffs))
        object.__setattr__(self, "noise", _frozen(noise))
        object.__setattr__(self, "_chol", _frozen(chol))
        if self.mean is not None:
            mean = np.array(self.mean, dtype=float).reshape(-1)
            if mean.shape != (d,) or not np.all(np.isfinite(mean)):
                raise ShapeError(f"mean must be a finite {d}-vector")
            object.__setattr__(self, "mean", _frozen(mean))

    @property
    def order(self):
        return self.coeffs.shape[0]

    @property
    def dim(self):
        return self.noise.shape[0]

    @property
    def has_mean(self):
        return self.mean is not None

    @property
    def chol(self):
        return self._chol

    def regression_matrix(self):
        """[A_1 ... A_r (mean)] as a d x (d*r [+1]) matrix."""
        blocks = [self.coeffs[i] for i in range(self.order)]
        if self.mean is not None:
            blocks.append(self.mean[:, None])
        if not blocks:
            return np.zeros((self.dim, 0))
        return np.hstack(blocks)

    @classmethod
    def from_regression(cls, W, noise, order, intercept):
        W = np.asarray(W, dtype=float)
        d = W.shape[0]
        coeffs = np.stack([W[:, i * d:(i + 1) * d] for i in range(order)]) if order else np.zeros((0, d, d))
        mean = W[:, d * order] if intercept else None
        return cls(coeffs, noise, mean)


@dataclass(frozen=True, eq=False)
class StickyHDPState:
    """Weak-limit sticky HDP transition structure at truncation L."""

    beta: np.ndarray
    pi: np.ndarray
    alpha: float
    gamma: float
    kappa: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        pi = np.atleast_2d(np.array(self.pi, dtype=float))
        L = beta.shape[0]
        if beta.ndim != 1 or L < 1 or pi.shape != (L, L):
            raise ShapeError(f"beta must be length L and pi L x L, got {beta.shape} and {pi.shape}")
        if np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-10:
            raise InvalidParameterError("beta must lie on the simplex")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-10):
            raise InvalidParameterError("pi must be row-stochastic")
        if not (self.alpha > 0 and self.gamma > 0 and self.kappa >= 0):
            raise InvalidParameterError(
                f"need alpha > 0, gamma > 0, kappa >= 0; got {self.alpha}, {self.gamma}, {self.kappa}")
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "pi", _frozen(pi))
        for name in ("alpha", "gamma", "kappa"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def truncation(self):
        return self.beta.shape[0]

    @property
    def rho(self):
        return self.kappa / (self.alpha + self.kappa)


@dataclass(frozen=True, eq=False)
class SHDPVARModel:
    """A fitted (or hand-built) sHDP-VAR(r)-HMM."""

    hdp: StickyHDPState
    emissions: tuple
    initial_distribution: np.ndarray = field(default=None)

    def __post_init__(self):
        emissions = tuple(self.emissions)
        if len(emissions) != self.hdp.truncation:
            raise ShapeError(f"{len(emissions)} emissions for truncation {self.hdp.truncation}")
        first = emissions[0]
        for e in emissions:
            if (e.dim, e.order, e.has_mean) != (first.dim, first.order, first.has_mean):
                raise ShapeError("all emissions must share dimension, order and mean configuration")
        init = self.hdp.beta if self.initial_distribution is None else self.initial_distribution
        init = np.array(init, dtype=float)
        if init.shape != (self.hdp.truncation,) or np.any(init < 0) or abs(init.sum() - 1) > 1e-10:
            raise InvalidParameterError("initial distribution must be a simplex of length L")
        object.__setattr__(self, "emissions", emissions)
        object.__setattr__(self, "initial_distribution", _frozen(init))

    @property
    def truncation(self):
        return self.hdp.truncation

    @property
    def obs_dim(self):
        return self.emissions[0].dim

    @property
    def order(self):
        return self.emissions[0].order

    @property
    def intercept(self):
        return self.emissions[0].has_mean

    # Arrays consumed by the kernels; computed once per (immutable) model.
    @cached_property
    def kernel_arrays(self):
        W = np.ascontiguousarray(np.stack([e.regression_matrix() for e in self.emissions]))
        C = np.ascontiguousarray(np.stack([e.chol for e in self.emissions]))
        logdet_half = np.log(np.diagonal(C, axis1=1, axis2=2)).sum(axis=1)
        logconst = -0.5 * self.obs_dim * LOG_2PI - logdet_half
        trans = np.maximum(self.hdp.pi, PROB_FLOOR)
        init = np.maximum(self.initial_distribution, PROB_FLOOR)
        return W, C, logconst, np.ascontiguousarray(trans), init


def regressors(data, order, intercept=False):
    """Regressor rows for frames ``order .. T-1``.

    Row t holds [y_{t-1}, ..., y_{t-r}] (most recent first), followed by a
    constant 1 when ``intercept`` is set.
    """
    data = np.asarray(data, dtype=float)
    T, d = data.shape
    n = T - order
    if n <= 0:
        raise InsufficientHistoryError(f"need more than {order} frames, got {T}")
    cols = [data[order - i - 1:T - i - 1] for i in range(order)]
    if intercept:
        cols.append(np.ones((n, 1)))
    if not cols:
        return np.zeros((n, 0))
    return np.ascontiguousarray(np.hstack(cols))


def var_predict(emission, history):
    """Predicted mean of y_t given ``history = [y_{t-1}, y_{t-2}, ...]``."""
    r = emission.order
    history = list(history)
    if len(history) < r:
        raise InsufficientHistoryError(f"order {r} needs {r} past frames, got {len(history)}")
    pred = np.zeros(emission.dim) if emission.mean is None else emission.mean.copy()
    for i in range(r):
        pred = pred + emission.coeffs[i] @ np.asarray(history[i], dtype=float)
    return pred


def emission_loglik(emission, y_t, history):
    return mvn_logpdf(y_t, var_predict(emission, history), emission.noise)


def emission_loglik_matrix(model, data):
    """(T - r) x L emission log-densities of the scored frames of ``data``."""
    data = _as_array(data)
    if data.shape[1] != model.obs_dim:
        raise ShapeError(f"data has dimension {data.shape[1]}, model expects {model.obs_dim}")
    X = regressors(data, model.order, model.intercept)
    W, C, logconst, _, _ = model.kernel_arrays
    Y = np.ascontiguousarray(data[model.order:])
    return kernels.emission_loglik(Y, X, W, C, logconst)


def _as_array(seq):
    if isinstance(seq, ObservationSequence):
        return seq.data
    return np.asarray(seq, dtype=float)


def forward_cumulative_loglik(model, seq):
    """Cumulative log P(y_{r+1:t} | y_{1:r}) for t = r+1 .. T.

    The first r frames only condition the likelihood. Differences of
    consecutive entries are one-step predictive log-densities.
    """
    data = _as_array(seq)
    if data.shape[0] <= model.order:
        raise InsufficientHistoryError(f"sequence of length {data.shape[0]} with order {model.order}")
    loge = emission_loglik_matrix(model, data)
    _, _, _, trans, init = model.kernel_arrays
    cum, _ = kernels.forward_cumulative(init, trans, loge)
    return cum


def decode_states(model, seq):
    """Viterbi path for the scored frames (length T - r)."""
    loge = emission_loglik_matrix(model, _as_array(seq))
    _, _, _, trans, init = model.kernel_arrays
    return kernels.viterbi(init, trans, loge)


def sample_trajectory(model, T, rng):
    """Roll the generative model forward for T frames.

    Returns the state path z_{1:T} and the observations; the first r frames
    see zero-padded history.
    """
    T = int(T)
    if T <= model.order:
        raise InsufficientHistoryError(f"T={T} must exceed the order {model.order}")
    W, C, _, _, _ = model.kernel_arrays
    z = kernels.sample_chain(np.asarray(model.initial_distribution, dtype=float),
                             np.ascontiguousarray(model.hdp.pi), rng.random(T))
    E = rng.standard_normal((T, model.obs_dim))
    Y = kernels.var_simulate(W, C, z, E, model.order, model.intercept)
    return z, ObservationSequence(Y)


def count_switches(z):
    z = np.asarray(z)
    return int(np.count_nonzero(z[1:] != z[:-1]))


def sticky_prior_model(emissions, alpha, gamma, kappa, rng, initial="beta"):
    """Draw (beta, pi) from the weak-limit sticky HDP prior around the given
    emissions. ``beta`` comes from a truncated stick-breaking draw."""
    L = len(emissions)
    beta = sample_stick_breaking(gamma, L, rng)
    params = alpha * beta[None, :] + kappa * np.eye(L)
    pi = np.stack([sample_dirichlet(np.maximum(params[j], np.finfo(float).tiny), rng) for j in range(L)])
    hdp = StickyHDPState(beta, pi, alpha, gamma, kappa)
    init = np.full(L, 1.0 / L) if initial == "uniform" else None
    return SHDPVARModel(hdp, tuple(emissions), init)


__all__: Sequence[str] = [
    "ObservationSequence",
    "VAREmission",
    "StickyHDPState",
    "SHDPVARModel",
    "regressors",
    "var_predict",
    "emission_loglik",
    "emission_loglik_matrix",
    "forward_cumulative_loglik",
    "decode_states",
    "sample_trajectory",
    "count_switches",
    "sticky_prior_model",
]
