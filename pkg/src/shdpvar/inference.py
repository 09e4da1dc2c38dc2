"""Weak-limit blocked Gibbs sampler for the sticky HDP-VAR-HMM.

One sweep resamples, in order:

1. every state path jointly (backward messages, then forward sampling);
2. each mode's (A, Sigma) from its matrix-normal inverse-Wishart posterior;
3. restaurant table counts with the sticky override correction;
4. the concentrations (alpha + kappa, gamma) and the self-transition
   proportion rho;
5. the global weights beta and the transition rows pi.

Steps 3-4 integrate pi out, which is why beta and pi are drawn last.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    InvalidParameterError,
    NumericalError,
    ShapeError,
)
from .model import (
    ObservationSequence,
    SHDPVARModel,
    StickyHDPState,
    VAREmission,
    emission_loglik_matrix,
    regressors,
)
from .stats import (
    cholesky_spd,
    sample_beta,
    sample_crt,
    sample_dirichlet,
    sample_gamma,
    sample_inverse_wishart,
    sample_matrix_normal,
)

log = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler settings. Gamma priors are (shape, rate); rho ~ Beta(c, d).

    ``order`` is the autoregressive order r. ``intercept`` adds a per-mode
    mean vector to each emission and defaults to True only for r = 0.
    ``iw_scale`` fixes S0 explicitly instead of deriving it from the data.
    """

    truncation: int = 20
    max_iters: int = 500
    burn_in: int = 250
    order: int = 1
    intercept: Optional[bool] = None
    mniw_M: Optional[np.ndarray] = None
    mniw_K: Optional[np.ndarray] = None
    mniw_K_scale: float = 10.0
    iw_dof_offset: float = 2.0
    iw_scale_factor: float = 0.75
    iw_scale: Optional[np.ndarray] = None
    gamma_prior: Tuple[float, float] = (1.0, 0.01)
    alpha_kappa_prior: Tuple[float, float] = (1.0, 0.01)
    rho_prior: Tuple[float, float] = (10.0, 1.0)
    resample_hypers: bool = True
    hyper_inner_iters: int = 5
    point_estimate_window: int = 50
    initial_distribution: str = "beta"
    init_alpha_plus_kappa: Optional[float] = None
    init_gamma: Optional[float] = None
    init_rho: Optional[float] = None

    def __post_init__(self):
        if self.truncation < 1:
            raise ConfigurationError("truncation must be >= 1")
        if not 0 < self.burn_in < self.max_iters:
            raise ConfigurationError(
                f"need 0 < burn_in < max_iters, got burn_in={self.burn_in}, max_iters={self.max_iters}")
        if self.iw_scale_factor <= 0:
            raise ConfigurationError("iw_scale_factor must be positive")
        if self.order < 0:
            raise ConfigurationError("order must be >= 0")
        if self.point_estimate_window < 1 or self.hyper_inner_iters < 1:
            raise ConfigurationError("point_estimate_window and hyper_inner_iters must be >= 1")
        if self.initial_distribution not in ("beta", "uniform"):
            raise ConfigurationError("initial_distribution must be 'beta' or 'uniform'")

    @property
    def use_intercept(self):
        return self.order == 0 if self.intercept is None else bool(self.intercept)

    def regressor_dim(self, d):
        return d * self.order + int(self.use_intercept)

    def prior_M(self, d):
        D = self.regressor_dim(d)
        if self.mniw_M is None:
            return np.zeros((d, D))
        M = np.asarray(self.mniw_M, dtype=float)
        if M.shape != (d, D):
            raise ConfigurationError(f"mniw_M must be {d} x {D}")
        return M

    def prior_K(self, d):
        D = self.regressor_dim(d)
        if self.mniw_K is None:
            return self.mniw_K_scale * np.eye(D)
        K = np.asarray(self.mniw_K, dtype=float)
        if K.shape != (D, D):
            raise ConfigurationError(f"mniw_K must be {D} x {D}")
        return K

    def initial_hypers(self):
        a, b = self.alpha_kappa_prior
        ga, gb = self.gamma_prior
        c, d = self.rho_prior
        apk = a / b if self.init_alpha_plus_kappa is None else self.init_alpha_plus_kappa
        gamma = ga / gb if self.init_gamma is None else self.init_gamma
        rho = c / (c + d) if self.init_rho is None else self.init_rho
        return float(apk), float(gamma), float(rho)


@dataclass
class GibbsDiagnostics:
    """Per-iteration traces.

    ``joint_loglik[i]`` is log p(all training sequences | parameters entering
    sweep i), with state paths summed out.
    """

    joint_loglik: List[float] = field(default_factory=list)
    active_modes: List[int] = field(default_factory=list)
    alpha: List[float] = field(default_factory=list)
    gamma: List[float] = field(default_factory=list)
    kappa: List[float] = field(default_factory=list)
    rho: List[float] = field(default_factory=list)
    hyper_updates: int = 0
    selected_iteration: int = -1

    @property
    def iterations(self):
        return len(self.joint_loglik)

    def rows(self):
        for i in range(self.iterations):
            yield (i, self.joint_loglik[i], self.active_modes[i], self.alpha[i],
                   self.gamma[i], self.kappa[i], self.rho[i])


# ---------------------------------------------------------------------------
# conjugate emission updates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MNIWPosterior:
    M: np.ndarray
    K: np.ndarray
    S: np.ndarray
    nu: float
    chol_K: Optional[np.ndarray] = None

    @property
    def mean_A(self):
        return self.M

    @property
    def mean_Sigma(self):
        d = self.S.shape[0]
        return self.S / (self.nu - d - 1)


def mniw_posterior(Y, X, M, K, S0, nu0):
    """Posterior of (A, Sigma) given regression pairs (rows of Y and X).

    With A | Sigma ~ MN(M, Sigma, K) and Sigma ~ IW(nu0, S0):

        Sxx = X'X + K,  Syx = Y'X + M K,  Syy = Y'Y + M K M'
        A | Sigma ~ MN(Syx Sxx^-1, Sigma, Sxx)
        Sigma ~ IW(nu0 + n, S0 + Syy - Syx Sxx^-1 Syx')
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    n = Y.shape[0]
    Sxx = X.T @ X + K
    Syx = Y.T @ X + M @ K
    Syy = Y.T @ Y + M @ K @ M.T
    Sxx = 0.5 * (Sxx + Sxx.T)
    Lx = cholesky_spd(Sxx, "Sxx")
    if Sxx.shape[0]:
        Mn = solve_triangular(Lx, solve_triangular(Lx, Syx.T, lower=True), lower=True, trans="T").T
    else:
        Mn = np.zeros_like(M)
    S = S0 + Syy - Mn @ Syx.T
    return MNIWPosterior(Mn, Sxx, 0.5 * (S + S.T), nu0 + n, Lx)


def sample_mniw(post, rng):
    Sigma = sample_inverse_wishart(post.nu, post.S, rng)
    A = sample_matrix_normal(post.M, Sigma, post.K, rng, chol_K=post.chol_K)
    return A, Sigma


def empirical_iw_scale(dataset, factor=0.75):
    """``factor`` times the covariance of all observation vectors pooled."""
    frames = np.vstack([_data(s) for s in dataset])
    n, d = frames.shape
    if n <= d:
        raise InsufficientDataError(f"{n} pooled frames for dimension {d}")
    cov = np.atleast_2d(np.cov(frames, rowvar=False))
    try:
        cholesky_spd(cov, "pooled covariance")
    except InvalidParameterError as exc:
        raise NumericalError("pooled empirical covariance is singular") from exc
    return factor * cov


def update_emissions(Y, X, z, L, M, K, S0, nu0, rng, order, intercept):
    """Draw every mode's emission from its MNIW posterior; modes without
    frames draw from the prior."""
    emissions = []
    for k in range(L):
        idx = z == k
        post = mniw_posterior(Y[idx], X[idx], M, K, S0, nu0)
        A, Sigma = sample_mniw(post, rng)
        emissions.append(VAREmission.from_regression(A, Sigma, order, intercept))
    return emissions


# ---------------------------------------------------------------------------
# transition structure updates
# ---------------------------------------------------------------------------

def transition_counts(paths, L):
    """Transition counts n_jk and initial-state counts over all paths."""
    n = np.zeros((L, L), dtype=np.int64)
    n0 = np.zeros(L, dtype=np.int64)
    for z in paths:
        z = np.asarray(z, dtype=np.int64)
        if z.size == 0:
            continue
        n0[z[0]] += 1
        np.add.at(n, (z[:-1], z[1:]), 1)
    return n, n0


def update_transitions(counts, beta, alpha, kappa, rng):
    """Row j ~ Dir(alpha * beta + kappa * e_j + counts[j])."""
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise InvalidParameterError("transition counts must be non-negative")
    L = len(beta)
    params = alpha * np.asarray(beta)[None, :] + kappa * np.eye(L) + counts
    # beta entries can underflow to zero under tiny gamma / L
    params = np.maximum(params, _TINY)
    return np.stack([sample_dirichlet(params[j], rng) for j in range(L)])


def sample_table_counts(counts, beta, alpha, kappa, rho, rng):
    """Auxiliary table counts m, override counts w and corrected counts m_bar.

    m_jk ~ CRT(n_jk, alpha beta_k + kappa [j == k]); w_j ~ Bin(m_jj, p_j)
    with p_j = rho / (rho + beta_j (1 - rho)); m_bar = m minus w on the
    diagonal.
    """
    counts = np.asarray(counts, dtype=np.int64)
    L = len(beta)
    conc = np.maximum(alpha * np.asarray(beta)[None, :] + kappa * np.eye(L), _TINY)
    m = sample_crt(counts, conc, rng)
    diag = np.diag(m)
    p = rho / (rho + np.asarray(beta) * (1.0 - rho)) if rho > 0 else np.zeros(L)
    w = rng.binomial(diag, np.clip(p, 0.0, 1.0))
    mbar = m.copy()
    mbar[np.diag_indices(L)] -= w
    return m, w, mbar


def update_global_beta(mbar, gamma, rng, initial_counts=None):
    """beta ~ Dir(gamma / L + column sums of m_bar [+ initial-state counts])."""
    mbar = np.asarray(mbar)
    L = mbar.shape[1] if mbar.ndim == 2 else mbar.shape[0]
    col = mbar.sum(axis=0) if mbar.ndim == 2 else mbar
    if initial_counts is not None:
        col = col + np.asarray(initial_counts)
    return sample_dirichlet(gamma / L + col, rng)


def _escobar_west(conc, n_groups, tables, a, b, iters, rng):
    """Auxiliary-variable Gibbs updates of a DP concentration shared by
    groups with ``n_groups`` customers each and ``tables`` tables in total."""
    n_groups = np.asarray(n_groups, dtype=float)
    n_groups = n_groups[n_groups > 0]
    for _ in range(iters):
        if n_groups.size:
            eta = rng.beta(conc + 1.0, n_groups)
            s = rng.random(n_groups.size) < n_groups / (n_groups + conc)
            shape = a + tables - s.sum()
            rate = b - np.log(np.maximum(eta, _TINY)).sum()
        else:
            shape, rate = a + tables, b
        conc = float(sample_gamma(shape, rate, rng))
    return conc


def resample_hyperparameters(counts, m, w, top_counts, state, config, rng):
    """New (alpha + kappa, gamma, rho).

    ``state`` is the current (alpha + kappa, gamma, rho); ``top_counts`` are
    the customers at the top-level restaurant (override-corrected column
    sums plus initial-state counts). With no data each value is a draw
    from its prior.
    """
    apk, gamma, rho = state
    counts = np.asarray(counts)
    a, b = config.alpha_kappa_prior
    ga, gb = config.gamma_prior
    c, d = config.rho_prior
    L = counts.shape[0]
    iters = config.hyper_inner_iters

    apk = _escobar_west(apk, counts.sum(axis=1), int(np.sum(m)), a, b, iters, rng)

    top_counts = np.asarray(top_counts, dtype=np.int64)
    for _ in range(iters):
        t = sample_crt(top_counts, gamma / L, rng)
        gamma = _escobar_west(gamma, [top_counts.sum()], int(t.sum()), ga, gb, 1, rng)

    sw = int(np.sum(w))
    rho = float(sample_beta(c + sw, d + int(np.sum(m)) - sw, rng))
    return apk, gamma, rho


def split_concentration(apk, rho):
    return apk * (1.0 - rho), apk * rho


# ---------------------------------------------------------------------------
# state sequences
# ---------------------------------------------------------------------------

def sample_state_sequence(model, seq, rng):
    """Joint draw of z_{r+1:T} from p(z | y, model)."""
    loge = emission_loglik_matrix(model, _data(seq))
    _, _, _, trans, init = model.kernel_arrays
    logb = kernels.backward_messages(trans, loge)
    z, _ = kernels.sample_states(init, trans, loge, logb, rng.random(loge.shape[0]))
    return z


def _data(seq):
    return seq.data if isinstance(seq, ObservationSequence) else np.asarray(seq, dtype=float)


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------

class GibbsSampler:
    """Mutable chain state for one skill's training set.

    Sequences share every parameter; each has its own state path and
    contributes counts additively.
    """

    def __init__(self, dataset, config, rng):
        self.config = config
        self.rng = rng
        self._set_dataset(dataset)
        d = self.dim
        L = config.truncation
        self.M = config.prior_M(d)
        self.K = config.prior_K(d)
        self.nu0 = d + config.iw_dof_offset
        if config.iw_scale is not None:
            self.S0 = np.atleast_2d(np.asarray(config.iw_scale, dtype=float))
            if self.S0.shape != (d, d):
                raise ConfigurationError(f"iw_scale must be {d} x {d}")
        else:
            self.S0 = empirical_iw_scale(self.sequences, config.iw_scale_factor)
        cholesky_spd(self.S0, "S0")

        self.apk, self.gamma, self.rho = config.initial_hypers()
        self.beta = sample_dirichlet(np.full(L, self.gamma / L), rng)
        alpha, kappa = split_concentration(self.apk, self.rho)
        self.pi = update_transitions(np.zeros((L, L)), self.beta, alpha, kappa, rng)
        self.emissions = update_emissions(
            np.zeros((0, d)), np.zeros((0, config.regressor_dim(d))), np.zeros(0, dtype=np.int64),
            L, self.M, self.K, self.S0, self.nu0, rng, config.order, config.use_intercept)
        self.paths = [np.zeros(len(y), dtype=np.int64) for y in self.Y]
        self.last_loglik = np.nan

    def _set_dataset(self, dataset):
        seqs = [_data(s) for s in dataset]
        if not seqs:
            raise InsufficientDataError("empty training set")
        d = seqs[0].shape[1]
        if any(s.shape[1] != d for s in seqs):
            raise ShapeError("all training sequences must share the observation dimension")
        r = self.config.order
        icpt = self.config.use_intercept
        self.sequences = seqs
        self.dim = d
        self.X = [regressors(s, r, icpt) for s in seqs]
        self.Y = [np.ascontiguousarray(s[r:]) for s in seqs]
        self.X_all = np.vstack(self.X)
        self.Y_all = np.vstack(self.Y)

    def set_data(self, dataset):
        """Swap the observations while keeping the chain state (used by
        joint-distribution tests that resimulate data)."""
        self._set_dataset(dataset)

    @property
    def alpha(self):
        return split_concentration(self.apk, self.rho)[0]

    @property
    def kappa(self):
        return split_concentration(self.apk, self.rho)[1]

    def current_model(self):
        hdp = StickyHDPState(self.beta, self.pi, max(self.alpha, _TINY), self.gamma, self.kappa)
        L = self.config.truncation
        init = None if self.config.initial_distribution == "beta" else np.full(L, 1.0 / L)
        return SHDPVARModel(hdp, tuple(self.emissions), init)

    def sample_states(self):
        model = self.current_model()
        W, C, logconst, trans, init = model.kernel_arrays
        total = 0.0
        for i, (Y, X) in enumerate(zip(self.Y, self.X)):
            loge = kernels.emission_loglik(Y, X, W, C, logconst)
            logb = kernels.backward_messages(trans, loge)
            z, marginal = kernels.sample_states(init, trans, loge, logb, self.rng.random(Y.shape[0]))
            self.paths[i] = z
            total += marginal
        if not np.isfinite(total):
            raise NumericalError("non-finite training log-likelihood")
        self.last_loglik = float(total)
        return model

    def sample_emissions(self):
        z = np.concatenate(self.paths)
        cfg = self.config
        self.emissions = update_emissions(self.Y_all, self.X_all, z, cfg.truncation, self.M, self.K,
                                          self.S0, self.nu0, self.rng, cfg.order, cfg.use_intercept)

    def sample_transitions(self):
        cfg = self.config
        L = cfg.truncation
        counts, n0 = transition_counts(self.paths, L)
        alpha, kappa = self.alpha, self.kappa
        m, w, mbar = sample_table_counts(counts, self.beta, alpha, kappa, self.rho, self.rng)
        top = mbar.sum(axis=0)
        if cfg.initial_distribution == "beta":
            top = top + n0
        if cfg.resample_hypers:
            self.apk, self.gamma, self.rho = resample_hyperparameters(
                counts, m, w, top, (self.apk, self.gamma, self.rho), cfg, self.rng)
        self.beta = sample_dirichlet(self.gamma / L + top, self.rng)
        alpha, kappa = self.alpha, self.kappa
        self.pi = update_transitions(counts, self.beta, max(alpha, _TINY), kappa, self.rng)

    def sweep(self):
        """One full sweep; returns the model whose likelihood was scored."""
        model = self.sample_states()
        self.sample_emissions()
        self.sample_transitions()
        return model

    def active_modes(self):
        z = np.concatenate(self.paths)
        return int(np.unique(z).size)


def fit(dataset, config=None, rng=None):
    """Fit one skill's model.

    Runs ``config.max_iters`` sweeps and returns the sampled parameters with
    the highest training log-likelihood among the last
    ``point_estimate_window`` post-burn-in iterations, plus diagnostics.
    """
    config = config or GibbsConfig()
    if rng is None:
        raise ConfigurationError("fit needs an explicit random generator")
    sampler = GibbsSampler(dataset, config, rng)
    diag = GibbsDiagnostics()
    start = max(config.burn_in, config.max_iters - config.point_estimate_window)
    best = None
    best_ll = -np.inf
    for it in range(config.max_iters):
        alpha, kappa = sampler.alpha, sampler.kappa
        gamma, rho = sampler.gamma, sampler.rho
        model = sampler.sweep()
        ll = sampler.last_loglik
        diag.joint_loglik.append(ll)
        diag.active_modes.append(sampler.active_modes())
        diag.alpha.append(alpha)
        diag.gamma.append(gamma)
        diag.kappa.append(kappa)
        diag.rho.append(rho)
        if config.resample_hypers:
            diag.hyper_updates += 1
        if it >= start and ll > best_ll:
            best, best_ll = model, ll
            diag.selected_iteration = it
        if it % 100 == 0:
            log.debug("sweep %d loglik %.3f active %d", it, ll, diag.active_modes[-1])
    return best, diag


def label_accuracy(true, pred):
    """Frame accuracy after the best one-to-one relabeling of ``pred``."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    tl, ti = np.unique(true, return_inverse=True)
    pl, pi_ = np.unique(pred, return_inverse=True)
    conf = np.zeros((tl.size, pl.size))
    np.add.at(conf, (ti, pi_), 1)
    rows, cols = linear_sum_assignment(-conf)
    return conf[rows, cols].sum() / true.size


__all__ = [
    "GibbsConfig",
    "GibbsDiagnostics",
    "GibbsSampler",
    "MNIWPosterior",
    "mniw_posterior",
    "sample_mniw",
    "empirical_iw_scale",
    "update_emissions",
    "transition_counts",
    "update_transitions",
    "sample_table_counts",
    "update_global_beta",
    "resample_hyperparameters",
    "split_concentration",
    "sample_state_sequence",
    "fit",
    "label_accuracy",
]
