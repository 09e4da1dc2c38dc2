"""Distributions used by the model and the sampler.

All samplers take an explicit ``numpy.random.Generator``; build one with
:func:`rng_stream` so that (seed, stream id) pairs map to reproducible,
mutually independent streams.
"""
import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidParameterError, ShapeError

LOG_2PI = np.log(2.0 * np.pi)

RngStream = np.random.Generator


def rng_stream(seed, *stream_id):
    """Return a generator for ``seed`` and an optional hierarchical stream id.

    Identical arguments give identical draw sequences; different stream ids
    give statistically independent streams (``SeedSequence`` spawn keys).
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = tuple(int(s) for s in stream_id)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InvalidParameterError(f"{name} must be finite and positive, got {x}")
    return x


def cholesky_spd(S, name="matrix"):
    """Lower Cholesky factor of an SPD matrix.

    On failure a diagonal jitter of ``1e-9 * trace / d`` is added once; a
    second failure is an :class:`InvalidParameterError`.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    if S.size and np.abs(S - S.T).max() > 1e-12 * np.abs(S).max():
        raise InvalidParameterError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    d = S.shape[0]
    jitter = 1e-9 * np.trace(S) / d
    if jitter > 0:
        try:
            return np.linalg.cholesky(S + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            pass
    raise InvalidParameterError(f"{name} is not positive definite")


def is_spd(S):
    try:
        cholesky_spd(S)
    except (InvalidParameterError, ShapeError):
        return False
    return True


def sample_gamma(a, b, rng):
    """Gamma draw with shape ``a`` and *rate* ``b`` (mean ``a / b``)."""
    a = _positive("shape", a)
    b = _positive("rate", b)
    return rng.gamma(a, 1.0 / b)


def sample_beta(c, d, rng):
    c = _positive("c", c)
    d = _positive("d", d)
    x = rng.beta(c, d)
    # keep draws inside the open interval
    tiny = np.finfo(float).tiny
    return np.clip(x, tiny, 1.0 - np.finfo(float).epsneg)


def _log_gamma_variates(alpha, rng):
    # log G with G ~ Gamma(alpha, 1); alpha < 1 uses G = G' * U**(1/alpha),
    # G' ~ Gamma(alpha + 1), which stays finite for very small alpha
    small = alpha < 1.0
    g = rng.standard_gamma(np.where(small, alpha + 1.0, alpha))
    u = rng.random(alpha.shape)
    logg = np.log(g)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(small, logg + np.log(u) / alpha, logg)


def sample_dirichlet(alpha, rng):
    """Draw a probability vector from Dirichlet(alpha).

    Works in log space so that tiny concentrations (weak-limit priors such
    as ``gamma / L``) never produce 0/0.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.ndim != 1 or alpha.size < 1:
        raise InvalidParameterError("alpha must be a non-empty vector")
    _positive("alpha", alpha)
    if alpha.size == 1:
        return np.ones(1)
    logg = _log_gamma_variates(alpha, rng)
    m = logg.max()
    w = np.exp(logg - m)
    return w / w.sum()


def sample_stick_breaking(gamma, truncation, rng):
    """GEM(gamma) weights truncated at ``truncation``; the last entry is the
    remaining stick so that the vector sums to one."""
    if int(truncation) != truncation or truncation < 1:
        raise InvalidParameterError(f"truncation must be a positive integer, got {truncation}")
    gamma = float(_positive("gamma", gamma))
    L = int(truncation)
    nu = rng.beta(1.0, gamma, size=L - 1)
    beta = np.empty(L)
    remaining = 1.0
    for k in range(L - 1):
        beta[k] = nu[k] * remaining
        remaining *= 1.0 - nu[k]
    beta[L - 1] = remaining
    return beta / beta.sum()


def sample_matrix_normal(M, Sigma, K, rng, *, chol_sigma=None, chol_K=None):
    """Draw A ~ MN(M, Sigma, K).

    ``Sigma`` is the d x d row covariance and ``K`` the column *precision*,
    so that vec(A) has covariance ``kron(inv(K), Sigma)``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ShapeError(f"M must be a matrix, got shape {M.shape}")
    d, m = M.shape
    Ls = chol_sigma if chol_sigma is not None else cholesky_spd(Sigma, "Sigma")
    Lk = chol_K if chol_K is not None else cholesky_spd(K, "K")
    if Ls.shape != (d, d) or Lk.shape != (m, m):
        raise ShapeError(f"M is {M.shape} but Sigma is {Ls.shape} and K is {Lk.shape}")
    Z = rng.standard_normal((d, m))
    if m == 0:
        return M.copy()
    # rows of Z Lk^{-1} have covariance Lk^{-T} Lk^{-1} = K^{-1}
    ZB = solve_triangular(Lk, Z.T, lower=True, trans="T").T
    return M + Ls @ ZB


def sample_inverse_wishart(nu0, S0, rng, *, chol_S0=None):
    """Draw Sigma ~ IW(nu0, S0) (mean ``S0 / (nu0 - d - 1)``) by Bartlett
    decomposition of the matching Wishart."""
    L = chol_S0 if chol_S0 is not None else cholesky_spd(S0, "S0")
    d = L.shape[0]
    nu0 = float(nu0)
    if not np.isfinite(nu0) or nu0 <= d - 1:
        raise InvalidParameterError(f"nu0={nu0} must exceed d - 1 = {d - 1}")
    A = np.zeros((d, d))
    A[np.diag_indices(d)] = np.sqrt(rng.chisquare(nu0 - np.arange(d)))
    il = np.tril_indices(d, -1)
    A[il] = rng.standard_normal(len(il[0]))
    # W = L^{-T} A A^T L^{-1} ~ Wishart(nu0, S0^{-1});  Sigma = W^{-1} = G^T G
    G = solve_triangular(A, L.T, lower=True)
    Sigma = G.T @ G
    return 0.5 * (Sigma + Sigma.T)


def mvn_logpdf(y, mean, Sigma):
    """Gaussian log-density via a Cholesky solve."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    d = y.shape[-1]
    if mean.shape[-1] != d or Sigma.shape != (d, d):
        raise ShapeError(f"y has dim {d}, mean {mean.shape}, Sigma {Sigma.shape}")
    Lc = cholesky_spd(Sigma, "Sigma")
    r = y - mean
    z = solve_triangular(Lc, r.T, lower=True)
    quad = np.sum(z * z, axis=0)
    return -0.5 * (d * LOG_2PI + quad) - np.sum(np.log(np.diag(Lc)))


def sample_crt(counts, concentration, rng):
    """Chinese-restaurant table counts.

    For each entry, the number of occupied tables after ``counts`` customers
    enter a restaurant with the given ``concentration``; entries with zero
    customers get zero tables. Arrays broadcast elementwise.
    """
    counts = np.asarray(counts, dtype=np.int64)
    conc = np.broadcast_to(np.asarray(concentration, dtype=float), counts.shape)
    if np.any(counts < 0):
        raise InvalidParameterError("counts must be non-negative")
    flat_n = counts.ravel()
    flat_c = conc.ravel()
    total = int(flat_n.sum())
    out = np.zeros(flat_n.shape, dtype=np.int64)
    if total == 0:
        return out.reshape(counts.shape)
    owner = np.repeat(np.arange(flat_n.size), flat_n)
    starts = np.cumsum(flat_n) - flat_n
    seat = np.arange(total) - np.repeat(starts, flat_n)
    c = flat_c[owner]
    p = np.where(seat == 0, 1.0, c / np.maximum(c + seat, 1e-300))
    new_table = rng.random(total) < p
    out = np.bincount(owner, weights=new_table, minlength=flat_n.size).astype(np.int64)
    return out.reshape(counts.shape)


__all__ = [
    "RngStream",
    "rng_stream",
    "cholesky_spd",
    "is_spd",
    "sample_gamma",
    "sample_beta",
    "sample_dirichlet",
    "sample_stick_breaking",
    "sample_matrix_normal",
    "sample_inverse_wishart",
    "mvn_logpdf",
    "sample_crt",
]
