"""Hot inner loops: emission log-likelihoods and HMM message passing.

Every kernel exists twice: a loop version compiled with numba and a
vectorized numpy version. The module-level names are bound to one of the
two at import time (see ``_backend``); both are always reachable through
``IMPLEMENTATIONS`` for benchmarking and cross-checking.

Conventions shared by all kernels:

* ``trans`` is a row-stochastic L x L matrix already floored away from zero.
* ``loge`` is an (n, L) matrix of per-frame, per-mode emission log-densities.
* Filters are kept normalized in probability space; each step returns the
  log normalizer, which is the one-step predictive log-density.
"""
import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA

_CHUNK = 256


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_emission_loglik(Y, X, W, C, logconst):
    n, d = Y.shape
    L = W.shape[0]
    out = np.empty((n, L))
    for s in range(0, n, _CHUNK):
        e = min(n, s + _CHUNK)
        y = Y[s:e]
        x = X[s:e]
        # elementwise products reduced over the last axis keep every row's
        # arithmetic independent of the chunk size
        r = y[:, None, :] - (W[None, :, :, :] * x[:, None, None, :]).sum(-1)
        z = np.empty_like(r)
        for i in range(d):
            acc = r[:, :, i] - (C[None, :, i, :i] * z[:, :, :i]).sum(-1)
            z[:, :, i] = acc / C[:, i, i]
        out[s:e] = logconst - 0.5 * (z * z).sum(-1)
    return out


def _np_normalize(u):
    m = u.max()
    inc = m + np.log(np.exp(u - m).sum())
    return np.exp(u - inc), inc


def _np_forward_init(init, loge_t):
    return _np_normalize(np.log(init) + loge_t)


def _np_forward_step(filt, trans, loge_t):
    return _np_normalize(np.log(filt @ trans) + loge_t)


def _np_forward_cumulative(init, trans, loge):
    n = loge.shape[0]
    cum = np.empty(n)
    filt, total = _np_forward_init(init, loge[0])
    cum[0] = total
    for t in range(1, n):
        filt, inc = _np_forward_step(filt, trans, loge[t])
        total = total + inc
        cum[t] = total
    return cum, filt


def _np_backward_messages(trans, loge):
    n, L = loge.shape
    logb = np.zeros((n, L))
    for t in range(n - 2, -1, -1):
        v = loge[t + 1] + logb[t + 1]
        m = v.max()
        logb[t] = m + np.log(trans @ np.exp(v - m))
    return logb


def _np_draw(logp, u):
    m = logp.max()
    c = np.cumsum(np.exp(logp - m))
    k = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(k, logp.shape[0] - 1), m + np.log(c[-1])


def _np_sample_states(init, trans, loge, logb, uniforms):
    n = loge.shape[0]
    z = np.empty(n, dtype=np.int64)
    logtrans = np.log(trans)
    k, marginal = _np_draw(np.log(init) + loge[0] + logb[0], uniforms[0])
    z[0] = k
    for t in range(1, n):
        k, _ = _np_draw(logtrans[k] + loge[t] + logb[t], uniforms[t])
        z[t] = k
    return z, marginal


def _np_viterbi(init, trans, loge):
    n, L = loge.shape
    logtrans = np.log(trans)
    back = np.empty((n, L), dtype=np.int64)
    delta = np.log(init) + loge[0]
    for t in range(1, n):
        cand = delta[:, None] + logtrans
        back[t] = cand.argmax(axis=0)
        delta = cand[back[t], np.arange(L)] + loge[t]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(delta.argmax())
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _np_sample_chain(init, trans, uniforms):
    n = uniforms.shape[0]
    L = init.shape[0]
    z = np.empty(n, dtype=np.int64)
    c0 = np.cumsum(init)
    rows = np.cumsum(trans, axis=1)
    k = min(int(np.searchsorted(c0, uniforms[0] * c0[-1], side="right")), L - 1)
    z[0] = k
    for t in range(1, n):
        c = rows[k]
        k = min(int(np.searchsorted(c, uniforms[t] * c[-1], side="right")), L - 1)
        z[t] = k
    return z


def _np_var_simulate(W, C, z, E, order, intercept):
    n, d = E.shape
    Y = np.zeros((n, d))
    D = W.shape[2]
    x = np.zeros(D)
    if intercept:
        x[D - 1] = 1.0
    for t in range(n):
        for i in range(order):
            if t - 1 - i >= 0:
                x[i * d:(i + 1) * d] = Y[t - 1 - i]
            else:
                x[i * d:(i + 1) * d] = 0.0
        k = z[t]
        Y[t] = W[k] @ x + C[k] @ E[t]
    return Y


NUMPY_KERNELS = {
    "emission_loglik": _np_emission_loglik,
    "forward_init": _np_forward_init,
    "forward_step": _np_forward_step,
    "forward_cumulative": _np_forward_cumulative,
    "backward_messages": _np_backward_messages,
    "sample_states": _np_sample_states,
    "viterbi": _np_viterbi,
    "sample_chain": _np_sample_chain,
    "var_simulate": _np_var_simulate,
}
IMPLEMENTATIONS = {"numpy": NUMPY_KERNELS}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _nb_emission_loglik(Y, X, W, C, logconst):
        n, d = Y.shape
        L = W.shape[0]
        D = W.shape[2]
        out = np.empty((n, L))
        z = np.empty(d)
        for t in range(n):
            for k in range(L):
                q = 0.0
                for i in range(d):
                    s = Y[t, i]
                    for j in range(D):
                        s -= W[k, i, j] * X[t, j]
                    for j in range(i):
                        s -= C[k, i, j] * z[j]
                    z[i] = s / C[k, i, i]
                    q += z[i] * z[i]
                out[t, k] = logconst[k] - 0.5 * q
        return out

    @njit(cache=True)
    def _nb_normalize(u):
        L = u.shape[0]
        m = u[0]
        for k in range(1, L):
            if u[k] > m:
                m = u[k]
        s = 0.0
        for k in range(L):
            s += np.exp(u[k] - m)
        inc = m + np.log(s)
        out = np.empty(L)
        for k in range(L):
            out[k] = np.exp(u[k] - inc)
        return out, inc

    @njit(cache=True)
    def _nb_forward_init(init, loge_t):
        L = init.shape[0]
        u = np.empty(L)
        for k in range(L):
            u[k] = np.log(init[k]) + loge_t[k]
        return _nb_normalize(u)

    @njit(cache=True)
    def _nb_forward_step(filt, trans, loge_t):
        L = filt.shape[0]
        u = np.empty(L)
        for k in range(L):
            a = 0.0
            for j in range(L):
                a += filt[j] * trans[j, k]
            u[k] = np.log(a) + loge_t[k]
        return _nb_normalize(u)

    @njit(cache=True)
    def _nb_forward_cumulative(init, trans, loge):
        n = loge.shape[0]
        cum = np.empty(n)
        filt, total = _nb_forward_init(init, loge[0])
        cum[0] = total
        for t in range(1, n):
            filt, inc = _nb_forward_step(filt, trans, loge[t])
            total = total + inc
            cum[t] = total
        return cum, filt

    @njit(cache=True)
    def _nb_backward_messages(trans, loge):
        n, L = loge.shape
        logb = np.zeros((n, L))
        w = np.empty(L)
        for t in range(n - 2, -1, -1):
            m = loge[t + 1, 0] + logb[t + 1, 0]
            for k in range(1, L):
                v = loge[t + 1, k] + logb[t + 1, k]
                if v > m:
                    m = v
            for k in range(L):
                w[k] = np.exp(loge[t + 1, k] + logb[t + 1, k] - m)
            for j in range(L):
                s = 0.0
                for k in range(L):
                    s += trans[j, k] * w[k]
                logb[t, j] = m + np.log(s)
        return logb

    @njit(cache=True)
    def _nb_draw(logp, u):
        L = logp.shape[0]
        m = logp[0]
        for k in range(1, L):
            if logp[k] > m:
                m = logp[k]
        c = np.empty(L)
        s = 0.0
        for k in range(L):
            s += np.exp(logp[k] - m)
            c[k] = s
        target = u * s
        for k in range(L):
            if c[k] > target:
                return k, m + np.log(s)
        return L - 1, m + np.log(s)

    @njit(cache=True)
    def _nb_sample_states(init, trans, loge, logb, uniforms):
        n, L = loge.shape
        z = np.empty(n, dtype=np.int64)
        logp = np.empty(L)
        for k in range(L):
            logp[k] = np.log(init[k]) + loge[0, k] + logb[0, k]
        k0, marginal = _nb_draw(logp, uniforms[0])
        z[0] = k0
        for t in range(1, n):
            prev = z[t - 1]
            for k in range(L):
                logp[k] = np.log(trans[prev, k]) + loge[t, k] + logb[t, k]
            kt, _ = _nb_draw(logp, uniforms[t])
            z[t] = kt
        return z, marginal

    @njit(cache=True)
    def _nb_viterbi(init, trans, loge):
        n, L = loge.shape
        logtrans = np.log(trans)
        back = np.zeros((n, L), dtype=np.int64)
        delta = np.empty(L)
        new = np.empty(L)
        for k in range(L):
            delta[k] = np.log(init[k]) + loge[0, k]
        for t in range(1, n):
            for k in range(L):
                best = delta[0] + logtrans[0, k]
                arg = 0
                for j in range(1, L):
                    v = delta[j] + logtrans[j, k]
                    if v > best:
                        best = v
                        arg = j
                back[t, k] = arg
                new[k] = best + loge[t, k]
            for k in range(L):
                delta[k] = new[k]
        path = np.empty(n, dtype=np.int64)
        arg = 0
        for k in range(1, L):
            if delta[k] > delta[arg]:
                arg = k
        path[n - 1] = arg
        for t in range(n - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path

    @njit(cache=True)
    def _nb_sample_chain(init, trans, uniforms):
        n = uniforms.shape[0]
        L = init.shape[0]
        z = np.empty(n, dtype=np.int64)
        rows = np.empty((L, L))
        for j in range(L):
            s = 0.0
            for k in range(L):
                s += trans[j, k]
                rows[j, k] = s
        c0 = np.empty(L)
        s = 0.0
        for k in range(L):
            s += init[k]
            c0[k] = s
        target = uniforms[0] * c0[L - 1]
        k = L - 1
        for i in range(L):
            if c0[i] > target:
                k = i
                break
        z[0] = k
        for t in range(1, n):
            target = uniforms[t] * rows[k, L - 1]
            nxt = L - 1
            for i in range(L):
                if rows[k, i] > target:
                    nxt = i
                    break
            k = nxt
            z[t] = k
        return z

    @njit(cache=True)
    def _nb_var_simulate(W, C, z, E, order, intercept):
        n, d = E.shape
        D = W.shape[2]
        Y = np.zeros((n, d))
        x = np.zeros(D)
        if intercept:
            x[D - 1] = 1.0
        for t in range(n):
            for i in range(order):
                for j in range(d):
                    x[i * d + j] = Y[t - 1 - i, j] if t - 1 - i >= 0 else 0.0
            k = z[t]
            for a in range(d):
                s = 0.0
                for b in range(D):
                    s += W[k, a, b] * x[b]
                for b in range(a + 1):
                    s += C[k, a, b] * E[t, b]
                Y[t, a] = s
        return Y

    IMPLEMENTATIONS["numba"] = {
        "emission_loglik": _nb_emission_loglik,
        "forward_init": _nb_forward_init,
        "forward_step": _nb_forward_step,
        "forward_cumulative": _nb_forward_cumulative,
        "backward_messages": _nb_backward_messages,
        "sample_states": _nb_sample_states,
        "viterbi": _nb_viterbi,
        "sample_chain": _nb_sample_chain,
        "var_simulate": _nb_var_simulate,
    }

ACTIVE = IMPLEMENTATIONS["numba" if USE_NUMBA else "numpy"]

emission_loglik = ACTIVE["emission_loglik"]
forward_init = ACTIVE["forward_init"]
forward_step = ACTIVE["forward_step"]
forward_cumulative = ACTIVE["forward_cumulative"]
backward_messages = ACTIVE["backward_messages"]
sample_states = ACTIVE["sample_states"]
viterbi = ACTIVE["viterbi"]
sample_chain = ACTIVE["sample_chain"]
var_simulate = ACTIVE["var_simulate"]
