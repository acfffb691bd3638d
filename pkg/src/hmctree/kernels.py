"""Hot loops: soft path probabilities, likelihoods and their logit gradients.

Two interchangeable backends share one calling convention:

* ``*_nb`` - explicit loops compiled with numba (the default);
* ``*_np`` - vectorised numpy using dense path matrices.

Setting ``HMCTREE_DISABLE_NUMBA=1`` before import selects the numpy path.
The public names (``leaf_weights``, ``regression_loglik``,
``classification_loglik``) point at whichever backend is active.

Trees are passed as two ``(n_leaves, max_depth)`` arrays: ``path_idx`` holds
the column of each ancestor in the logit matrix ``Z`` (``-1`` pads short
paths) and ``path_dir`` holds 1 for a right step and 0 for a left step.
``Z[i, j]`` is the split logit of datapoint ``i`` at internal node ``j``; the
probability of stepping right is ``logistic(Z[i, j])``.
"""

import math

import numpy as np
from scipy.special import digamma as _digamma_np
from scipy.special import gammaln as _gammaln_np

from ._numba import USE_NUMBA, njit

BACKEND = "numba" if USE_NUMBA else "numpy"

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------
def _dense_paths(path_idx, path_dir, n_internal):
    n_leaves = path_idx.shape[0]
    right = np.zeros((n_leaves, n_internal))
    left = np.zeros((n_leaves, n_internal))
    rows, cols = np.nonzero(path_idx >= 0)
    j = path_idx[rows, cols]
    d = path_dir[rows, cols]
    right[rows[d == 1], j[d == 1]] = 1.0
    left[rows[d == 0], j[d == 0]] = 1.0
    return right, left


def _paths_np(Z, path_idx, path_dir):
    right, left = _dense_paths(path_idx, path_dir, Z.shape[1])
    log_psi = -np.logaddexp(0.0, -Z)
    log_1mpsi = -np.logaddexp(0.0, Z)
    phi = np.exp(log_psi @ right.T + log_1mpsi @ left.T)
    return np.exp(log_psi), np.exp(log_1mpsi), phi, right, left


def leaf_weights_np(Z, path_idx, path_dir):
    psi, _, phi, _, _ = _paths_np(Z, path_idx, path_dir)
    return psi, phi


def _logit_cotangent_np(G, psi, one_minus_psi, right, left):
    return (G @ right) * one_minus_psi - (G @ left) * psi


def regression_loglik_np(Z, path_idx, path_dir, mu, y, sigma, want_grad):
    psi, ompsi, phi, right, left = _paths_np(Z, path_idx, path_dir)
    n = y.shape[0]
    dev = mu[None, :] - y[:, None]
    resid = np.sum(phi * dev, axis=1)
    sq = float(resid @ resid)
    ll = -0.5 * n * (LOG_2PI + 2.0 * math.log(sigma)) - 0.5 * sq / sigma**2
    if not want_grad:
        return ll, None, None, 0.0
    scaled = resid / sigma**2
    G = -(scaled[:, None] * dev * phi)
    dZ = _logit_cotangent_np(G, psi, ompsi, right, left)
    dmu = -(scaled @ phi)
    dsigma = -n / sigma + sq / sigma**3
    return ll, dZ, dmu, dsigma


def classification_loglik_np(Z, path_idx, path_dir, labels, alpha, want_grad):
    psi, ompsi, phi, right, left = _paths_np(Z, path_idx, path_dir)
    M = alpha.shape[0]
    onehot = np.zeros((labels.shape[0], M))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    counts = onehot.T @ phi  # (M, n_leaves)
    A = float(alpha.sum())
    totals = counts.sum(axis=0)
    ll = float(
        np.sum(_gammaln_np(A) - _gammaln_np(totals + A))
        + np.sum(_gammaln_np(counts + alpha[:, None]) - _gammaln_np(alpha)[:, None])
    )
    if not want_grad:
        return ll, None
    dig_class = _digamma_np(counts + alpha[:, None])  # (M, n_leaves)
    dig_total = _digamma_np(totals + A)
    W = dig_class[labels, :] - dig_total[None, :]
    dZ = _logit_cotangent_np(W * phi, psi, ompsi, right, left)
    return ll, dZ


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------
@njit(cache=True)
def digamma_nb(x):
    """Digamma for x > 0 via upward recurrence and the asymptotic series."""
    r = 0.0
    while x < 10.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    tail = f * (
        -1.0 / 12.0
        + f * (1.0 / 120.0 + f * (-1.0 / 252.0 + f * (1.0 / 240.0 + f * (-1.0 / 132.0))))
    )
    return r + math.log(x) - 0.5 / x + tail


# beyond |z| = 40 the smaller step probability is below 5e-18: 1 + e rounds
# to 1 and the term cannot move any sum it enters, so skip the libm call
# (near-hard splits put most points out there)
_EXP_CUTOFF = 40.0


@njit(cache=True, fastmath=False)
def _probs_t(Z):
    """Right/left step probabilities, transposed to ``(n, N)`` for unit-stride loops."""
    N, n = Z.shape
    P = np.empty((n, N))
    Q = np.empty((n, N))
    for j in range(n):
        for i in range(N):
            z = Z[i, j]
            a = abs(z)
            e = math.exp(-a) if a < _EXP_CUTOFF else 0.0
            inv = 1.0 / (1.0 + e)
            if z >= 0.0:
                P[j, i] = inv
                Q[j, i] = e * inv
            else:
                P[j, i] = e * inv
                Q[j, i] = inv
    return P, Q


@njit(cache=True)
def _phi_t(P, Q, path_idx, path_dir):
    n_leaves, depth = path_idx.shape
    N = P.shape[1]
    phi = np.empty((n_leaves, N))
    for k in range(n_leaves):
        row = phi[k]
        for i in range(N):
            row[i] = 1.0
        for d in range(depth):
            j = path_idx[k, d]
            if j < 0:
                break
            src = P[j] if path_dir[k, d] == 1 else Q[j]
            for i in range(N):
                row[i] *= src[i]
    return phi


@njit(cache=True)
def _push_cotangent(g, k, P, Q, path_idx, path_dir, dZt):
    """Add leaf ``k``'s contribution ``g = (dl/dphi_k) * phi_k`` to ``dZt``."""
    N = g.shape[0]
    for d in range(path_idx.shape[1]):
        j = path_idx[k, d]
        if j < 0:
            break
        if path_dir[k, d] == 1:
            q = Q[j]
            out = dZt[j]
            for i in range(N):
                out[i] += g[i] * q[i]
        else:
            p = P[j]
            out = dZt[j]
            for i in range(N):
                out[i] -= g[i] * p[i]


@njit(cache=True)
def leaf_weights_nb(Z, path_idx, path_dir):
    P, Q = _probs_t(Z)
    return P.T.copy(), _phi_t(P, Q, path_idx, path_dir).T.copy()


@njit(cache=True)
def _regression_nb(Z, path_idx, path_dir, mu, y, sigma, want_grad):
    N, n = Z.shape
    n_leaves = mu.shape[0]
    P, Q = _probs_t(Z)
    phi = _phi_t(P, Q, path_idx, path_dir)
    r = np.zeros(N)
    for k in range(n_leaves):
        row = phi[k]
        m = mu[k]
        for i in range(N):
            r[i] += row[i] * (m - y[i])
    sq = 0.0
    for i in range(N):
        sq += r[i] * r[i]
    inv_var = 1.0 / (sigma * sigma)
    ll = -0.5 * N * (LOG_2PI + 2.0 * math.log(sigma)) - 0.5 * sq * inv_var
    dmu = np.zeros(n_leaves)
    dZt = np.zeros((n, N))
    if not want_grad:
        return ll, dZt, dmu, 0.0
    g = np.empty(N)
    for k in range(n_leaves):
        row = phi[k]
        m = mu[k]
        acc = 0.0
        for i in range(N):
            s = r[i] * inv_var * row[i]
            acc += s
            g[i] = -s * (m - y[i])
        dmu[k] = -acc
        _push_cotangent(g, k, P, Q, path_idx, path_dir, dZt)
    dsigma = -N / sigma + sq / (sigma * sigma * sigma)
    return ll, dZt, dmu, dsigma


@njit(cache=True)
def _classification_nb(Z, path_idx, path_dir, labels, alpha, want_grad):
    N, n = Z.shape
    M = alpha.shape[0]
    n_leaves = path_idx.shape[0]
    P, Q = _probs_t(Z)
    phi = _phi_t(P, Q, path_idx, path_dir)
    counts = np.zeros((M, n_leaves))
    for k in range(n_leaves):
        row = phi[k]
        for i in range(N):
            counts[labels[i], k] += row[i]
    A = 0.0
    for m in range(M):
        A += alpha[m]
    ll = 0.0
    lgA = math.lgamma(A)
    for k in range(n_leaves):
        total = 0.0
        for m in range(M):
            total += counts[m, k]
            ll += math.lgamma(counts[m, k] + alpha[m]) - math.lgamma(alpha[m])
        ll += lgA - math.lgamma(total + A)
    dZt = np.zeros((n, N))
    if not want_grad:
        return ll, dZt
    dig_class = np.empty(M)
    g = np.empty(N)
    for k in range(n_leaves):
        total = 0.0
        for m in range(M):
            total += counts[m, k]
        dig_total = digamma_nb(total + A)
        for m in range(M):
            dig_class[m] = digamma_nb(counts[m, k] + alpha[m]) - dig_total
        row = phi[k]
        for i in range(N):
            g[i] = dig_class[labels[i]] * row[i]
        _push_cotangent(g, k, P, Q, path_idx, path_dir, dZt)
    return ll, dZt


def regression_loglik_nb(Z, path_idx, path_dir, mu, y, sigma, want_grad):
    ll, dZt, dmu, dsigma = _regression_nb(Z, path_idx, path_dir, mu, y, float(sigma), want_grad)
    if not want_grad:
        return ll, None, None, 0.0
    return ll, dZt.T, dmu, dsigma


def classification_loglik_nb(Z, path_idx, path_dir, labels, alpha, want_grad):
    ll, dZt = _classification_nb(Z, path_idx, path_dir, labels, alpha, want_grad)
    return ll, (dZt.T if want_grad else None)


if USE_NUMBA:
    leaf_weights = leaf_weights_nb
    regression_loglik = regression_loglik_nb
    classification_loglik = classification_loglik_nb
else:
    leaf_weights = leaf_weights_np
    regression_loglik = regression_loglik_np
    classification_loglik = classification_loglik_np
