"""Batched cutoff kernels for Monte Carlo use.

``batch_j_dagger`` / ``batch_j_star`` take an ``(R, M)`` matrix of generalized
p-values on the hazard scale ``-log(1 - alpha)`` (one replicate per row, see
``SizeFamily.invert_hazard``) and return the cutoff ``J`` per row together
with the threshold hazard of ``alpha_(J)`` (``-1`` when ``J = 0``), so the
rejection mask is ``hazards <= threshold[:, None]``.

Two implementations share one contract: compiled loops (numba) and a
vectorised numpy path. ``MDFCONTROL_DISABLE_NUMBA=1`` selects the latter.
"""
import math

import numpy as np

from ._accel import njit, numba_enabled

_CHUNK = 2048


@njit
def _interp(x, m, kx, kle, n):
    # np.interp on row m's first n knots without allocating
    if x <= kx[m, 0]:
        return kle[m, 0]
    if x >= kx[m, n - 1]:
        return kle[m, n - 1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if kx[m, mid] <= x:
            lo = mid
        else:
            hi = mid
    t = (x - kx[m, lo]) / (kx[m, hi] - kx[m, lo])
    return kle[m, lo] + t * (kle[m, hi] - kle[m, lo])


@njit
def _log_survival(m, h, logh, code, scale, kx, kle, nk):
    # log(1 - A_m) at the budget with hazard h = exp(logh), general members
    if code[m] == 1:
        a = -math.expm1(-h) * scale[m]
        if a >= 1.0:
            return -np.inf
        return math.log1p(-a)
    if h <= 0.0:
        return 0.0
    if h == np.inf:
        return -np.inf
    return -h * math.exp(_interp(logh, m, kx, kle, nk[m]))


@njit
def _dagger_rows(hazards, bound, code, scale, expo, kx, kle, nk, out_j, out_t):
    R, M = hazards.shape
    for r in range(R):
        row = hazards[r]
        order = np.argsort(row, kind="mergesort")
        J = M
        for j in range(M):
            a = row[order[j]]
            la = math.log(a) if a > 0.0 else -np.inf
            tail = 0.0
            for i in range(j, M):
                e = expo[order[i]]
                if e > 0.0:
                    tail += -a * e
                else:
                    tail += _log_survival(order[i], a, la, code, scale, kx, kle, nk)
            if not tail >= bound:
                J = j
                break
        out_j[r] = J
        out_t[r] = row[order[J - 1]] if J > 0 else -1.0


@njit
def _total_size(a, expo, code, scale, kx, kle, nk):
    # sum_m A_m at hazard a
    la = math.log(a) if a > 0.0 else -np.inf
    total = 0.0
    for m in range(expo.shape[0]):
        e = expo[m]
        if e > 0.0:
            total += -math.expm1(-a * e)
        elif code[m] == 1:
            total += -math.expm1(-a) * scale[m]
        else:
            total += -math.expm1(_log_survival(m, a, la, code, scale, kx, kle, nk))
    return total


@njit
def _star_rows(hazards, q, code, scale, expo, kx, kle, nk, out_j, out_t):
    R, M = hazards.shape
    low = np.empty(M)
    for r in range(R):
        row = hazards[r]
        order = np.argsort(row, kind="mergesort")
        # A_(i)(h_(k)) >= A_(i)(h_(i)) for i <= k, so the running sum of each
        # member's size at its own generalized p-value bounds the total below
        acc = 0.0
        for i in range(M):
            m = order[i]
            a = row[m]
            e = expo[m]
            if e > 0.0:
                acc += -math.expm1(-a * e)
            else:
                la = math.log(a) if a > 0.0 else -np.inf
                acc += -math.expm1(_log_survival(m, a, la, code, scale, kx, kle, nk))
            low[i] = acc
        J = 0
        for k in range(M, 0, -1):
            if low[k - 1] * (1.0 - 1e-12) > q * k:
                continue
            if _total_size(row[order[k - 1]], expo, code, scale, kx, kle, nk) <= q * k:
                J = k
                break
        out_j[r] = J
        out_t[r] = row[order[J - 1]] if J > 0 else -1.0


def _params(fam):
    code, scale, kx, kle, nk = fam.kernel_params()
    # members whose knots share one value have a constant exponent; 0 marks the rest
    const = np.array([code[m] == 0 and np.all(kle[m, :nk[m]] == kle[m, 0]) for m in range(len(nk))])
    expo = np.where(const, np.exp(kle[:, 0]), 0.0)
    return code, scale, expo, kx, kle, nk


def _check(hazards, fam, q):
    hazards = np.ascontiguousarray(hazards, dtype=np.float64)
    if hazards.ndim != 2 or hazards.shape[1] != fam.M:
        raise ValueError(f"expected an (R, {fam.M}) matrix, got shape {hazards.shape}")
    if np.any(np.isnan(hazards)) or np.any(hazards < 0):
        raise ValueError("hazards must be nonnegative")
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return hazards, q


def _threshold(s, J):
    R = s.shape[0]
    t = np.full(R, -1.0)
    pos = J > 0
    t[pos] = s[np.flatnonzero(pos), J[pos] - 1]
    return t


def _dagger_numpy(hazards, fam, q):
    R, M = hazards.shape
    with np.errstate(divide="ignore"):
        bound = np.log1p(-q)
    upper = np.triu(np.ones((M, M), dtype=bool))
    Js, ts = [], []
    for start in range(0, R, _CHUNK):
        a = hazards[start:start + _CHUNK]
        order = np.argsort(a, axis=1, kind="stable")
        s = np.take_along_axis(a, order, axis=1)
        L = fam.log_survival_hazard(s)  # (r, j, member)
        L = np.take_along_axis(L, order[:, None, :], axis=2)
        tail = np.where(upper, L, 0.0).sum(axis=2)
        ok = tail >= bound
        J = np.where(ok.all(axis=1), M, np.argmin(ok, axis=1))
        Js.append(J)
        ts.append(_threshold(s, J))
    return np.concatenate(Js).astype(np.int64), np.concatenate(ts)


def _star_numpy(hazards, fam, q):
    R, M = hazards.shape
    k = np.arange(1, M + 1)
    Js, ts = [], []
    for start in range(0, R, _CHUNK):
        a = hazards[start:start + _CHUNK]
        s = np.sort(a, axis=1, kind="stable")
        total = fam.evaluate_hazard(s).sum(axis=2)
        ok = total <= q * k
        J = np.where(ok.any(axis=1), M - np.argmax(ok[:, ::-1], axis=1), 0)
        Js.append(J)
        ts.append(_threshold(s, J))
    return np.concatenate(Js).astype(np.int64), np.concatenate(ts)


def batch_j_dagger(hazards, fam, q, use_numba=None):
    hazards, q = _check(hazards, fam, q)
    if use_numba is None:
        use_numba = numba_enabled()
    if not use_numba:
        return _dagger_numpy(hazards, fam, q)
    R = hazards.shape[0]
    out_j = np.empty(R, dtype=np.int64)
    out_t = np.empty(R)
    bound = math.log1p(-q) if q < 1.0 else -np.inf
    _dagger_rows(hazards, bound, *_params(fam), out_j, out_t)
    return out_j, out_t


def batch_j_star(hazards, fam, q, use_numba=None):
    hazards, q = _check(hazards, fam, q)
    if use_numba is None:
        use_numba = numba_enabled()
    if not use_numba:
        return _star_numpy(hazards, fam, q)
    R = hazards.shape[0]
    out_j = np.empty(R, dtype=np.int64)
    out_t = np.empty(R)
    _star_rows(hazards, q, *_params(fam), out_j, out_t)
    return out_j, out_t


def batch_holm_sidak(pvalues, q):
    """Row-wise step-down Sidak on ordinary p-values; returns ``(J, p threshold)``."""
    p = np.asarray(pvalues, dtype=float)
    R, M = p.shape
    s = np.sort(p, axis=1)
    with np.errstate(divide="ignore"):
        crit = -np.expm1(np.log1p(-q) / (M - np.arange(M)))
    ok = s <= crit
    J = np.where(ok.all(axis=1), M, np.argmin(ok, axis=1))
    return J.astype(np.int64), _threshold(s, J)


def batch_bh(pvalues, q):
    """Row-wise Benjamini-Hochberg on ordinary p-values; returns ``(J, p threshold)``."""
    p = np.asarray(pvalues, dtype=float)
    R, M = p.shape
    s = np.sort(p, axis=1)
    ok = s <= q * np.arange(1, M + 1) / M
    J = np.where(ok.any(axis=1), M - np.argmax(ok[:, ::-1], axis=1), 0)
    return J.astype(np.int64), _threshold(s, J)
