"""Power-optimal size functions under weak FWER control.

For a fixed alternative with ROC curves ``pi_m`` and a budget ``alpha``, pick
sizes maximising total power ``sum_m pi_m(A_m)`` subject to
``prod_m (1 - A_m) = 1 - alpha``. Writing ``A_m = 1 - (1 - alpha)**w_m`` turns
the constraint into ``w`` on the unit simplex, and for concave ROCs the
objective is concave in ``w``. The solver works on the Lagrangian: every
positive weight has the same marginal power ``lambda``, each marginal is
strictly decreasing in its own weight, so ``w_m(lambda)`` is found by
bisection and ``lambda`` by an outer bisection on ``sum_m w_m(lambda) = 1``.

Built-in ROC: one-sided normal shift, ``pi(a) = Phi(Phi^{-1}(a) + theta)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .sizefam import SizeFamily, validate_family

KKT_TOL = 1e-8
REPAIR_BUDGET = 1e-3
FEASIBILITY_TOL = 1e-8

_Z_FLOOR = -38.0  # Phi(-38) ~ 3e-316: any smaller weight underflows anyway
_INNER_ITERS = 64
_OUTER_ITERS = 200


class OptimizerError(RuntimeError):
    """Optimizer did not converge; ``solution`` holds the best feasible point."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class RepairError(ValueError):
    """Isotonic repair could not produce an admissible family within budget."""


def roc_normal_shift(a, theta):
    """``Phi(Phi^{-1}(a) + theta)``, with ``pi(0) = 0`` and ``pi(1) = 1``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("a must lie in [0, 1]")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("theta must be nonnegative")
    out = np.where(theta == 0, a, ndtr(ndtri(a) + theta))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class RocModel:
    thetas: np.ndarray
    tail: str = "one-sided"

    def __post_init__(self):
        t = np.array(self.thetas, dtype=float).reshape(-1)
        if t.size == 0:
            raise ValueError("need at least one theta")
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise ValueError("thetas must be finite and nonnegative")
        if self.tail != "one-sided":
            raise ValueError("only the one-sided normal-shift ROC is built in")
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    @property
    def M(self):
        return self.thetas.size

    def power(self, sizes):
        """Per-test power at the given sizes (last axis indexes tests)."""
        return roc_normal_shift(sizes, self.thetas)

    def total_power(self, weights, alpha):
        sizes = -np.expm1(np.asarray(weights, dtype=float) * np.log1p(-alpha))
        return float(np.sum(self.power(sizes)))


@dataclass(frozen=True, eq=False)
class WeightSolution:
    alpha: float
    weights: np.ndarray
    total_power: float
    kkt_residual: float

    @property
    def sizes(self):
        return -np.expm1(self.weights * np.log1p(-self.alpha))


def _log_marginal(w, theta, la):
    """log d/dw pi(1 - (1 - alpha)**w), with ``la = log(1 - alpha)``."""
    a = -np.expm1(w * la)
    z = ndtri(a)
    with np.errstate(invalid="ignore"):
        shift = np.where(theta == 0, 0.0, -theta * z)
    return shift - 0.5 * theta**2 + w * la + np.log(-la)


def _weights_for(loglam, thetas, la):
    """Weight of each test whose marginal power equals ``exp(loglam)``.

    Parametrised by the quantile ``z = Phi^{-1}(A)``: the marginal is
    ``-theta z - theta^2/2 + log Phi(-z) + log(-la)``, strictly decreasing in
    ``z``, and ``w = log Phi(-z) / la``. Arrays broadcast as ``(G, 1)``
    against ``(M,)``.
    """
    c = loglam + 0.5 * thetas**2 - np.log(-la)
    z1 = ndtri(-np.expm1(la))  # w = 1  <=>  A = alpha
    z1 = np.broadcast_to(z1, c.shape)

    def h(z):
        return -thetas * z + log_ndtr(-z)

    full = h(z1) >= c
    empty = h(np.full(c.shape, _Z_FLOOR)) <= c
    lo = np.full(c.shape, _Z_FLOOR)
    hi = z1.copy()
    for _ in range(_INNER_ITERS):
        mid = 0.5 * (lo + hi)
        above = h(mid) > c
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    w = log_ndtr(-0.5 * (lo + hi)) / la
    w = np.where(full, 1.0, np.where(empty, 0.0, w))
    return np.clip(w, 0.0, 1.0)


def _solve(thetas, alphas):
    """Optimal weights for every budget in ``alphas``; returns ``(W, loglam)``."""
    alphas = np.asarray(alphas, dtype=float).reshape(-1)
    M = thetas.size
    if M == 1:
        return np.ones((alphas.size, 1)), np.full(alphas.size, np.nan)
    la = np.log1p(-alphas)[:, None]
    lg_full = _log_marginal(np.ones(M), thetas, la)
    lg_even = _log_marginal(np.full(M, 1.0 / M), thetas, la)
    # sum w >= 1 at the lower end, <= 1 at the upper end
    lo = lg_full.min(axis=1)
    hi = lg_even.max(axis=1)
    for _ in range(_OUTER_ITERS):
        mid = 0.5 * (lo + hi)
        if not np.any((mid > lo) & (mid < hi)):
            break
        s = _weights_for(mid[:, None], thetas, la).sum(axis=1)
        # the float sum can sit at exactly 1 over a range of lambda when some
        # weights fall below rounding; the largest such lambda is the right one
        over = s >= 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    # the upper end has sum(w) <= 1, so tests priced out of the support get exactly 0
    loglam = hi
    W = _weights_for(loglam[:, None], thetas, la)
    W = W / W.sum(axis=1, keepdims=True)
    return W, loglam


def _kkt_residual(w, thetas, alpha, loglam=None):
    """Spread of log marginal powers over the support (0 at a KKT point).

    Positive weights must share one marginal; zero weights must not exceed
    it (checked at the smallest representable quantile). Measured without
    ``lambda``, which is not unique when the support is a single test.
    """
    if w.size == 1:
        return abs(w[0] - 1.0)
    la = np.log1p(-alpha)
    pos = w > 0
    lg = _log_marginal(w[pos], thetas[pos], la)
    res = float(lg.max() - lg.min())
    if (~pos).any():
        th = thetas[~pos]
        floor = -th * _Z_FLOOR - 0.5 * th**2 + log_ndtr(-_Z_FLOOR) + np.log(-la)
        res = max(res, float(np.max(np.maximum(floor - lg.min(), 0.0))))
    return res


def _check_alpha_open(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def optimize_weights_at_alpha(roc: RocModel, alpha, kkt_tol=KKT_TOL):
    """Maximise total power over the simplex of exponent weights at one budget."""
    alpha = _check_alpha_open(alpha)
    W, loglam = _solve(roc.thetas, [alpha])
    return _finish(roc, alpha, W[0], loglam[0], kkt_tol)


def _finish(roc, alpha, w, loglam, kkt_tol):
    sol = WeightSolution(
        alpha=alpha,
        weights=w,
        total_power=roc.total_power(w, alpha),
        kkt_residual=_kkt_residual(w, roc.thetas, alpha, loglam),
    )
    if not sol.kkt_residual <= kkt_tol or abs(w.sum() - 1.0) > 1e-10:
        raise OptimizerError(
            f"weights at alpha={alpha:g} did not converge (KKT residual {sol.kkt_residual:.3g})", sol
        )
    return sol


def solve_grid(roc: RocModel, grid, kkt_tol=KKT_TOL):
    """``optimize_weights_at_alpha`` at every grid point (solved jointly)."""
    grid = np.asarray(grid, dtype=float)
    for a in grid:
        _check_alpha_open(a)
    W, loglam = _solve(roc.thetas, grid)
    return [_finish(roc, float(a), W[i], loglam[i], kkt_tol) for i, a in enumerate(grid)]


def pava(y, weights=None):
    """Nondecreasing least-squares fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    # blocks as parallel stacks: weighted mean, total weight, length
    means, wts, lens = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), lens.pop()
            m1, w1, n1 = means.pop(), wts.pop(), lens.pop()
            means.append((m1 * w1 + m2 * w2) / (w1 + w2))
            wts.append(w1 + w2)
            lens.append(n1 + n2)
    return np.repeat(means, lens)


def default_grid():
    return np.linspace(0.01, 0.99, 99)


def build_optimal_family(roc: RocModel, grid=None, repair_budget=REPAIR_BUDGET, kkt_tol=KKT_TOL, tol=1e-9):
    """Tabulated family of per-budget optimal sizes.

    Sizes are solved at each grid budget, repaired per component to be
    nondecreasing in ``alpha`` (pool-adjacent-violators), and pinned at
    ``(0, 0)`` and ``(1, 1)``. Raises ``RepairError`` when repair would move a
    size by more than ``repair_budget`` or the result is not admissible.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 16:
        raise ValueError("grid needs at least 16 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    sols = solve_grid(roc, grid, kkt_tol)
    la = np.log1p(-grid)[:, None]
    W = np.stack([s.weights for s in sols])
    S = -np.expm1(W * la)
    feas = np.abs(np.exp(np.sum(np.log1p(-S), axis=1)) - (1.0 - grid))
    if feas.max() > FEASIBILITY_TOL:
        raise OptimizerError(f"optimal sizes miss the weak-control constraint by {feas.max():.3g}")

    R = np.column_stack([pava(S[:, m]) for m in range(roc.M)])
    moved = float(np.max(np.abs(R - S)))
    if moved > repair_budget:
        raise RepairError(f"isotonic repair moved a size by {moved:.3g} > budget {repair_budget:g}")
    if moved > 0:
        # pooling can raise sizes; shrink exponents back onto the constraint
        E = np.log1p(-R) / la
        R = -np.expm1(E / np.maximum(E.sum(axis=1, keepdims=True), 1.0) * la)
    if np.any(R <= 0) or np.any(np.diff(R, axis=0) <= 0):
        bad = int(np.argmax(np.any(R <= 0, axis=0) | np.any(np.diff(R, axis=0) <= 0, axis=0)))
        raise RepairError(
            f"component {bad} (theta={roc.thetas[bad]:g}) does not get a strictly increasing positive size "
            "on this grid; (A2) cannot hold"
        )
    fam = SizeFamily.tabulated([list(zip(grid.tolist(), R[:, m].tolist())) for m in range(roc.M)])
    report = validate_family(fam, k_max=1, tol=tol)
    if not report.ok:
        raise RepairError(f"optimal family is not admissible: worst violation {report.worst_violation}")
    return fam
