"""The FWER-controlling (dagger) and FDR-controlling (star) decision rules.

For a battery and an admissible size family, the dagger rule evaluates every
test at the first budget where

    H1(alpha) = prod_{m : alpha_m >= alpha} (1 - A_m(alpha))

drops below ``1 - q``, and the star rule at the last budget where
``sum_m A_m(alpha) <= q * #{m : alpha_m <= alpha}``. Both reduce to cutoffs on
the ordered generalized p-values:

    J_dagger = max{k : prod_{m >= j} (1 - A_(m)(alpha_(j))) >= 1 - q, j = 1..k}
    J_star   = max{k : sum_m A_m(alpha_(k)) <= q k}

and the rejected tests are the ``J`` smallest. The crossing budgets are
computed separately by scanning the pieces between distinct generalized
p-values, giving an independent route to the same rejection set.
With Sidak sizes the cutoffs are step-down Sidak and Benjamini-Hochberg;
plain implementations of both are included as reference oracles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pvalues import GeneralizedPValues, TestBattery, anti_ranks, generalized_pvalues
from .sizefam import SizeFamily

PROCEDURES = ("dagger", "star", "holm-sidak", "bh")
FWER_PROCEDURES = ("dagger", "holm-sidak")

_ALIASES = {
    "dagger": "dagger",
    "star": "star",
    "holm-sidak": "holm-sidak",
    "holmsidak": "holm-sidak",
    "holm_sidak": "holm-sidak",
    "bh": "bh",
}

_ROOT_WIDTH = 1e-12


def normalize_procedure(name):
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise ValueError(f"unknown procedure {name!r}; choose from {', '.join(PROCEDURES)}")
    return _ALIASES[key]


def _check_q(q):
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q!r}")
    return q


# --- cutoff (anti-rank) route ------------------------------------------------


def j_dagger(gp: GeneralizedPValues, fam: SizeFamily, q):
    """Step-down cutoff: stop at the first ``j`` whose tail product falls below ``1 - q``."""
    q = _check_q(q)
    order = gp.antirank
    # L[j, m] = log(1 - A_(m)(alpha_(j)))
    L = fam.log_survival_hazard(gp.hazards[order])[:, order]
    tail = np.triu(L).sum(axis=1)
    with np.errstate(divide="ignore"):
        bound = np.log1p(-q)
    ok = tail >= bound
    return int(gp.M if ok.all() else np.argmin(ok))


def j_star(gp: GeneralizedPValues, fam: SizeFamily, q):
    """Step-up cutoff: the largest ``k`` with ``sum_m A_m(alpha_(k)) <= q k``."""
    q = _check_q(q)
    total = fam.evaluate_hazard(gp.ordered_hazards).sum(axis=1)
    k = np.arange(1, gp.M + 1)
    ok = np.flatnonzero(total <= q * k)
    return int(ok[-1] + 1) if ok.size else 0


# --- crossing-time route -------------------------------------------------------
# Budgets are handled as hazards h = -log(1 - alpha); see sizefam.


def _log_h1(h, hazards, fam):
    """log H1 with left-limit exponent: only tests with ``alpha_m >= alpha`` contribute."""
    return float(fam._lsh(h)[hazards >= h].sum())


def _bisect(pred, lo, hi):
    """Shrink ``[lo, hi]`` with ``pred(lo)`` true and ``pred(hi)`` false; returns ``lo``."""
    if np.isinf(hi):
        hi = max(2.0 * lo, 1.0)
        while pred(hi):
            lo, hi = hi, 2.0 * hi
    while hi - lo > _ROOT_WIDTH * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def hazard_dagger(gp: GeneralizedPValues, fam: SizeFamily, q):
    """``alpha_dagger`` on the hazard scale (``inf`` when ``H1`` never crosses)."""
    q = _check_q(q)
    hazards = gp.hazards
    with np.errstate(divide="ignore"):
        bound = np.log1p(-q)
        hq = -np.log1p(-q)
    left = 0.0
    for v in np.unique(hazards):
        if v > left and _log_h1(v, hazards, fam) < bound:
            return _bisect(lambda h: _log_h1(h, hazards, fam) >= bound, max(left, min(hq, v)), float(v))
        left = float(v)
    return np.inf


def alpha_dagger(gp: GeneralizedPValues, fam: SizeFamily, q):
    """First budget where ``H1`` drops below ``1 - q`` (1.0 if it never does).

    ``H1`` decreases between consecutive distinct generalized p-values and
    jumps up at each of them, so the scan checks the right end of every piece
    and bisects (relative width 1e-12) inside the first piece that crosses.
    The value returned is the lower end of the final bracket, clamped to
    ``>= q``; the bound ``1 - alpha <= H1(alpha)`` places the true crossing
    there.
    """
    return max(_check_q(q), float(-np.expm1(-hazard_dagger(gp, fam, q))))


def hazard_star(gp: GeneralizedPValues, fam: SizeFamily, q):
    """``alpha_star`` on the hazard scale."""
    q = _check_q(q)
    hazards = gp.hazards
    vals = np.unique(hazards)
    counts = np.searchsorted(np.sort(hazards), vals, side="right")

    def total(h):
        return float(-np.expm1(fam._lsh(h)).sum())

    for i in range(vals.size - 1, -1, -1):
        v, c = float(vals[i]), int(counts[i])
        if total(v) <= q * c:
            last = i + 1 == vals.size
            nxt = np.inf if last else float(vals[i + 1])
            if total(nxt) <= q * c:
                # only reachable on the last piece, which is closed at alpha = 1
                return nxt if last else float(np.nextafter(nxt, 0.0))
            return _bisect(lambda h: total(h) <= q * c, v, nxt)
    return 0.0


def alpha_star(gp: GeneralizedPValues, fam: SizeFamily, q):
    """Last budget with ``sum_m A_m(alpha) <= q S(alpha)``.

    ``S`` is the right-continuous count of generalized p-values at or below
    ``alpha``. The scan walks distinct values from the top, finds the last
    piece whose left end satisfies the inequality, then bisects (relative
    width 1e-12) for the largest root inside it; the result stays strictly
    below the next jump.
    """
    return float(-np.expm1(-hazard_star(gp, fam, q)))


# --- reference oracles on ordinary p-values ------------------------------------


def holm_sidak_stepdown(pvalues, q):
    """Step-down Sidak: ``max{k : P_(j) <= 1 - (1 - q)^(1/(M-j+1)), j <= k}``."""
    q = _check_q(q)
    p = np.sort(np.asarray(pvalues, dtype=float))
    M = p.size
    with np.errstate(divide="ignore"):
        crit = -np.expm1(np.log1p(-q) / (M - np.arange(M)))
    ok = p <= crit
    return int(M if ok.all() else np.argmin(ok))


def bh_stepup(pvalues, q):
    """Benjamini-Hochberg: ``max{k : P_(k) <= q k / M}``."""
    q = _check_q(q)
    p = np.sort(np.asarray(pvalues, dtype=float))
    M = p.size
    ok = np.flatnonzero(p <= q * np.arange(1, M + 1) / M)
    return int(ok[-1] + 1) if ok.size else 0


# --- outcomes ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProcedureOutcome:
    procedure: str
    q: float
    J: int
    alpha_threshold: float
    alpha_interval: tuple[float, float]
    sizes_at_threshold: np.ndarray
    rejected: tuple[str, ...]
    rejected_mask: np.ndarray

    def to_dict(self):
        return {
            "procedure": self.procedure,
            "q": self.q,
            "J": self.J,
            "alpha_threshold": self.alpha_threshold,
            "alpha_interval": list(self.alpha_interval),
            "rejected": list(self.rejected),
            "sizes_at_threshold": [float(x) for x in self.sizes_at_threshold],
        }


def _outcome(name, battery, fam, gp, q, J, h, order=None):
    order = gp.antirank if order is None else order
    mask = np.zeros(battery.M, dtype=bool)
    mask[order[:J]] = True
    mask.setflags(write=False)
    return ProcedureOutcome(
        procedure=name,
        q=q,
        J=J,
        alpha_threshold=float(-np.expm1(-h)),
        alpha_interval=gp.interval(J),
        sizes_at_threshold=fam.evaluate_hazard(h),
        rejected=tuple(battery.ids[m] for m in order[:J]),
        rejected_mask=mask,
    )


def _prepare(battery, fam, q):
    if battery.M == 0:
        raise ValueError("battery must be nonempty")
    return _check_q(q), generalized_pvalues(battery, fam)


def _agree(name, gp, J, h):
    by_cutoff = np.zeros(gp.M, dtype=bool)
    by_cutoff[gp.antirank[:J]] = True
    by_threshold = gp.hazards <= h
    if not np.array_equal(by_cutoff, by_threshold):
        raise RuntimeError(f"{name}: cutoff J={J} and crossing threshold {h!r} disagree on the rejection set")


def reject_dagger(battery: TestBattery, fam: SizeFamily, q):
    """FWER-controlling rule; cross-checks the cutoff against the crossing time."""
    q, gp = _prepare(battery, fam, q)
    J = j_dagger(gp, fam, q)
    h = hazard_dagger(gp, fam, q)
    _agree("dagger", gp, J, h)
    return _outcome("dagger", battery, fam, gp, q, J, h)


def reject_star(battery: TestBattery, fam: SizeFamily, q):
    """FDR-controlling rule; cross-checks the cutoff against the crossing time."""
    q, gp = _prepare(battery, fam, q)
    J = j_star(gp, fam, q)
    h = hazard_star(gp, fam, q)
    _agree("star", gp, J, h)
    return _outcome("star", battery, fam, gp, q, J, h)


def _reject_classical(name, battery, q):
    if battery.M == 0:
        raise ValueError("battery must be nonempty")
    q = _check_q(q)
    fam = SizeFamily.sidak(battery.M)
    gp = generalized_pvalues(battery, fam)
    order = anti_ranks(battery.p)
    J = holm_sidak_stepdown(battery.p, q) if name == "holm-sidak" else bh_stepup(battery.p, q)
    # any budget in [alpha_(J), alpha_(J+1)) gives the same decisions
    h = 0.0 if J == 0 else float(gp.hazards[order[J - 1]])
    return _outcome(name, battery, fam, gp, q, J, h, order)


def reject(battery: TestBattery, fam: SizeFamily | None, q, procedure):
    """Dispatch by procedure name. The classical rules always use Sidak sizes."""
    name = normalize_procedure(procedure)
    if name == "dagger":
        return reject_dagger(battery, fam, q)
    if name == "star":
        return reject_star(battery, fam, q)
    return _reject_classical(name, battery, q)
