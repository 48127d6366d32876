"""Multiple decision size functions.

A size function maps a common budget ``alpha`` in [0, 1] to the individual
size ``A_m(alpha)`` handed to test ``m``. A family ``A = (A_1, ..., A_M)`` is
admissible when it satisfies

* (A1) ``A_m(0) = 0`` and ``A_m(1) = 1``;
* (A2) each ``A_m`` is continuous and strictly increasing;
* (A3) ``prod_m (1 - A_m(alpha)) >= 1 - alpha``;
* (A4) ``|M0| * max_{m in M0} A_m(alpha) <= sum_m A_m(alpha)`` for the null set M0.

Apart from Bonferroni, every kind here is a *power* size function
``A(alpha) = 1 - (1 - alpha)**e(alpha)`` with exponent ``e``: constant ``1/M``
for Sidak, a constant weight for Weighted, and interpolated between knots for
Tabulated. Everything is evaluated through ``log1p``/``expm1`` so tiny
sizes at large ``M`` do not underflow.

Budgets close to 1 are carried on the cumulative-hazard scale
``h = -log(1 - alpha)``, which keeps the resolution that ``alpha`` itself
loses there (``1 - (1 - 0.9)**45`` is already ``1.0`` in double precision).
The ``*_hazard`` methods take and return that coordinate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("sidak", "bonferroni", "weighted", "tabulated")

DEFAULT_TOL = 1e-9
DEFAULT_GRID_SIZE = 1001


def _check_alpha(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any(np.isnan(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return a


def _check_hazard(h):
    h = np.asarray(h, dtype=float)
    if not np.all(h >= 0.0):
        raise ValueError(f"hazard must be nonnegative, got {h!r}")
    return h


def alpha_to_hazard(alpha):
    """``-log(1 - alpha)``, infinite at ``alpha = 1``."""
    a = _check_alpha(alpha)
    with np.errstate(divide="ignore"):
        out = -np.log1p(-a)
    return float(out) if out.ndim == 0 else out


def hazard_to_alpha(h):
    """``1 - exp(-h)``."""
    out = -np.expm1(-_check_hazard(h))
    return float(out) if out.ndim == 0 else out


def _check_M(M):
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    return int(M)


def _power(alpha, exponent):
    # 1 - (1 - alpha)**exponent, stable near alpha = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.expm1(exponent * np.log1p(-alpha))


def sidak_size(alpha, M):
    """Sidak size ``1 - (1 - alpha)**(1/M)``."""
    M = _check_M(M)
    a = _check_alpha(alpha)
    out = _power(a, 1.0 / M)
    return float(out) if out.ndim == 0 else out


def bonferroni_size(alpha, M):
    """Bonferroni size ``alpha / M``. Note ``A(1) = 1/M`` breaks (A1)."""
    M = _check_M(M)
    a = _check_alpha(alpha)
    out = a / M
    return float(out) if out.ndim == 0 else out


def weighted_size(alpha, weight):
    """``1 - (1 - alpha)**weight`` for ``0 < weight <= 1``."""
    if not (0.0 < weight <= 1.0):
        raise ValueError(f"weight must lie in (0, 1], got {weight!r}")
    a = _check_alpha(alpha)
    out = _power(a, float(weight))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SizeFunction:
    """One component ``A_m`` of a size family.

    ``knots`` (Tabulated only) are ``(alpha, value)`` pairs; the endpoints
    ``(0, 0)`` and ``(1, 1)`` are always pinned. Between knots the cumulative
    hazard ``-log(1 - A)`` is interpolated linearly on a log-log scale against
    ``-log(1 - alpha)``; beyond the outer knots the effective exponent
    ``log(1 - A) / log(1 - alpha)`` is held constant. Strictly increasing knot
    values give a strictly increasing function, and a family whose exponents
    sum to one at every knot has ``prod(1 - A_m) >= 1 - alpha`` everywhere.
    """

    kind: str
    M: int
    weight: float | None = None
    knots: tuple[tuple[float, float], ...] | None = None
    # knots of log(exponent) against log(-log(1 - alpha))
    _kx: np.ndarray = field(init=False, repr=False, compare=False)
    _kle: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown size-function kind {self.kind!r}")
        object.__setattr__(self, "M", _check_M(self.M))
        kx = np.array([-1.0, 1.0])
        if self.kind == "sidak":
            kle = np.full(2, -np.log(self.M))
        elif self.kind == "weighted":
            if self.weight is None or not (0.0 < self.weight <= 1.0):
                raise ValueError(f"weighted size function needs weight in (0, 1], got {self.weight!r}")
            object.__setattr__(self, "weight", float(self.weight))
            kle = np.full(2, np.log(self.weight))
        elif self.kind == "tabulated":
            kx, kle = self._exponent_knots()
        else:
            kle = np.full(2, np.nan)
        kx.setflags(write=False)
        kle.setflags(write=False)
        object.__setattr__(self, "_kx", kx)
        object.__setattr__(self, "_kle", kle)

    def _exponent_knots(self):
        if self.knots is None:
            raise ValueError("tabulated size function needs knots")
        pts = np.asarray(self.knots, dtype=float).reshape(-1, 2)
        inner = pts[(pts[:, 0] > 0.0) & (pts[:, 0] < 1.0)]
        object.__setattr__(self, "knots", tuple((float(a), float(v)) for a, v in inner))
        if len(inner) == 0:
            return np.array([-1.0, 1.0]), np.zeros(2)
        xa, va = inner[:, 0], inner[:, 1]
        if np.any(np.diff(xa) <= 0):
            raise ValueError("tabulated knot alphas must be strictly increasing")
        if np.any(va <= 0.0) or np.any(va >= 1.0):
            raise ValueError("interior tabulated knot values must lie in (0, 1)")
        hx = np.log(-np.log1p(-xa))
        hv = np.log(-np.log1p(-va))
        if len(inner) == 1:
            return np.array([hx[0] - 1.0, hx[0] + 1.0]), np.full(2, hv[0] - hx[0])
        return hx, hv - hx

    @property
    def is_power(self):
        return self.kind != "bonferroni"

    def exponent(self, alpha):
        """Effective exponent ``log(1 - A) / log(1 - alpha)`` (power kinds only)."""
        if not self.is_power:
            raise TypeError("bonferroni size function has no exponent form")
        a = _check_alpha(alpha)
        with np.errstate(divide="ignore"):
            return np.exp(np.interp(np.log(-np.log1p(-a)), self._kx, self._kle))

    def evaluate(self, alpha):
        a = _check_alpha(alpha)
        if self.kind == "bonferroni":
            out = a / self.M
        else:
            out = -np.expm1(self.log_survival(a))
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate

    def log_survival(self, alpha):
        """``log(1 - A(alpha))``; exact for the power kinds."""
        a = _check_alpha(alpha)
        if self.kind == "bonferroni":
            with np.errstate(divide="ignore"):
                return np.log1p(-a / self.M)
        with np.errstate(divide="ignore"):
            return self.log_survival_hazard(-np.log1p(-a))

    def log_survival_hazard(self, h):
        """``log(1 - A)`` at the budget with hazard ``h = -log(1 - alpha)``."""
        return self._lsh(_check_hazard(h))

    def _lsh(self, h):
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "bonferroni":
                return np.log1p(np.expm1(-h) / self.M)
            return -h * np.exp(np.interp(np.log(h), self._kx, self._kle))

    def range_max(self):
        return 1.0 / self.M if self.kind == "bonferroni" else 1.0

    def to_dict(self):
        d = {"kind": self.kind, "M": self.M}
        if self.kind == "weighted":
            d["weight"] = self.weight
        if self.kind == "tabulated":
            d["knots"] = [list(k) for k in self.knots]
        return d


def _check_range(f, u):
    uu = np.asarray(u, dtype=float)
    if np.any(np.isnan(uu)) or np.any(uu < 0.0):
        raise ValueError(f"u must be nonnegative, got {u!r}")
    top = f.range_max()
    if np.any(uu > top):
        raise ValueError(
            f"u={u!r} is outside the range [0, {top:g}] of the {f.kind} size function (M={f.M})"
        )
    return uu


def invert_hazard(f: SizeFunction, u):
    """Hazard ``-log(1 - alpha)`` of the budget ``alpha`` with ``f(alpha) = u``.

    Closed form for every kind. For Tabulated, ``log(-log(1 - A))`` is the
    piecewise-linear, strictly increasing map ``y + interp(y)`` of
    ``y = log(-log(1 - alpha))``, so it is inverted piece by piece.
    """
    uu = _check_range(f, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        if f.kind == "bonferroni":
            out = -np.log1p(-np.minimum(uu * f.M, 1.0))
        else:
            t = -np.log1p(-uu)
            if f.kind in ("sidak", "weighted"):
                out = t / np.exp(f._kle[0])
            else:
                if np.any(np.diff([v for _, v in f.knots]) <= 0):
                    raise ValueError("tabulated size function is not strictly increasing (A2); cannot invert")
                gx = np.maximum.accumulate(f._kx + f._kle)
                s = np.log(t)
                y = np.where(
                    s <= gx[0], s - f._kle[0], np.where(s >= gx[-1], s - f._kle[-1], np.interp(s, gx, f._kx))
                )
                out = np.exp(y)
    return float(out) if out.ndim == 0 else out


def invert_size(f: SizeFunction, u):
    """Return ``alpha`` with ``f(alpha) = u`` (closed form for every kind)."""
    if f.kind == "bonferroni":
        out = np.minimum(_check_range(f, u) * f.M, 1.0)
    else:
        out = -np.expm1(-np.asarray(invert_hazard(f, u)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SizeFamily:
    """Ordered collection of ``M`` size functions, one per test."""

    members: tuple[SizeFunction, ...]
    _exponents: np.ndarray | None = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("size family must have at least one member")
        M = members[0].M
        if any(f.M != M for f in members):
            raise ValueError("all members of a size family must share the same M")
        if len(members) != M:
            raise ValueError(f"size family declares M={M} but has {len(members)} members")
        object.__setattr__(self, "members", members)
        # constant-exponent families (Sidak, weighted) evaluate in one shot
        const = None
        if all(f.kind in ("sidak", "weighted") for f in members):
            const = np.exp(np.array([f._kle[0] for f in members]))
            const.setflags(write=False)
        object.__setattr__(self, "_exponents", const)

    @classmethod
    def sidak(cls, M):
        return cls(tuple(SizeFunction("sidak", M) for _ in range(_check_M(M))))

    @classmethod
    def bonferroni(cls, M):
        return cls(tuple(SizeFunction("bonferroni", M) for _ in range(_check_M(M))))

    @classmethod
    def weighted(cls, weights):
        w = [float(x) for x in weights]
        return cls(tuple(SizeFunction("weighted", len(w), weight=x) for x in w))

    @classmethod
    def tabulated(cls, knots):
        """``knots[m]`` is the list of ``(alpha, value)`` pairs of member ``m``."""
        return cls(tuple(SizeFunction("tabulated", len(knots), knots=tuple(map(tuple, k))) for k in knots))

    @property
    def M(self):
        return len(self.members)

    @property
    def kind(self):
        kinds = {f.kind for f in self.members}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def __len__(self):
        return self.M

    def __getitem__(self, m):
        return self.members[m]

    def evaluate(self, alpha):
        """Sizes of every member; output shape is ``shape(alpha) + (M,)``."""
        a = _check_alpha(alpha)
        if self._exponents is not None:
            return -np.expm1(self.log_survival(a))
        return np.stack([np.asarray(f.evaluate(a)) for f in self.members], axis=-1)

    def log_survival(self, alpha):
        """``log(1 - A_m(alpha))`` for every member, shape ``shape(alpha) + (M,)``."""
        a = _check_alpha(alpha)
        if self._exponents is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return self._exponents * np.log1p(-a)[..., None]
        return np.stack([np.asarray(f.log_survival(a)) for f in self.members], axis=-1)

    def log_survival_hazard(self, h):
        """As ``log_survival`` but at budgets given by their hazard ``-log(1 - alpha)``."""
        return self._lsh(_check_hazard(h))

    def evaluate_hazard(self, h):
        """Sizes of every member at budgets given by their hazard."""
        return -np.expm1(self._lsh(_check_hazard(h)))

    def _lsh(self, h):
        # unchecked: h is a nonnegative float array or scalar
        if self._exponents is not None:
            return self._exponents * -np.asarray(h)[..., None]
        return np.stack([np.asarray(f._lsh(h)) for f in self.members], axis=-1)

    def _per_member(self, fn, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.M:
            raise ValueError(f"expected {self.M} values, got shape {u.shape}")
        return np.stack([np.asarray(fn(f, u[..., m])) for m, f in enumerate(self.members)], axis=-1)

    def invert(self, u):
        """Generalized p-values ``A_m^{-1}(u_m)`` for a length-``M`` vector (last axis)."""
        return self._per_member(invert_size, u)

    def invert_hazard(self, u):
        """Hazards ``-log(1 - A_m^{-1}(u_m))`` of the generalized p-values."""
        return self._per_member(invert_hazard, u)

    def kernel_params(self):
        """Flat arrays describing the family for the compiled kernels.

        Returns ``(code, scale, kx, kle, nk)``: ``code[m]`` is 0 for power
        members and 1 for linear (Bonferroni) members, ``scale`` the linear
        slope, and ``kx``/``kle`` the zero-padded log-exponent knots (against
        ``log(-log(1 - alpha))``) with ``nk`` valid entries per row.
        """
        K = max(len(f._kx) for f in self.members)
        code = np.zeros(self.M, dtype=np.int64)
        scale = np.zeros(self.M)
        kx = np.zeros((self.M, K))
        kle = np.zeros((self.M, K))
        nk = np.zeros(self.M, dtype=np.int64)
        for m, f in enumerate(self.members):
            if f.kind == "bonferroni":
                code[m] = 1
                scale[m] = 1.0 / f.M
                kx[m, :2] = (-1.0, 1.0)
                nk[m] = 2
                continue
            n = len(f._kx)
            kx[m, :n] = f._kx
            kle[m, :n] = f._kle
            nk[m] = n
        return code, scale, kx, kle, nk

    # serialisation -------------------------------------------------------
    def to_dict(self):
        kind = self.kind
        d = {"kind": kind, "M": self.M}
        if kind == "weighted":
            d["weights"] = [f.weight for f in self.members]
        elif kind == "tabulated":
            d["knots"] = [[list(k) for k in f.knots] for f in self.members]
        elif kind == "mixed":
            d["members"] = [f.to_dict() for f in self.members]
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            kind = str(d["kind"]).lower()
            if kind == "sidak":
                return cls.sidak(int(d["M"]))
            if kind == "bonferroni":
                return cls.bonferroni(int(d["M"]))
            if kind == "weighted":
                fam = cls.weighted(d["weights"])
            elif kind == "tabulated":
                knots = d["knots"]
                if knots and knots[0] and not isinstance(knots[0][0], (list, tuple)):
                    # one shared knot list for every member
                    knots = [knots] * int(d["M"])
                fam = cls.tabulated(knots)
            elif kind == "mixed":
                fam = cls(tuple(SizeFunction(**m) for m in d["members"]))
            else:
                raise ValueError(f"unknown size-family kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed size-family document: {exc}") from exc
        if "M" in d and int(d["M"]) != fam.M:
            raise ValueError(f"size-family document declares M={d['M']} but describes {fam.M} members")
        return fam

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def load_family(source, M=None):
    """Build a family from a builtin name (``sidak``/``bonferroni``), a JSON
    string, a file path, or a dict."""
    if isinstance(source, SizeFamily):
        return source
    if isinstance(source, dict):
        d = dict(source)
        if M is not None:
            d.setdefault("M", M)
        return SizeFamily.from_dict(d)
    text = str(source).strip()
    if text.lower() in ("sidak", "bonferroni"):
        if M is None:
            raise ValueError(f"builtin size family {text!r} needs M")
        return SizeFamily.from_dict({"kind": text.lower(), "M": M})
    if text.startswith("{"):
        return load_family(json.loads(text), M)
    path = Path(text)
    if not path.exists():
        raise ValueError(f"size family {text!r} is neither a builtin name nor an existing file")
    return load_family(json.loads(path.read_text()), M)


@dataclass
class ValidationReport:
    a1_pass: bool
    a2_pass: bool
    a3_pass: bool
    a4_pass_by_k: dict[int, bool]
    worst_violation: tuple[str, float, float] | None = None

    @property
    def ok(self):
        """A1 through A3 all hold (the preconditions of the FWER result)."""
        return self.a1_pass and self.a2_pass and self.a3_pass

    def to_dict(self):
        return {
            "a1_pass": self.a1_pass,
            "a2_pass": self.a2_pass,
            "a3_pass": self.a3_pass,
            "a4_pass_by_k": {str(k): v for k, v in self.a4_pass_by_k.items()},
            "ok": self.ok,
            "worst_violation": None
            if self.worst_violation is None
            else dict(zip(("condition", "alpha", "magnitude"), self.worst_violation)),
        }


def validate_family(fam: SizeFamily, grid_size=DEFAULT_GRID_SIZE, k_max=None, tol=DEFAULT_TOL):
    """Check (A1)-(A4) on a uniform grid of ``grid_size`` points.

    (A4) depends on the unknown null set, so it is checked in its worst case:
    for each ``k <= k_max``, ``k * max_m A_m(alpha) <= sum_m A_m(alpha) + tol``.
    Violations are reported, never raised.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    M = fam.M
    k_max = M if k_max is None else int(k_max)
    if not 1 <= k_max <= M:
        raise ValueError(f"k_max must lie in 1..{M}")
    grid = np.linspace(0.0, 1.0, grid_size)
    A = fam.evaluate(grid)  # (grid, M)
    worst = [None]

    def note(cond, idx, mag):
        if worst[0] is None or mag > worst[0][2]:
            worst[0] = (cond, float(grid[idx]), float(mag))

    dev0 = np.abs(A[0])
    dev1 = np.abs(A[-1] - 1.0)
    a1 = bool(dev0.max() <= tol and dev1.max() <= tol)
    if not a1:
        if dev0.max() >= dev1.max():
            note("A1", 0, dev0.max())
        else:
            note("A1", grid_size - 1, dev1.max())

    steps = np.diff(A, axis=0)
    a2 = bool(np.all(steps > 0))
    if not a2:
        i = int(np.argmin(steps.min(axis=1)))
        note("A2", i, max(0.0, -steps[i].min()))

    with np.errstate(divide="ignore"):
        prod = np.exp(np.sum(np.log1p(-np.minimum(A, 1.0)), axis=1))
    gap3 = (1.0 - grid - tol) - prod
    a3 = bool(np.all(gap3 <= 0))
    if not a3:
        i = int(np.argmax(gap3))
        note("A3", i, gap3[i] + tol)

    total = A.sum(axis=1)
    biggest = A.max(axis=1)
    a4 = {}
    for k in range(1, k_max + 1):
        gap4 = k * biggest - total - tol
        a4[k] = bool(np.all(gap4 <= 0))
        if not a4[k]:
            i = int(np.argmax(gap4))
            note(f"A4[k={k}]", i, gap4[i] + tol)
    return ValidationReport(a1, a2, a3, a4, worst[0])


def check_a4_exact(fam: SizeFamily, null_idx, grid_size=DEFAULT_GRID_SIZE, tol=DEFAULT_TOL):
    """(A4) against a known null set: ``|M0| max_{M0} A_m <= sum A_m`` on the grid."""
    null_idx = np.asarray(null_idx, dtype=int)
    if null_idx.size == 0:
        return True
    grid = np.linspace(0.0, 1.0, grid_size)
    A = fam.evaluate(grid)
    lhs = null_idx.size * A[:, null_idx].max(axis=1)
    return bool(np.all(lhs <= A.sum(axis=1) + tol))


def a3_product(fam: SizeFamily, alpha):
    """``prod_m (1 - A_m(alpha))`` computed in log space."""
    return float(np.exp(np.sum(fam.log_survival(alpha))))


__all__ = [
    "SizeFunction",
    "SizeFamily",
    "ValidationReport",
    "sidak_size",
    "bonferroni_size",
    "weighted_size",
    "invert_size",
    "invert_hazard",
    "alpha_to_hazard",
    "hazard_to_alpha",
    "validate_family",
    "check_a4_exact",
    "load_family",
    "a3_product",
]
