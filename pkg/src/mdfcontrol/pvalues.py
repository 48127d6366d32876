"""Test batteries, generalized p-values and anti-ranks.

Each decision process is realised by its p-value: test ``m`` at size ``u``
rejects iff ``P_m <= u``. Under a size family ``A`` the test rejects at budget
``alpha`` iff ``alpha >= alpha_m`` where ``alpha_m = A_m^{-1}(P_m)`` is the
generalized p-value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sizefam import SizeFamily


class BatteryParseError(ValueError):
    """Malformed p-value file; ``line`` is 1-based (header = line 1)."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TestBattery:
    """Ordered ``(id, p)`` records, optionally with a z statistic per record."""

    __test__ = False  # not a pytest class

    ids: tuple[str, ...]
    p: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        p = _frozen(self.p).reshape(-1)
        if len(ids) != p.size:
            raise ValueError(f"{len(ids)} ids but {p.size} p-values")
        if len(set(ids)) != len(ids):
            raise ValueError("test ids must be unique")
        if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("p-values must lie in [0, 1]")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "p", p)
        if self.z is not None:
            z = _frozen(self.z).reshape(-1)
            if z.size != p.size:
                raise ValueError("z must have one entry per record")
            object.__setattr__(self, "z", z)

    @classmethod
    def from_pvalues(cls, p, ids=None):
        p = np.asarray(p, dtype=float).reshape(-1)
        if ids is None:
            width = max(1, len(str(p.size)))
            ids = [f"H{m + 1:0{width}d}" for m in range(p.size)]
        return cls(tuple(ids), p)

    @property
    def M(self):
        return len(self.ids)

    def __len__(self):
        return self.M


def randomized_pvalue(p_minus, p, u):
    """Randomised p-value ``p_minus + u * (p - p_minus)`` for a discrete test.

    ``p_minus`` and ``p`` are the left limit and attained value of the null
    tail probability at the observed statistic. With ``u ~ U(0, 1)``
    independent of the data the result is exactly uniform under the null.
    """
    p_minus = np.asarray(p_minus, dtype=float)
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(p_minus > p):
        raise ValueError("p_minus must not exceed p")
    if np.any(p_minus < 0) or np.any(p > 1) or np.any(u < 0) or np.any(u > 1):
        raise ValueError("p_minus, p and u must lie in [0, 1]")
    out = p_minus + u * (p - p_minus)
    return float(out) if out.ndim == 0 else out


def read_battery_csv(path, seed=None):
    """Read a battery from CSV with header ``id,p[,z]``.

    Discrete tests may add a ``p_minus`` column (and optionally ``u``); their
    p-value is then randomised once at ingestion, drawing ``u`` from a
    generator seeded by ``seed`` when the column is absent.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise BatteryParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise BatteryParseError("empty file: expected header 'id,p[,z]'", line=1)
        cols = [h.strip().lower() for h in header]
        if cols[:2] != ["id", "p"]:
            raise BatteryParseError(f"header must start with 'id,p', got {','.join(header)!r}", line=1)
        allowed = {"z", "p_minus", "u"}
        if not set(cols[2:]) <= allowed or len(set(cols)) != len(cols):
            raise BatteryParseError(f"unexpected columns {cols[2:]!r}; allowed extras: z, p_minus, u", line=1)
        ids, rows = [], []
        seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise BatteryParseError(f"expected {len(cols)} fields, got {len(row)}", line=lineno)
            rid = row[0].strip()
            if not rid:
                raise BatteryParseError("empty id", line=lineno)
            if rid in seen:
                raise BatteryParseError(f"duplicate id {rid!r} (first seen on line {seen[rid]})", line=lineno)
            seen[rid] = lineno
            rec = {}
            for name, raw in zip(cols[1:], row[1:]):
                try:
                    rec[name] = float(raw)
                except ValueError:
                    raise BatteryParseError(f"column {name!r}: {raw.strip()!r} is not a number", line=lineno) from None
            if not 0.0 <= rec["p"] <= 1.0:
                raise BatteryParseError(f"p={rec['p']!r} is outside [0, 1]", line=lineno)
            if "p_minus" in rec and not 0.0 <= rec["p_minus"] <= rec["p"]:
                raise BatteryParseError("p_minus must lie in [0, p]", line=lineno)
            if "u" in rec and not 0.0 <= rec["u"] <= 1.0:
                raise BatteryParseError("u must lie in [0, 1]", line=lineno)
            ids.append(rid)
            rows.append(rec)
    if not rows:
        raise BatteryParseError(f"{path}: no data rows after the header (need at least one 'id,p' row)")
    p = np.array([r["p"] for r in rows])
    if "p_minus" in cols:
        pm = np.array([r["p_minus"] for r in rows])
        if "u" in cols:
            u = np.array([r["u"] for r in rows])
        else:
            u = np.random.default_rng(seed).random(len(rows))
        p = randomized_pvalue(pm, p, u)
    z = np.array([r["z"] for r in rows]) if "z" in cols else None
    return TestBattery(tuple(ids), p, z)


def anti_ranks(alphas):
    """Permutation sorting ``alphas`` ascending; ties keep original order.

    Returned 0-based: ``alphas[out[0]] <= alphas[out[1]] <= ...``.
    """
    a = np.asarray(alphas, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError("anti_ranks needs at least one value")
    return np.argsort(a, kind="stable")


@dataclass(frozen=True, eq=False)
class GeneralizedPValues:
    """``alphas`` with their hazards ``-log(1 - alpha)`` and anti-ranks.

    Ordering and all procedure arithmetic use ``hazards``, which stay
    distinct where ``alphas`` round to 1.
    """

    alphas: np.ndarray
    antirank: np.ndarray
    hazards: np.ndarray

    @property
    def M(self):
        return self.alphas.size

    @property
    def ordered(self):
        """``alpha_(1) <= ... <= alpha_(M)``."""
        return self.alphas[self.antirank]

    @property
    def ordered_hazards(self):
        return self.hazards[self.antirank]

    def interval(self, J):
        """``[alpha_(J), alpha_(J+1))`` with ``alpha_(0) = 0``, ``alpha_(M+1) = 1``."""
        s = self.ordered
        lo = 0.0 if J == 0 else float(s[J - 1])
        hi = 1.0 if J == self.M else float(s[J])
        return lo, hi

    def hazard_interval(self, J):
        """``interval(J)`` on the hazard scale (``inf`` stands for ``alpha = 1``)."""
        s = self.ordered_hazards
        lo = 0.0 if J == 0 else float(s[J - 1])
        hi = np.inf if J == self.M else float(s[J])
        return lo, hi


def generalized_pvalues(battery: TestBattery, fam: SizeFamily):
    """``alpha_m = A_m^{-1}(P_m)`` and their anti-ranks."""
    if battery.M == 0:
        raise ValueError("battery must be nonempty")
    if battery.M != fam.M:
        raise ValueError(f"battery has {battery.M} tests but the size family has M={fam.M}")
    hazards = fam.invert_hazard(battery.p)
    alphas = -np.expm1(-hazards)
    order = anti_ranks(hazards)
    for a in (alphas, hazards, order):
        a.setflags(write=False)
    return GeneralizedPValues(alphas, order, hazards)
