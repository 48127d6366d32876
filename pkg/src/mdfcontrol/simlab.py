"""Monte Carlo checks of FWER / FDR control under a Gaussian shift model.

Replicate ``i`` draws its statistics from its own stream
``SeedSequence(seed, spawn_key=(i,))``, so results do not depend on how
replicates are split across workers. Nulls are independent ``N(0, 1)``;
alternatives are ``N(theta_m, 1)`` with equicorrelation ``rho`` through a
shared factor ``sqrt(rho) W + sqrt(1 - rho) eps_m``.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errmetrics import GroundTruth, RateEstimates, rates_from_arrays
from .procedures import FWER_PROCEDURES, normalize_procedure
from .pvalues import TestBattery
from .sizefam import SizeFamily, check_a4_exact, load_family, validate_family

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

TAILS = ("one-sided", "two-sided")
_BLOCK = 4096


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class SimRefusal(ConfigError):
    """The size family does not meet the conditions the procedure relies on."""


@dataclass(frozen=True)
class SimConfig:
    M: int
    m0: int
    effects: tuple = ()
    alt_correlation: float = 0.0
    tail: str = "one-sided"
    q: float = 0.05
    procedure: str = "dagger"
    size_family: dict = field(default_factory=lambda: {"kind": "sidak"})
    replicates: int = 10000
    seed: int = 0
    k_sigma: float = 3.0

    def __post_init__(self):
        try:
            M, m0 = int(self.M), int(self.m0)
        except (TypeError, ValueError):
            raise ConfigError("M and m0 must be integers") from None
        if M < 1 or not 0 <= m0 <= M:
            raise ConfigError(f"need M >= 1 and 0 <= m0 <= M, got M={self.M}, m0={self.m0}")
        eff = np.atleast_1d(np.asarray(self.effects, dtype=float))
        if eff.size == 1 and M - m0 != 1:
            eff = np.full(M - m0, eff[0]) if M > m0 else np.empty(0)
        if eff.size != M - m0:
            raise ConfigError(f"effects must have M - m0 = {M - m0} entries, got {eff.size}")
        if not 0.0 <= float(self.alt_correlation) < 1.0:
            raise ConfigError("alt_correlation must lie in [0, 1)")
        tail = str(self.tail).lower().replace("_", "-")
        if tail in ("onesided", "one"):
            tail = "one-sided"
        if tail in ("twosided", "two"):
            tail = "two-sided"
        if tail not in TAILS:
            raise ConfigError(f"tail must be one of {TAILS}")
        if not 0.0 <= float(self.q) <= 1.0:
            raise ConfigError("q must lie in [0, 1]")
        try:
            proc = normalize_procedure(self.procedure)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if float(self.k_sigma) < 0:
            raise ConfigError("k_sigma must be nonnegative")
        fam = self.size_family
        if isinstance(fam, SizeFamily):
            fam = fam.to_dict()
        elif isinstance(fam, str):
            fam = {"kind": fam}
        fam = dict(fam)
        fam.setdefault("M", M)
        for name, value in (
            ("M", M), ("m0", m0), ("effects", tuple(float(x) for x in eff)),
            ("alt_correlation", float(self.alt_correlation)), ("tail", tail), ("q", float(self.q)),
            ("procedure", proc), ("size_family", fam), ("replicates", int(self.replicates)),
            ("seed", int(self.seed)), ("k_sigma", float(self.k_sigma)),
        ):
            object.__setattr__(self, name, value)

    def family(self):
        try:
            return load_family(self.size_family, self.M)
        except ValueError as exc:
            raise ConfigError(f"size_family: {exc}") from None

    def to_dict(self):
        return {
            "M": self.M,
            "m0": self.m0,
            "effects": list(self.effects),
            "alt_correlation": self.alt_correlation,
            "tail": self.tail,
            "q": self.q,
            "procedure": self.procedure,
            "size_family": self.size_family,
            "replicates": self.replicates,
            "seed": self.seed,
            "k_sigma": self.k_sigma,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        try:
            d = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(d)


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    rates: RateEstimates
    pass_fwer: bool
    pass_fdr: bool
    k_sigma: float

    @property
    def passed(self):
        """Bound check for the rate the procedure is designed to control."""
        return self.pass_fwer if self.config.procedure in FWER_PROCEDURES else self.pass_fdr

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "rates": self.rates.to_dict(),
            "pass_fwer": self.pass_fwer,
            "pass_fdr": self.pass_fdr,
            "k_sigma": self.k_sigma,
            "controlled_rate": "fwer" if self.config.procedure in FWER_PROCEDURES else "fdr",
            "passed": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _stream(seed, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(index),))))


def _draw_z(config: SimConfig, index):
    rng = _stream(config.seed, index)
    draws = rng.standard_normal(config.M + 1)
    z = draws[: config.M].copy()
    m1 = config.M - config.m0
    if m1:
        rho = config.alt_correlation
        shared = draws[config.M]
        z[config.m0:] = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * z[config.m0:] + np.asarray(config.effects)
    return z


def _pvalues(z, tail):
    if tail == "one-sided":
        return ndtr(-z)
    return 2.0 * ndtr(-np.abs(z))


def _ids(M):
    width = len(str(M))
    return tuple(f"H{m + 1:0{width}d}" for m in range(M))


def gen_replicate(config: SimConfig, stream_index):
    """One simulated battery and its ground truth (nulls are the first ``m0`` tests)."""
    z = _draw_z(config, stream_index)
    ids = _ids(config.M)
    truth = GroundTruth(ids[: config.m0], ids[config.m0:])
    return TestBattery(ids, _pvalues(z, config.tail), z), truth


def _block(config: SimConfig, start, stop):
    """Per-replicate (s0, s, fdp, missed) for replicates ``start..stop-1``."""
    fam = config.family()
    z = np.stack([_draw_z(config, i) for i in range(start, stop)])
    p = _pvalues(z, config.tail)
    proc = config.procedure
    if proc == "holm-sidak":
        _, t = kernels.batch_holm_sidak(p, config.q)
        rejected = p <= t[:, None]
    elif proc == "bh":
        _, t = kernels.batch_bh(p, config.q)
        rejected = p <= t[:, None]
    else:
        hazards = fam.invert_hazard(p)
        batch = kernels.batch_j_dagger if proc == "dagger" else kernels.batch_j_star
        _, t = batch(hazards, fam, config.q)
        rejected = hazards <= t[:, None]
    s = rejected.sum(axis=1)
    s0 = rejected[:, : config.m0].sum(axis=1)
    fdp = np.where(s > 0, s0 / np.maximum(s, 1), 0.0)
    m1 = config.M - config.m0
    missed = (m1 - (s - s0)) / m1 if m1 else np.zeros(len(s))
    return s0, s, fdp, missed


def _block_from_dict(args):
    cfg, start, stop = args
    return _block(SimConfig.from_dict(cfg), start, stop)


def preflight(config: SimConfig):
    """Refuse families that break the conditions the procedure's guarantee needs."""
    fam = config.family()
    if fam.M != config.M:
        raise ConfigError(f"size family has M={fam.M} but the config has M={config.M}")
    if config.procedure in ("holm-sidak", "bh"):
        return fam
    report = validate_family(fam, k_max=1)
    failed = [c for c, ok in (("A1", report.a1_pass), ("A2", report.a2_pass), ("A3", report.a3_pass)) if not ok]
    if failed:
        raise SimRefusal(
            f"size family ({fam.kind}) fails {', '.join(failed)}; worst violation {report.worst_violation}"
            + ("; A4 is not certified either" if config.procedure == "star" else "")
        )
    if config.procedure == "star" and config.m0 < config.M:
        if not check_a4_exact(fam, np.arange(config.m0)):
            raise SimRefusal(f"size family ({fam.kind}) fails A4 for the configured null set (m0={config.m0})")
    return fam


def simulate_arrays(config: SimConfig, workers=1):
    """Per-replicate ``(s0, s, fdp, missed)`` arrays in replicate order."""
    preflight(config)
    R = config.replicates
    bounds = [(a, min(a + _BLOCK, R)) for a in range(0, R, _BLOCK)]
    if workers and workers > 1 and len(bounds) > 1:
        cfg = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_from_dict, [(cfg, a, b) for a, b in bounds]))
    else:
        parts = [_block(config, a, b) for a, b in bounds]
    return tuple(np.concatenate(col) for col in zip(*parts))


def run_experiment(config: SimConfig, workers=1, per_replicate_csv=None):
    """Run all replicates, aggregate the rates and apply the ``q + k SE`` bound checks."""
    s0, s, fdp, missed = simulate_arrays(config, workers)
    rates = rates_from_arrays(s0, fdp, missed)
    k = config.k_sigma
    result = SimResult(
        config=config,
        rates=rates,
        pass_fwer=bool(rates.fwer_hat <= config.q + k * rates.se_fwer),
        pass_fdr=bool(rates.fdr_hat <= config.q + k * rates.se_fdr),
        k_sigma=k,
    )
    if per_replicate_csv is not None:
        write_replicates_csv(per_replicate_csv, s0, s, fdp, missed)
    log.info("%s: fwer=%.5f fdr=%.5f mdr=%.5f", config.procedure, rates.fwer_hat, rates.fdr_hat, rates.mdr_hat)
    return result


def write_replicates_csv(path, s0, s, fdp, missed):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "s0", "s", "fdp", "missed_prop"])
        for i, row in enumerate(zip(s0, s, fdp, missed)):
            w.writerow([i, int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3]))])


def check_bounds(result: SimResult, q, k_sigma):
    """``rate <= q + k_sigma * SE`` for the rate the procedure controls."""
    r = result.rates
    if result.config.procedure in FWER_PROCEDURES:
        return bool(r.fwer_hat <= q + k_sigma * r.se_fwer)
    return bool(r.fdr_hat <= q + k_sigma * r.se_fdr)
