"""Scenario configuration and replayable market instance generation.

A market has n_doctors doctors and n_hospitals hospitals (capacity kappa
each, or an explicit per-hospital vector).  Public ratings and all pairwise
values are uniform draws addressed through the counter-based generator in
:mod:`conematch.rng`, so an instance is a pure function of
(config, run_index) and any single value can be replayed in isolation.

Utilities follow the interview model:

* doctor d for hospital h:   r(h) + v(d,h) + nu_d * iota(d,h)
* hospital h for doctor d:   r(d) + nu_h * iota(h,d)
* school-choice variant:     r(d) only (schools share one ranking)

Each doctor interviews at hospitals drawn from her cone, the public-rating
band [r(d) - a*alpha, r(d) + a*alpha).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Optional, Union

import numpy as np

from . import rng

RESIDENCY = "Residency"
SCHOOL_CHOICE = "SchoolChoice"
REQUEST_INTERVIEW = "RequestInterview"
SETTINGS = (RESIDENCY, SCHOOL_CHOICE, REQUEST_INTERVIEW)

# leading coefficient in alpha = (factor*(4a+1)*ln k / k)^power;
# configurable because a doubled variant is also in circulation
DEFAULT_ALPHA_FACTOR = 2.0

_RATING_RETRIES = 16


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class MarketConfig:
    """All parameters of one simulated scenario.

    `capacity` is either one int (uniform kappa) or a per-hospital tuple.
    `alpha` overrides the derived cone scale; `cone_override` instead fixes
    the absolute cone half-width a*alpha in rating units (the bundled
    experiment presets use cone_override=0.3).
    """

    n_doctors: int
    n_hospitals: int
    capacity: Union[int, tuple] = 1
    k: int = 5
    a: float = 5.0
    alpha: Optional[float] = None
    cone_override: Optional[float] = None
    setting: str = RESIDENCY
    nu_d: float = 1.0
    nu_h: float = 1.0
    rating_shift: float = 0.0
    seed: int = 0
    runs: int = 1

    def __post_init__(self):
        if self.n_doctors < 1 or self.n_hospitals < 1:
            raise ConfigError("need at least one agent on each side")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.k > self.n_hospitals:
            raise ConfigError(
                f"k={self.k} exceeds the number of hospitals ({self.n_hospitals})")
        caps = self.capacities()
        if np.any(caps < 1):
            raise ConfigError("every capacity must be >= 1")
        if isinstance(self.capacity, (list, np.ndarray)):
            object.__setattr__(self, "capacity", tuple(int(c) for c in self.capacity))
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}")
        if not (0.0 <= self.nu_d <= 1.0 and 0.0 <= self.nu_h <= 1.0):
            raise ConfigError("nu_d and nu_h must lie in [0, 1]")
        if self.a <= 0:
            raise ConfigError("a must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.cone_override is not None and self.cone_override <= 0:
            raise ConfigError("cone_override must be positive")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def capacities(self) -> np.ndarray:
        if isinstance(self.capacity, (int, np.integer)):
            return np.full(self.n_hospitals, int(self.capacity), dtype=np.int64)
        caps = np.asarray(self.capacity, dtype=np.int64)
        if caps.shape != (self.n_hospitals,):
            raise ConfigError("capacity vector length must equal n_hospitals")
        return caps

    @property
    def kappa(self) -> int:
        """Uniform capacity if there is one, else the mean (for reporting)."""
        caps = self.capacities()
        return int(caps[0]) if np.all(caps == caps[0]) else int(round(caps.mean()))

    def total_places(self) -> int:
        return int(self.capacities().sum())

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MarketConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if isinstance(kwargs.get("capacity"), list):
            kwargs["capacity"] = tuple(kwargs["capacity"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "MarketConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def derive_alpha(config: MarketConfig, factor: float = DEFAULT_ALPHA_FACTOR) -> float:
    """Cone scale alpha from the recommended-strategy formulas.

    Residency / RequestInterview:  sqrt(factor*(4a+1)*ln k / k)
    SchoolChoice:                  factor*(4a+1)*ln k / k

    An explicit `alpha` or `cone_override` on the config bypasses the
    derivation.  Requires k >= 2 (ln 1 = 0 leaves the formula degenerate).
    """
    if config.alpha is not None:
        return config.alpha
    if config.cone_override is not None:
        return config.cone_override / config.a
    if config.k < 2:
        raise ConfigError("alpha formula needs k >= 2; pass alpha or cone_override")
    base = factor * (4.0 * config.a + 1.0) * math.log(config.k) / config.k
    if config.setting == SCHOOL_CHOICE:
        return base
    return math.sqrt(base)


def shift_ranges(config: MarketConfig) -> tuple:
    """Public rating ranges ((d_lo, d_hi), (h_lo, h_hi)) for the two sides.

    With equal counts of doctors and hospital places both sides draw from
    [0, 1).  With m surplus agents on one side, the long side's range grows
    to width 1 + m/n and the short side's unit-width range is nested at its
    top, so the bottommost long-side agents sit below every short-side cone.
    A nonzero rating_shift overrides the automatic m/n offset.
    """
    places = config.total_places()
    n_doc = config.n_doctors
    if n_doc == places and config.rating_shift == 0.0:
        return (0.0, 1.0), (0.0, 1.0)
    if n_doc >= places:
        off = config.rating_shift or (n_doc - places) / places
        return (0.0, 1.0 + off), (off, 1.0 + off)
    off = config.rating_shift or (places - n_doc) / n_doc
    return (off, 1.0 + off), (0.0, 1.0 + off)


def _draw_ratings(state, count, lo, hi, what):
    # redraws with a bumped salt until all values are distinct
    for salt in range(_RATING_RETRIES):
        r = rng.uniform(state, np.arange(count), salt)
        if np.unique(r).size == count:
            return lo + (hi - lo) * r
    raise RuntimeError(f"could not draw distinct {what} ratings "
                       f"after {_RATING_RETRIES} attempts")


class MarketInstance:
    """One realized market: ratings plus a pure value oracle.

    Immutable after construction; safe to share across workers.  Pairwise
    values are not stored, they are recomputed on demand from the key
    (seed, run, kind, doctor, hospital), so two processes always agree.
    """

    def __init__(self, config: MarketConfig, run_index: int):
        self.config = config
        self.run_index = run_index
        self.capacities = config.capacities()
        self.doctor_range, self.hospital_range = shift_ranges(config)

        seed, run = config.seed, run_index
        self.doctor_ratings = _draw_ratings(
            rng.key_state(seed, run, rng.KIND_DOCTOR_RATING),
            config.n_doctors, *self.doctor_range, "doctor")
        self.hospital_ratings = _draw_ratings(
            rng.key_state(seed, run, rng.KIND_HOSPITAL_RATING),
            config.n_hospitals, *self.hospital_range, "hospital")

        # sorted view for O(log) cone range queries
        self.hospital_order = np.argsort(self.hospital_ratings, kind="stable")
        self.hospital_sorted = self.hospital_ratings[self.hospital_order]
        self.doctor_order = np.argsort(self.doctor_ratings, kind="stable")
        self.doctor_sorted = self.doctor_ratings[self.doctor_order]

        if config.cone_override is not None:
            half = config.cone_override
        else:
            half = config.a * derive_alpha(config)
        range_width = self.hospital_range[1] - self.hospital_range[0]
        self.cone_clamped = half > range_width
        self.half_width = min(half, range_width)   # effective a*alpha
        self.alpha_eff = self.half_width / config.a

        self._st_private_dh = rng.key_state(seed, run, rng.KIND_PRIVATE_DH)
        self._st_interview_dh = rng.key_state(seed, run, rng.KIND_INTERVIEW_DH)
        self._st_interview_hd = rng.key_state(seed, run, rng.KIND_INTERVIEW_HD)
        self._st_private_hd = rng.key_state(seed, run, rng.KIND_PRIVATE_HD)

    # -- value oracle -------------------------------------------------

    def private_dh(self, doctor, hospital):
        """v(d,h); scalar or broadcast over arrays."""
        return rng.uniform(self._st_private_dh, doctor, hospital)

    def interview_dh(self, doctor, hospital, salt: int = 0):
        """iota(d,h).  A nonzero salt addresses replicate redraws."""
        st = self._st_interview_dh if not salt else rng.key_state(
            self.config.seed, self.run_index, rng.KIND_INTERVIEW_DH, salt)
        return rng.uniform(st, doctor, hospital)

    def interview_hd(self, hospital, doctor, salt: int = 0):
        """iota(h,d)."""
        st = self._st_interview_hd if not salt else rng.key_state(
            self.config.seed, self.run_index, rng.KIND_INTERVIEW_HD, salt)
        return rng.uniform(st, hospital, doctor)

    def private_hd(self, hospital, doctor):
        """v(h,d), used by hospitals to grant interview requests."""
        return rng.uniform(self._st_private_hd, hospital, doctor)

    # -- geometry helpers ----------------------------------------------

    def hospitals_in_band(self, lo: float, hi: float) -> np.ndarray:
        """Hospital ids with rating in [lo, hi), ascending id order."""
        i = np.searchsorted(self.hospital_sorted, lo, side="left")
        j = np.searchsorted(self.hospital_sorted, hi, side="left")
        ids = self.hospital_order[i:j]
        return np.sort(ids)

    def doctors_in_band(self, lo: float, hi: float) -> np.ndarray:
        i = np.searchsorted(self.doctor_sorted, lo, side="left")
        j = np.searchsorted(self.doctor_sorted, hi, side="left")
        return np.sort(self.doctor_order[i:j])

    def metadata(self) -> dict:
        return {
            "run_index": self.run_index,
            "alpha_eff": self.alpha_eff,
            "half_width": self.half_width,
            "cone_clamped": self.cone_clamped,
        }


def generate(config: MarketConfig, run_index: int) -> MarketInstance:
    """Build the deterministic instance for (config, run_index)."""
    return MarketInstance(config, run_index)


def make_config(n: int, kappa: int = 1, **kwargs) -> MarketConfig:
    """Convenience: n doctors and n/kappa hospitals (at least one)."""
    n_hospitals = max(1, round(n / kappa))
    return MarketConfig(n_doctors=n, n_hospitals=n_hospitals,
                        capacity=kappa, **kwargs)
