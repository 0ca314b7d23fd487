"""Per-run statistics and the grouped aggregates behind the match-rate
and loss figures.

Losses are shortfalls from the ideal benchmarks r(d)+2 for a doctor and
r(h)+1 for a hospital.  Agents are ranked by public rating (descending,
per instance) and grouped in blocks of ten; whisker values are 10th/90th
nearest-rank percentiles of the per-run group statistic across runs.
Unmatched agents are excluded from loss series by default and reported in
the separate match-rate series, mirroring how the figures are drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .analysis import find_blocking_pairs
from .da import Matching
from .market import MarketConfig, MarketInstance, SCHOOL_CHOICE
from .strategy import InterviewAssignment

CSV_HEADER = "group_lo,group_hi,metric,mean,p10,p90,runs,setting,n,k,kappa,cone,seed"

DOCTOR_MATCH_RATE = "doctor_match_rate"
DOCTOR_LOSS = "doctor_loss"
HOSPITAL_FULL_RATE = "hospital_full_rate"
HOSPITAL_FILL_FRACTION = "hospital_fill_fraction"
HOSPITAL_LOSS = "hospital_loss"
ALL_METRICS = (DOCTOR_MATCH_RATE, DOCTOR_LOSS, HOSPITAL_FULL_RATE,
               HOSPITAL_FILL_FRACTION, HOSPITAL_LOSS)


@dataclass
class RunStats:
    """Per-agent outcome arrays for one (instance, matching) pair."""

    config: MarketConfig
    run_index: int
    half_width: float
    doctor_rating: np.ndarray
    doctor_matched: np.ndarray
    doctor_utility: np.ndarray        # nan when unmatched
    doctor_loss: np.ndarray           # unmatched carry the full benchmark
    doctor_non_bottommost: np.ndarray
    hospital_rating: np.ndarray
    hospital_fill: np.ndarray
    hospital_fully_matched: np.ndarray
    hospital_loss: np.ndarray         # nan when empty
    hospital_non_bottommost: np.ndarray


def run_stats(instance: MarketInstance,
              assignment: InterviewAssignment,
              matching: Matching,
              prefs: Optional[tuple] = None,
              check_stability: bool = True) -> RunStats:
    """Populate RunStats; refuses a matching with blocking pairs."""
    if check_stability:
        blocking = find_blocking_pairs(assignment, matching, prefs=prefs)
        if blocking:
            raise ValueError(f"matching is unstable: {len(blocking)} blocking pairs, "
                             f"first {blocking[0]}")

    cfg = instance.config
    n_doc, n_hosp = cfg.n_doctors, cfg.n_hospitals
    caps = instance.capacities
    half = instance.half_width

    d_rating = instance.doctor_ratings
    d_matched = np.zeros(n_doc, dtype=bool)
    d_utility = np.full(n_doc, np.nan)
    for d, h in enumerate(matching.doctor_of):
        if h is not None:
            d_matched[d] = True
            d_utility[d] = assignment.doctor_utils[d][h]
            # structural under the cone strategy, asserted anyway
            if abs(instance.hospital_ratings[h] - d_rating[d]) >= half + 1e-12:
                raise AssertionError(f"match ({d},{h}) lies outside the cone")
    benchmark = d_rating + 2.0
    d_loss = np.where(d_matched, benchmark - d_utility, benchmark)

    h_rating = instance.hospital_ratings
    h_fill = np.array([len(s) for s in matching.doctors_of], dtype=np.int64)
    if int(h_fill.sum()) != int(d_matched.sum()):
        raise AssertionError("fill counts disagree with matched doctors")
    h_full = h_fill >= caps
    h_loss = np.full(n_hosp, np.nan)
    for h, ds in enumerate(matching.doctors_of):
        if ds:
            seat_u = [assignment.hospital_utils[h][d] for d in ds]
            h_loss[h] = h_rating[h] + 1.0 - float(np.mean(seat_u))

    return RunStats(
        config=cfg, run_index=instance.run_index, half_width=half,
        doctor_rating=d_rating, doctor_matched=d_matched,
        doctor_utility=d_utility, doctor_loss=d_loss,
        doctor_non_bottommost=d_rating >= instance.doctor_range[0] + half,
        hospital_rating=h_rating, hospital_fill=h_fill,
        hospital_fully_matched=h_full, hospital_loss=h_loss,
        hospital_non_bottommost=h_rating >= instance.hospital_range[0] + half)


@dataclass
class GroupedSeries:
    """One metric grouped by rank: rows of (lo, hi, mean, p10, p90)."""

    metric: str
    group_size: int
    group_lo: np.ndarray     # 1-based rank bounds, inclusive
    group_hi: np.ndarray
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray
    runs: int


def nearest_rank(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    v = np.sort(values)
    if v.size == 0:
        return math.nan
    idx = max(1, math.ceil(pct / 100.0 * v.size)) - 1
    return float(v[idx])


def _group_values(values: np.ndarray, order: np.ndarray, group_size: int,
                  reducer) -> np.ndarray:
    n = order.size
    n_groups = (n + group_size - 1) // group_size
    out = np.full(n_groups, np.nan)
    for g in range(n_groups):
        chunk = values[order[g * group_size:(g + 1) * group_size]]
        out[g] = reducer(chunk)
    return out


def _mean_finite(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else math.nan


def aggregate(stats: Sequence[RunStats], group_size: int = 10,
              include_unmatched_in_loss: bool = False) -> Dict[str, GroupedSeries]:
    """Cross-run grouped series for every metric.

    All runs must share a config.  Ranks are recomputed per run from that
    run's realized ratings; percentiles are nearest-rank across runs.
    """
    if not stats:
        raise ValueError("no runs to aggregate")
    cfg = stats[0].config
    if any(s.config != cfg for s in stats):
        raise ValueError("aggregate needs runs from a single config")
    if group_size < 1:
        raise ValueError("group_size must be positive")

    per_metric_rows: Dict[str, List[np.ndarray]] = {m: [] for m in ALL_METRICS}
    caps = cfg.capacities().astype(float)
    for s in stats:
        d_order = np.argsort(-s.doctor_rating, kind="stable")
        h_order = np.argsort(-s.hospital_rating, kind="stable")
        d_loss = s.doctor_loss if include_unmatched_in_loss else \
            np.where(s.doctor_matched, s.doctor_loss, np.nan)
        rows = {
            DOCTOR_MATCH_RATE: _group_values(
                s.doctor_matched.astype(float), d_order, group_size, _mean_finite),
            DOCTOR_LOSS: _group_values(d_loss, d_order, group_size, _mean_finite),
            HOSPITAL_FULL_RATE: _group_values(
                s.hospital_fully_matched.astype(float), h_order, group_size, _mean_finite),
            HOSPITAL_FILL_FRACTION: _group_values(
                s.hospital_fill / caps, h_order, group_size, _mean_finite),
            HOSPITAL_LOSS: _group_values(s.hospital_loss, h_order, group_size, _mean_finite),
        }
        for m, r in rows.items():
            per_metric_rows[m].append(r)

    out: Dict[str, GroupedSeries] = {}
    for m, rows in per_metric_rows.items():
        mat = np.vstack(rows)                       # runs x groups
        n_groups = mat.shape[1]
        mean = np.array([_mean_finite(mat[:, g]) for g in range(n_groups)])
        p10 = np.empty(n_groups)
        p90 = np.empty(n_groups)
        for g in range(n_groups):
            col = mat[:, g]
            col = col[np.isfinite(col)]
            p10[g] = nearest_rank(col, 10.0)
            p90[g] = nearest_rank(col, 90.0)
        lo = np.arange(n_groups, dtype=np.int64) * group_size + 1
        hi = np.minimum(lo + group_size - 1,
                        cfg.n_doctors if m.startswith("doctor") else cfg.n_hospitals)
        out[m] = GroupedSeries(m, group_size, lo, hi, mean, p10, p90, len(stats))
    return out


def series_rows(series: GroupedSeries, cfg: MarketConfig,
                half_width: float) -> List[str]:
    """CSV rows in the metrics schema for one grouped series.

    The cone column carries the effective half-width a*alpha, the same
    number the experiment figures are labeled with.
    """
    rows = []
    cone = half_width
    for i in range(series.mean.size):
        rows.append(
            f"{series.group_lo[i]},{series.group_hi[i]},{series.metric},"
            f"{series.mean[i]:.9g},{series.p10[i]:.9g},{series.p90[i]:.9g},"
            f"{series.runs},{cfg.setting},{cfg.n_doctors},{cfg.k},"
            f"{cfg.kappa},{cone:.9g},{cfg.seed}")
    return rows


def write_metrics_csv(path, series_by_metric: Mapping[str, GroupedSeries],
                      cfg: MarketConfig, half_width: float) -> None:
    lines = [CSV_HEADER]
    for m in ALL_METRICS:
        if m in series_by_metric:
            lines.extend(series_rows(series_by_metric[m], cfg, half_width))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def doctor_non_match_fraction(stats: Sequence[RunStats],
                              non_bottommost_only: bool = True) -> float:
    """Unmatched fraction pooled over runs (non-bottommost doctors by default)."""
    bad = 0
    total = 0
    for s in stats:
        mask = s.doctor_non_bottommost if non_bottommost_only else \
            np.ones_like(s.doctor_matched, dtype=bool)
        total += int(mask.sum())
        bad += int((~s.doctor_matched[mask]).sum())
    return bad / total if total else math.nan


def hospital_non_full_fraction(stats: Sequence[RunStats],
                               non_bottommost_only: bool = True) -> float:
    bad = 0
    total = 0
    for s in stats:
        mask = s.hospital_non_bottommost if non_bottommost_only else \
            np.ones_like(s.hospital_fully_matched, dtype=bool)
        total += int(mask.sum())
        bad += int((~s.hospital_fully_matched[mask]).sum())
    return bad / total if total else math.nan


def theorem_non_match_bounds(setting: str, k: int, a: float, kappa: int) -> tuple:
    """Closed-form asymptotic (doctor_bound, hospital_bound) per setting."""
    c = 4.0 * a + 1.0
    if setting == SCHOOL_CHOICE:
        return math.exp(-4.0 * k / c), math.exp(-1.5 * kappa * math.log(k))
    root = math.sqrt(k * math.log(k) / c)
    return math.exp(-4.0 * root), math.exp(-0.375 * kappa * root)


def bound_check(stats_by_k: Mapping[int, Sequence[RunStats]],
                slack: float = 3.0) -> dict:
    """Empirical non-match rates against the theorem bounds.

    For each k: the pooled non-bottommost doctor non-match and hospital
    non-full fractions, the closed-form theorem bounds, and a pass flag at
    `slack` times the bound.  With several k values the report also checks
    that the doctor fraction is monotone non-increasing in k.
    """
    report: dict = {"per_k": {}, "slack": slack}
    fracs = {}
    for k in sorted(stats_by_k):
        stats = stats_by_k[k]
        cfg = stats[0].config
        d_frac = doctor_non_match_fraction(stats)
        h_frac = hospital_non_full_fraction(stats)
        d_bound, h_bound = theorem_non_match_bounds(cfg.setting, k, cfg.a, cfg.kappa)
        fracs[k] = d_frac
        report["per_k"][k] = {
            "doctor_non_match": d_frac,
            "doctor_bound": d_bound,
            "doctor_within_slack": bool(d_frac <= slack * d_bound),
            "hospital_non_full": h_frac,
            "hospital_bound": h_bound,
            "hospital_within_slack": bool(h_frac <= slack * h_bound),
        }
    ks = sorted(fracs)
    report["monotone_in_k"] = all(fracs[ks[i + 1]] <= fracs[ks[i]]
                                  for i in range(len(ks) - 1)) if len(ks) > 1 else True
    return report
