"""Interview selection and post-interview preference construction.

Doctors restrict attention to their cone, the hospitals whose public rating
falls within a*alpha of their own, and interview the k of those with the
highest private values.  Interview values exist only for pairs that
actually interview; both sides then rank their interviewed partners by
total utility.  The request-interview variant has doctors over-request and
hospitals grant a budgeted subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .market import MarketInstance, SCHOOL_CHOICE, REQUEST_INTERVIEW


@dataclass
class Cone:
    """One doctor's candidate band [low, high) over hospital ratings."""
    doctor_id: int
    low: float
    high: float
    member_hospitals: np.ndarray   # hospital ids in the band, ascending id


def compute_cone(instance: MarketInstance, doctor_id: int) -> Cone:
    """Clamped cone for one doctor; empty member list if nothing is in band."""
    r = instance.doctor_ratings[doctor_id]
    lo_bound, hi_bound = instance.hospital_range
    low = max(lo_bound, r - instance.half_width)
    high = min(hi_bound, r + instance.half_width)
    members = instance.hospitals_in_band(low, high)
    return Cone(doctor_id, low, high, members)


@dataclass
class InterviewAssignment:
    """Realized interview edges with cached utilities on both sides.

    doctor_lists[d] and hospital_lists[h] are each other's exact inverse
    (edge symmetry).  Utilities use the weights the assignment was built
    with; see weighted_utilities to rescale them.
    """

    instance: MarketInstance
    nu_d: float
    nu_h: float
    doctor_lists: List[List[int]]
    doctor_utils: List[Dict[int, float]]        # U_d(h) for interviewed h
    hospital_lists: List[List[int]] = field(default_factory=list)
    hospital_utils: List[Dict[int, float]] = field(default_factory=list)

    @property
    def setting(self) -> str:
        return self.instance.config.setting

    def n_doctors(self) -> int:
        return len(self.doctor_lists)

    def n_hospitals(self) -> int:
        return len(self.hospital_lists)

    def edges(self):
        for d, hs in enumerate(self.doctor_lists):
            for h in hs:
                yield d, h


def _invert(n_hospitals: int, doctor_lists: List[List[int]]):
    inv: List[List[int]] = [[] for _ in range(n_hospitals)]
    for d, hs in enumerate(doctor_lists):
        for h in hs:
            inv[h].append(d)
    return inv


def _materialize(instance, doctor_lists, nu_d, nu_h) -> InterviewAssignment:
    # interview values are drawn only for the edges in doctor_lists;
    # one batched draw per stream covers the whole market
    n_doc = instance.config.n_doctors
    n_hosp = instance.config.n_hospitals
    counts = np.fromiter((len(hs) for hs in doctor_lists), dtype=np.int64,
                         count=n_doc)
    d_flat = np.repeat(np.arange(n_doc), counts)
    h_flat = np.fromiter((h for hs in doctor_lists for h in hs),
                         dtype=np.int64, count=int(counts.sum()))
    u_doc = (instance.hospital_ratings[h_flat]
             + instance.private_dh(d_flat, h_flat)
             + nu_d * instance.interview_dh(d_flat, h_flat))

    doctor_utils: List[Dict[int, float]] = []
    pos = 0
    for d in range(n_doc):
        c = int(counts[d])
        doctor_utils.append(dict(zip(doctor_lists[d],
                                     u_doc[pos:pos + c].tolist())))
        pos += c

    hospital_lists = _invert(n_hosp, doctor_lists)
    school = instance.config.setting == SCHOOL_CHOICE
    h_counts = np.fromiter((len(ds) for ds in hospital_lists), dtype=np.int64,
                           count=n_hosp)
    hh_flat = np.repeat(np.arange(n_hosp), h_counts)
    dd_flat = np.fromiter((d for ds in hospital_lists for d in ds),
                          dtype=np.int64, count=int(h_counts.sum()))
    u_hosp = instance.doctor_ratings[dd_flat]
    if not school:
        u_hosp = u_hosp + nu_h * instance.interview_hd(hh_flat, dd_flat)

    hospital_utils: List[Dict[int, float]] = []
    pos = 0
    for h in range(n_hosp):
        c = int(h_counts[h])
        hospital_utils.append(dict(zip(hospital_lists[h],
                                       u_hosp[pos:pos + c].tolist())))
        pos += c

    return InterviewAssignment(instance, nu_d, nu_h, doctor_lists,
                               doctor_utils, hospital_lists, hospital_utils)


def _top_by_value(ids: np.ndarray, values: np.ndarray, count: int) -> List[int]:
    # highest values win; ties go to the lowest id
    if len(ids) <= count:
        return sorted(int(i) for i in ids)
    order = np.lexsort((ids, -values))
    return sorted(int(ids[i]) for i in order[:count])


def select_interviews(instance: MarketInstance) -> InterviewAssignment:
    """Each doctor interviews her top-k in-cone hospitals by private value.

    A doctor whose cone holds fewer than k hospitals interviews all of
    them; an empty cone leaves her with no interviews (strategy-unmatched).
    """
    cfg = instance.config
    n = cfg.n_doctors
    lo_bound, hi_bound = instance.hospital_range
    lows = np.maximum(lo_bound, instance.doctor_ratings - instance.half_width)
    highs = np.minimum(hi_bound, instance.doctor_ratings + instance.half_width)
    i0 = np.searchsorted(instance.hospital_sorted, lows, side="left")
    i1 = np.searchsorted(instance.hospital_sorted, highs, side="left")
    counts = i1 - i0
    starts = np.concatenate(([0], np.cumsum(counts)))
    within = np.arange(starts[-1]) - np.repeat(starts[:-1], counts)
    members_flat = instance.hospital_order[np.repeat(i0, counts) + within]
    d_flat = np.repeat(np.arange(n), counts)
    values = instance.private_dh(d_flat, members_flat)
    # within each doctor block: value descending, hospital id ascending
    order = np.lexsort((members_flat, -values, d_flat))
    keep = within < cfg.k
    sel_counts = np.minimum(counts, cfg.k)
    sel_d = np.repeat(np.arange(n), sel_counts)
    sel_h = members_flat[order][keep]
    resort = np.argsort(sel_d * np.int64(cfg.n_hospitals) + sel_h,
                        kind="stable")       # ascending id within each doctor
    lists = [chunk.tolist()
             for chunk in np.split(sel_h[resort], np.cumsum(sel_counts)[:-1])]
    return _materialize(instance, lists, cfg.nu_d, cfg.nu_h)


def request_interview_protocol(instance: MarketInstance) -> InterviewAssignment:
    """Request/grant variant: k^2 requests, capacity*k^1.5 grants.

    Doctors request their in-cone top k^2 hospitals by private value.  Each
    hospital grants up to floor(capacity * k^1.5) (at least 1) of the
    requests it received, keeping the doctors with its highest private
    values v(h,d).  Preference-list truncation to the capacity*k best
    interviews happens in build_preferences.
    """
    cfg = instance.config
    if cfg.setting != REQUEST_INTERVIEW:
        raise ValueError("request_interview_protocol needs setting=RequestInterview")
    k = cfg.k
    requests: List[List[int]] = []
    for d in range(cfg.n_doctors):
        members = compute_cone(instance, d).member_hospitals
        if members.size == 0:
            requests.append([])
            continue
        requests.append(_top_by_value(members, instance.private_dh(d, members), k * k))

    received = _invert(cfg.n_hospitals, requests)
    caps = instance.capacities
    lists: List[List[int]] = [[] for _ in range(cfg.n_doctors)]
    for h in range(cfg.n_hospitals):
        ds = received[h]
        if not ds:
            continue
        budget = max(1, int(caps[h] * k ** 1.5))
        arr = np.asarray(ds, dtype=np.int64)
        granted = _top_by_value(arr, instance.private_hd(h, arr), budget)
        for d in granted:
            lists[d].append(h)
    for d in range(cfg.n_doctors):
        lists[d].sort()
    return _materialize(instance, lists, cfg.nu_d, cfg.nu_h)


def build_assignment(instance: MarketInstance) -> InterviewAssignment:
    """Run whichever interview protocol the instance's setting calls for."""
    if instance.config.setting == REQUEST_INTERVIEW:
        return request_interview_protocol(instance)
    return select_interviews(instance)


def _ranked(ids: List[int], utils: Dict[int, float]) -> List[int]:
    # strict descending utility, ties broken toward the lower id
    return sorted(ids, key=lambda i: (-utils[i], i))


def build_preferences(assignment: InterviewAssignment):
    """Ranked lists for both sides: (doctor_prefs, hospital_prefs).

    Only interviewed partners appear.  In the RequestInterview setting each
    hospital keeps just its capacity*k highest-utility doctors.
    """
    doctor_prefs = [_ranked(hs, assignment.doctor_utils[d])
                    for d, hs in enumerate(assignment.doctor_lists)]
    hospital_prefs = [_ranked(ds, assignment.hospital_utils[h])
                      for h, ds in enumerate(assignment.hospital_lists)]
    if assignment.setting == REQUEST_INTERVIEW:
        caps = assignment.instance.capacities
        k = assignment.instance.config.k
        hospital_prefs = [p[: int(caps[h]) * k] for h, p in enumerate(hospital_prefs)]
    return doctor_prefs, hospital_prefs


def weighted_utilities(assignment: InterviewAssignment,
                       nu_d: float, nu_h: float) -> InterviewAssignment:
    """Same interview edges, utilities recomputed with new weights.

    nu_d = nu_h = 1 reproduces the base model exactly; nu = 0 removes the
    interview values from that side's utilities.
    """
    if not (0.0 <= nu_d <= 1.0 and 0.0 <= nu_h <= 1.0):
        raise ValueError("nu weights must lie in [0, 1]")
    return _materialize(assignment.instance, assignment.doctor_lists, nu_d, nu_h)
