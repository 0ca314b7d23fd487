"""Many-to-one deferred acceptance with pluggable truncation rules.

One proposal engine drives four entry points: plain doctor-proposing DA,
plain hospital-proposing DA, the truncated runs used by the double-cut
harness, and an order-invariance checker.  Proposers are processed from a
FIFO work queue; the matching is invariant to that order, which
order_invariance_check verifies directly.

A truncation rule can stop a proposer three ways, checked before each
proposal in this sequence: utility below her floor (no proposal is made),
the target is the focal agent (that proposal is made, then she stops), or
the utility lands in a forbidden window (no proposal).  Displaced proposers
re-check the floor before every later proposal.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

HOLD = "hold"
REJECT = "reject"
DISPLACE = "displace"
HALT_FLOOR = "halt:floor"
HALT_FOCAL = "halt:focal"
HALT_WINDOW = "halt:window"
HALT_EXHAUSTED = "halt:exhausted"

DOCTORS_PROPOSE = "doctors"
HOSPITALS_PROPOSE = "hospitals"

Event = Tuple[int, int, Optional[int], float, str]  # step, proposer, target, utility, outcome


@dataclass
class EventLog:
    orientation: str
    events: List[Event] = field(default_factory=list)

    def proposals(self) -> List[Event]:
        return [e for e in self.events if e[4] in (HOLD, REJECT, DISPLACE)]

    def proposals_to(self, target: int) -> List[Event]:
        return [e for e in self.proposals() if e[2] == target]

    def lines(self) -> List[str]:
        """Line-delimited records: step,proposer,target,utility,outcome."""
        out = []
        for step, p, t, u, outcome in self.events:
            tgt = "" if t is None else str(t)
            util = "" if math.isnan(u) else f"{u:.9g}"
            out.append(f"{step},{p},{tgt},{util},{outcome}")
        return out


@dataclass
class Matching:
    """doctor_of[d] is d's hospital or None; doctors_of[h] is h's held set."""

    doctor_of: List[Optional[int]]
    doctors_of: List[set]

    def matched_doctors(self) -> set:
        return {d for d, h in enumerate(self.doctor_of) if h is not None}

    def fills(self) -> List[int]:
        return [len(s) for s in self.doctors_of]

    def validate(self, capacities, interview_lists=None) -> None:
        """Raise on broken mutual consistency, capacity, or edge membership."""
        seen = 0
        for h, ds in enumerate(self.doctors_of):
            if len(ds) > capacities[h]:
                raise ValueError(f"hospital {h} over capacity")
            for d in ds:
                if self.doctor_of[d] != h:
                    raise ValueError(f"doctor {d} inconsistent with hospital {h}")
                seen += 1
        if seen != len(self.matched_doctors()):
            raise ValueError("doctor_of and doctors_of disagree")
        if interview_lists is not None:
            for d, h in enumerate(self.doctor_of):
                if h is not None and h not in interview_lists[d]:
                    raise ValueError(f"match ({d},{h}) is not an interview edge")

    def key(self) -> tuple:
        return tuple(-1 if h is None else h for h in self.doctor_of)


FloorSpec = Union[None, float, Dict[int, float], Callable[[int], float]]
WindowSpec = Union[None, Sequence[Tuple[float, float]],
                   Dict[int, Sequence[Tuple[float, float]]]]


@dataclass
class TruncationRule:
    """Stop conditions for proposers.

    proposer_filter: predicate on the proposer's public rating; proposers
        failing it never propose (requires proposer_ratings at run time).
    utility_floor: scalar, per-proposer dict, or callable(proposer) giving
        the minimum proposer utility; checked before each proposal.
    focal_target: receiver id whose proposal, once reached, is the
        proposer's last (made only if it clears the floor).
    forbidden_windows: half-open [lo, hi) utility intervals, global or per
        proposer; hitting one stops the proposer without proposing.
    """

    proposer_filter: Optional[Callable[[float], bool]] = None
    utility_floor: FloorSpec = None
    focal_target: Optional[int] = None
    forbidden_windows: WindowSpec = None

    def floor_for(self, proposer: int) -> float:
        f = self.utility_floor
        if f is None:
            return -math.inf
        if callable(f):
            return f(proposer)
        if isinstance(f, dict):
            return f.get(proposer, -math.inf)
        return float(f)

    def windows_for(self, proposer: int):
        w = self.forbidden_windows
        if w is None:
            return ()
        if isinstance(w, dict):
            return w.get(proposer, ())
        return w

    def is_trivial(self) -> bool:
        return (self.proposer_filter is None and self.utility_floor is None
                and self.focal_target is None and self.forbidden_windows is None)


def build_ranks(pref_lists: List[List[int]]) -> List[Dict[int, int]]:
    """rank[i][j] = position of j in i's list (0 = most preferred)."""
    return [{j: r for r, j in enumerate(lst)} for lst in pref_lists]


def _engine(proposer_prefs: List[List[int]],
            receiver_ranks: List[Dict[int, int]],
            proposer_slots: Sequence[int],
            receiver_caps: Sequence[int],
            rule: Optional[TruncationRule],
            proposer_utils: Optional[List[Dict[int, float]]],
            proposer_ratings,
            order: Optional[Sequence[int]],
            log: Optional[EventLog]):
    n_prop = len(proposer_prefs)
    n_recv = len(receiver_ranks)
    trivial = rule is None or rule.is_trivial()

    if not trivial and rule.utility_floor is not None and proposer_utils is None:
        raise ValueError("a utility floor needs proposer utilities")
    if not trivial and rule.forbidden_windows is not None and proposer_utils is None:
        raise ValueError("forbidden windows need proposer utilities")
    if rule is not None and rule.proposer_filter is not None and proposer_ratings is None:
        raise ValueError("a proposer filter needs proposer ratings")

    allowed = [True] * n_prop
    if rule is not None and rule.proposer_filter is not None:
        allowed = [bool(rule.proposer_filter(float(proposer_ratings[p])))
                   for p in range(n_prop)]

    pointer = [0] * n_prop
    halted = [False] * n_prop
    held_count = [0] * n_prop
    heaps: List[list] = [[] for _ in range(n_recv)]   # (-rank, proposer)
    holder_of: List[List[int]] = [[] for _ in range(n_recv)]  # via heaps only

    start = range(n_prop) if order is None else order
    queue = deque(p for p in start if allowed[p] and proposer_prefs[p])
    in_queue = [False] * n_prop
    for p in queue:
        in_queue[p] = True

    step = 0

    def emit(p, t, u, outcome):
        nonlocal step
        if log is not None:
            log.events.append((step, p, t, u, outcome))
        step += 1

    while queue:
        p = queue.popleft()
        in_queue[p] = False
        if halted[p]:
            continue
        floor = -math.inf if trivial else rule.floor_for(p)
        windows = () if trivial else rule.windows_for(p)
        focal = None if trivial else rule.focal_target
        while held_count[p] < proposer_slots[p] and not halted[p]:
            if pointer[p] >= len(proposer_prefs[p]):
                halted[p] = True
                emit(p, None, math.nan, HALT_EXHAUSTED)
                break
            t = proposer_prefs[p][pointer[p]]
            if proposer_utils is not None:
                u = proposer_utils[p].get(t, -math.inf)
            else:
                u = math.nan
            if u < floor:
                halted[p] = True
                emit(p, t, u, HALT_FLOOR)
                break
            is_focal = focal is not None and t == focal
            if not is_focal and any(lo <= u < hi for lo, hi in windows):
                halted[p] = True
                emit(p, t, u, HALT_WINDOW)
                break
            pointer[p] += 1
            rank = receiver_ranks[t].get(p)
            if rank is None:
                emit(p, t, u, REJECT)
            else:
                heap = heaps[t]
                if len(heap) < receiver_caps[t]:
                    heapq.heappush(heap, (-rank, p))
                    held_count[p] += 1
                    emit(p, t, u, HOLD)
                else:
                    worst_negrank, worst = heap[0]
                    if rank < -worst_negrank:
                        heapq.heapreplace(heap, (-rank, p))
                        held_count[p] += 1
                        held_count[worst] -= 1
                        if not halted[worst] and not in_queue[worst]:
                            queue.append(worst)
                            in_queue[worst] = True
                        emit(p, t, u, DISPLACE)
                    else:
                        emit(p, t, u, REJECT)
            if is_focal:
                halted[p] = True
                emit(p, None, u, HALT_FOCAL)
    return heaps


def _matching_from_heaps(heaps, orientation, n_doctors, n_hospitals) -> Matching:
    doctor_of: List[Optional[int]] = [None] * n_doctors
    doctors_of: List[set] = [set() for _ in range(n_hospitals)]
    if orientation == DOCTORS_PROPOSE:
        for h, heap in enumerate(heaps):
            for _, d in heap:
                doctor_of[d] = h
                doctors_of[h].add(d)
    else:
        for d, heap in enumerate(heaps):
            for _, h in heap:
                doctor_of[d] = h
                doctors_of[h].add(d)
    return Matching(doctor_of, doctors_of)


def doctor_proposing_da(doctor_prefs: List[List[int]],
                        hospital_prefs: List[List[int]],
                        capacities,
                        hospital_ranks: Optional[List[Dict[int, int]]] = None,
                        order: Optional[Sequence[int]] = None) -> Matching:
    """Doctor-optimal stable matching over the given preference lists."""
    if hospital_ranks is None:
        hospital_ranks = build_ranks(hospital_prefs)
    heaps = _engine(doctor_prefs, hospital_ranks,
                    [1] * len(doctor_prefs), list(capacities),
                    None, None, None, order, None)
    return _matching_from_heaps(heaps, DOCTORS_PROPOSE,
                                len(doctor_prefs), len(hospital_prefs))


def hospital_proposing_da(doctor_prefs: List[List[int]],
                          hospital_prefs: List[List[int]],
                          capacities,
                          doctor_ranks: Optional[List[Dict[int, int]]] = None,
                          order: Optional[Sequence[int]] = None) -> Matching:
    """Hospital-optimal (doctor-pessimal) stable matching."""
    if doctor_ranks is None:
        doctor_ranks = build_ranks(doctor_prefs)
    heaps = _engine(hospital_prefs, doctor_ranks,
                    list(capacities), [1] * len(doctor_prefs),
                    None, None, None, order, None)
    return _matching_from_heaps(heaps, HOSPITALS_PROPOSE,
                                len(doctor_prefs), len(hospital_prefs))


def truncated_da(doctor_prefs: List[List[int]],
                 hospital_prefs: List[List[int]],
                 capacities,
                 rule: TruncationRule,
                 orientation: str = DOCTORS_PROPOSE,
                 doctor_utils: Optional[List[Dict[int, float]]] = None,
                 hospital_utils: Optional[List[Dict[int, float]]] = None,
                 proposer_ratings=None,
                 order: Optional[Sequence[int]] = None) -> Tuple[Matching, EventLog]:
    """Truncated DA run; returns the partial matching and its event log.

    A degenerate rule reproduces the untruncated DA.  Utilities for the
    proposing side must be supplied whenever the rule involves a floor or
    forbidden windows (floors are expressed in proposer utility).
    """
    log = EventLog(orientation)
    if orientation == DOCTORS_PROPOSE:
        heaps = _engine(doctor_prefs, build_ranks(hospital_prefs),
                        [1] * len(doctor_prefs), list(capacities),
                        rule, doctor_utils, proposer_ratings, order, log)
    elif orientation == HOSPITALS_PROPOSE:
        heaps = _engine(hospital_prefs, build_ranks(doctor_prefs),
                        list(capacities), [1] * len(doctor_prefs),
                        rule, hospital_utils, proposer_ratings, order, log)
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    return (_matching_from_heaps(heaps, orientation,
                                 len(doctor_prefs), len(hospital_prefs)), log)


def order_invariance_check(doctor_prefs, hospital_prefs, capacities,
                           permutation: Sequence[int],
                           orientation: str = DOCTORS_PROPOSE) -> bool:
    """True iff processing proposers in `permutation` order changes nothing."""
    run = doctor_proposing_da if orientation == DOCTORS_PROPOSE else hospital_proposing_da
    canonical = run(doctor_prefs, hospital_prefs, capacities)
    permuted = run(doctor_prefs, hospital_prefs, capacities, order=permutation)
    return canonical.key() == permuted.key()
