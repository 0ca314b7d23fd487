"""Ground-truth verifiers for matchings produced by the DA engine.

Everything here is an oracle: exhaustive blocking-pair search over the
interview edges, brute-force enumeration of the whole stable set on small
instances, and the uniqueness / rural-hospital cross-checks between the
two DA orientations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Set

from .da import (Matching, build_ranks, doctor_proposing_da,
                 hospital_proposing_da)
from .strategy import InterviewAssignment, build_preferences

MAX_ORACLE_DOCTORS = 8
MAX_ORACLE_HOSPITALS = 5
MAX_ORACLE_PLACES = 8


@dataclass
class BlockingPair:
    doctor_id: int
    hospital_id: int
    doctor_gain: float
    hospital_side_witness: str   # "under capacity" or "displaces <id>"


def find_blocking_pairs(assignment: InterviewAssignment,
                        matching: Matching,
                        capacities=None,
                        prefs: Optional[tuple] = None,
                        unmatched_utility: float = -math.inf) -> List[BlockingPair]:
    """Exhaustive blocking-pair scan; an empty result certifies stability.

    A pair blocks when both sides rank each other, the doctor strictly
    prefers the hospital to her match (an unmatched doctor values her
    position at `unmatched_utility`), and the hospital is under capacity
    or ranks her above its worst held doctor.
    """
    if capacities is None:
        capacities = assignment.instance.capacities
    if prefs is None:
        prefs = build_preferences(assignment)
    doctor_prefs, hospital_prefs = prefs
    matching.validate(capacities, [set(lst) for lst in assignment.doctor_lists])

    hospital_ranks = build_ranks(hospital_prefs)
    out: List[BlockingPair] = []
    for d, ranked in enumerate(doctor_prefs):
        cur = matching.doctor_of[d]
        cur_u = assignment.doctor_utils[d][cur] if cur is not None else unmatched_utility
        for h in ranked:
            if h == cur:
                continue
            u = assignment.doctor_utils[d][h]
            if u <= cur_u:
                continue
            rank_d = hospital_ranks[h].get(d)
            if rank_d is None:
                continue
            held = matching.doctors_of[h]
            if len(held) < capacities[h]:
                out.append(BlockingPair(d, h, u - cur_u, "under capacity"))
                continue
            worst = max(held, key=lambda x: hospital_ranks[h][x])
            if rank_d < hospital_ranks[h][worst]:
                out.append(BlockingPair(d, h, u - cur_u, f"displaces {worst}"))
    return out


def enumerate_stable(assignment: InterviewAssignment,
                     capacities=None,
                     prefs: Optional[tuple] = None) -> Set[tuple]:
    """All stable matchings over the interview edges, as doctor_of keys.

    Guarded brute force: refuses anything beyond 8 doctors, 5 hospitals or
    8 total places.  Walks doctors in id order trying every hospital with
    spare capacity (and staying unmatched), then filters by blocking-pair
    freeness.
    """
    if capacities is None:
        capacities = assignment.instance.capacities
    if prefs is None:
        prefs = build_preferences(assignment)
    doctor_prefs, hospital_prefs = prefs
    n_doc, n_hosp = len(doctor_prefs), len(hospital_prefs)
    if (n_doc > MAX_ORACLE_DOCTORS or n_hosp > MAX_ORACLE_HOSPITALS
            or sum(capacities) > MAX_ORACLE_PLACES):
        raise ValueError(
            f"oracle limited to {MAX_ORACLE_DOCTORS} doctors, "
            f"{MAX_ORACLE_HOSPITALS} hospitals, {MAX_ORACLE_PLACES} places")

    hospital_ranks = build_ranks(hospital_prefs)
    mutual = [[h for h in doctor_prefs[d] if d in hospital_ranks[h]]
              for d in range(n_doc)]
    utils = assignment.doctor_utils

    stable: Set[tuple] = set()
    slots = list(capacities)
    choice: List[Optional[int]] = [None] * n_doc
    held: List[List[int]] = [[] for _ in range(n_hosp)]

    def leaf_is_stable() -> bool:
        # inline equivalent of find_blocking_pairs(...) == []; doctor lists
        # are utility-descending, so only the prefix above the match matters
        for d in range(n_doc):
            cur = choice[d]
            cur_u = utils[d][cur] if cur is not None else -math.inf
            for h in doctor_prefs[d]:
                if utils[d][h] <= cur_u:
                    break
                rd = hospital_ranks[h].get(d)
                if rd is None:
                    continue
                if len(held[h]) < capacities[h]:
                    return False
                if rd < max(hospital_ranks[h][x] for x in held[h]):
                    return False
        return True

    def walk(d: int):
        if d == n_doc:
            if leaf_is_stable():
                stable.add(tuple(-1 if h is None else h for h in choice))
            return
        choice[d] = None
        walk(d + 1)
        for h in mutual[d]:
            if slots[h] > 0:
                slots[h] -= 1
                choice[d] = h
                held[h].append(d)
                walk(d + 1)
                held[h].pop()
                choice[d] = None
                slots[h] += 1

    walk(0)
    return stable


def matching_from_key(key: tuple, n_hospitals: int) -> Matching:
    doctor_of = [None if h < 0 else h for h in key]
    doctors_of: List[set] = [set() for _ in range(n_hospitals)]
    for d, h in enumerate(doctor_of):
        if h is not None:
            doctors_of[h].add(d)
    return Matching(doctor_of, doctors_of)


def doctor_utility_vector(assignment, matching,
                          unmatched_utility: float = -math.inf):
    return [assignment.doctor_utils[d][h] if h is not None else unmatched_utility
            for d, h in enumerate(matching.doctor_of)]


def uniqueness_check_school(assignment: InterviewAssignment,
                            capacities=None,
                            prefs: Optional[tuple] = None) -> bool:
    """True iff both DA orientations deliver the same matching.

    In the school-choice setting the stable matching is unique, so this
    must hold there; on residency instances the result is reported without
    any contract being violated.
    """
    if capacities is None:
        capacities = assignment.instance.capacities
    if prefs is None:
        prefs = build_preferences(assignment)
    doctor_prefs, hospital_prefs = prefs
    a = doctor_proposing_da(doctor_prefs, hospital_prefs, capacities)
    b = hospital_proposing_da(doctor_prefs, hospital_prefs, capacities)
    return a.key() == b.key()


def rural_hospital_check(assignment: InterviewAssignment,
                         capacities=None,
                         prefs: Optional[tuple] = None) -> bool:
    """Matched-doctor set and per-hospital fills agree across orientations."""
    if capacities is None:
        capacities = assignment.instance.capacities
    if prefs is None:
        prefs = build_preferences(assignment)
    doctor_prefs, hospital_prefs = prefs
    a = doctor_proposing_da(doctor_prefs, hospital_prefs, capacities)
    b = hospital_proposing_da(doctor_prefs, hospital_prefs, capacities)
    return (a.matched_doctors() == b.matched_doctors()
            and a.fills() == b.fills())
