"""Counter-based deterministic uniform generator.

Every random quantity in a market instance is addressed by a small tuple of
integers (seed, run, stream kind, agent ids, salt) and produced by hashing
that tuple with the splitmix64 finalizer.  There is no sequential state:
identical keys give identical draws in any process, on any platform, in any
order of evaluation.  This is what lets a deviation experiment redraw one
doctor's interview values while every other value in the market stays fixed
bit for bit (common random numbers).
"""

from __future__ import annotations

import numpy as np

# stream kinds (the `kind` component of a key)
KIND_DOCTOR_RATING = 1
KIND_HOSPITAL_RATING = 2
KIND_PRIVATE_DH = 3     # v(d,h), doctor's private value for a hospital
KIND_INTERVIEW_DH = 4   # iota(d,h), doctor's interview value
KIND_INTERVIEW_HD = 5   # iota(h,d), hospital's interview value
KIND_PRIVATE_HD = 6     # v(h,d), hospital's private value (request setting)

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_INV_2_53 = float(2.0 ** -53)


def _mix(x):
    # splitmix64 finalizer; uint64 scalar or array, wraps mod 2**64
    x = (x ^ (x >> _U64(30))) * _M1
    x = (x ^ (x >> _U64(27))) * _M2
    return x ^ (x >> _U64(31))


def key_state(seed: int, run: int, kind: int, salt: int = 0) -> np.uint64:
    """Pre-mixed state for a (seed, run, kind, salt) stream."""
    with np.errstate(over="ignore"):
        s = _mix(_U64(seed) + _GAMMA)
        s = _mix(s + _GAMMA * (_U64(run) + _U64(1)))
        s = _mix(s + _GAMMA * (_U64(kind) + _U64(1)))
        if salt:
            s = _mix(s + _GAMMA * (_U64(salt) + _U64(1)))
    return s


def uniform(state: np.uint64, i, j) -> np.ndarray:
    """Uniform [0,1) draw(s) addressed by (state, i, j).

    `i` and `j` may be scalars or broadcastable integer arrays; the result
    follows numpy broadcasting.  uniform(state, i, j) is a pure function.
    """
    with np.errstate(over="ignore"):
        ii = np.asarray(i, dtype=np.uint64)
        jj = np.asarray(j, dtype=np.uint64)
        x = _mix(state + _GAMMA * (ii + _U64(1)))
        x = _mix(x + _GAMMA * (jj + _U64(1)))
        out = (x >> _U64(11)).astype(np.float64) * _INV_2_53
    return out


def uniform_scalar(state: np.uint64, i: int, j: int) -> float:
    return float(uniform(state, i, j))
