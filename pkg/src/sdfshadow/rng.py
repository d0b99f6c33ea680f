"""Counter-based random streams for deterministic, parallel-safe sampling.

Every consumer derives values from (seed, stream index, counter) so results
do not depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def mix64(x):
    """SplitMix64 finalizer; bijective on uint64."""
    x = (x + _GOLDEN) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return z


@njit(cache=True, inline="always")
def stream_key(seed, stream, tick):
    """Key for one (seed, stream, tick) draw sequence, e.g. (seed, texel, frame)."""
    k = mix64(np.uint64(seed) ^ _GOLDEN)
    k = mix64(k ^ np.uint64(stream))
    k = mix64(k ^ np.uint64(tick))
    return k


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in [0, 1) for draw number `counter` of a keyed stream."""
    bits = mix64(key + np.uint64(counter) * _GOLDEN)
    return float(bits >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def unit_sphere_dir(key, counter):
    """Uniform direction on the unit sphere; consumes counters 2c and 2c+1."""
    u = uniform(key, 2 * counter)
    v = uniform(key, 2 * counter + 1)
    z = 1.0 - 2.0 * u
    r = np.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * v
    return r * np.cos(phi), r * np.sin(phi), z
