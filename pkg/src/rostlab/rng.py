"""Deterministic randomness: named substreams and counter-style Gaussians.

Every random quantity in this package derives from an explicit integer seed;
nothing reads global state or the clock. Two mechanisms cover all needs:

* ``substream(seed, *tokens)`` builds an independent numpy Generator for a
  named task, e.g. ``substream(master, "stability", draw_index)``. Streams
  are stable across runs and parallel schedules.

* ``coupling_normals(seed, tag, *index_arrays)`` evaluates standard normals
  as a pure function of (seed, tag, integer coordinates). Any single value
  can be regenerated without generating predecessors, and a coupling tensor
  on N sites is the restriction of the one on N+1 sites, which is what makes
  coupled single-site increment experiments possible.

The hash is a SplitMix64-style finalizer chained over the coordinates,
followed by a Box-Muller transform. That is plenty for Monte Carlo work at
the sample sizes used here.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_U11 = np.uint64(11)
_TWO_NEG53 = 2.0 ** -53


def _mix(z):
    """SplitMix64 finalizer, elementwise on uint64 arrays (wraps mod 2^64)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _token_int(token) -> int:
    """Stable 64-bit integer for a seed token (int or string-like)."""
    if isinstance(token, (int, np.integer)):
        return int(token) & _MASK
    digest = hashlib.blake2b(str(token).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def child_seed(seed: int, *tokens) -> int:
    """A derived 64-bit integer seed, pure function of (seed, tokens)."""
    h = np.uint64(_token_int(seed))
    with np.errstate(over="ignore"):
        for t in tokens:
            h = _mix(h ^ (np.uint64(_token_int(t)) + _GAMMA))
    return int(h)


def substream(seed: int, *tokens) -> np.random.Generator:
    """Independent numpy Generator for the named (seed, tokens) stream."""
    entropy = [_token_int(seed)] + [_token_int(t) for t in tokens]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def coupling_normals(seed: int, tag, *index_arrays) -> np.ndarray:
    """Standard normals indexed by integer coordinates.

    Pure function of (seed, tag, coordinates); index arrays broadcast
    against each other. Used for disorder tensors so that the value of a
    coupling never depends on the system size or on generation order.
    """
    if not index_arrays:
        raise ValueError("at least one index array is required")
    arrays = np.broadcast_arrays(*[np.asarray(a) for a in index_arrays])
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(child_seed(seed, tag)) + _GAMMA)
        h = np.full(arrays[0].shape, base, dtype=np.uint64)
        for k, a in enumerate(arrays):
            h = _mix(h ^ (a.astype(np.uint64) + _GAMMA * np.uint64(k + 1)))
        h2 = _mix(h ^ _M1)
    u1 = ((h >> _U11).astype(np.float64) + 0.5) * _TWO_NEG53
    u2 = ((h2 >> _U11).astype(np.float64) + 0.5) * _TWO_NEG53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
