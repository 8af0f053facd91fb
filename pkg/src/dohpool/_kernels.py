"""Inner loops of the Monte Carlo oracle and the compromise sweep.

Each kernel has a numpy form and a numba form with identical results; the
module-level names point at whichever ``_accel.USE_NUMBA`` selects.
Randomness is drawn outside the kernels so both forms see the same stream.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

STATUS_OK = 0
STATUS_SERVFAIL = 1
STATUS_EMPTY = 2


def threshold_hits_numpy(u: np.ndarray, p: float, m: int) -> int:
    """Rows of ``u`` (trials x resolvers, uniforms) with at least ``m`` entries below ``p``."""
    return int(np.count_nonzero(np.count_nonzero(u < p, axis=1) >= m))


@njit(cache=True, nogil=True)
def threshold_hits_numba(u, p, m):
    hits = 0
    for t in range(u.shape[0]):
        c = 0
        for j in range(u.shape[1]):
            if u[t, j] < p:
                c += 1
        if c >= m:
            hits += 1
    return hits


def pool_counts_numpy(lengths, compromised, min_responders, empty_is_failure):
    """Per-run pool composition for a compromise sweep.

    ``lengths[r, j]`` is resolver j's answer count in run r (-1 = failed);
    ``compromised[r, j]`` marks attacker-controlled resolvers. Since every
    usable resolver contributes k entries, the attacker share is
    ``bad / used``. Returns ``(bad, used, status)``.
    """
    usable = lengths >= 0
    if empty_is_failure:
        usable &= lengths > 0
    used = np.count_nonzero(usable, axis=1).astype(np.int64)
    big = np.iinfo(np.int64).max
    k = np.where(usable, lengths, big).min(axis=1)
    bad = np.count_nonzero(usable & compromised, axis=1).astype(np.int64)
    status = np.full(lengths.shape[0], STATUS_OK, dtype=np.int8)
    status[(used == 0) | (k == 0)] = STATUS_EMPTY
    status[used < min_responders] = STATUS_SERVFAIL
    return bad, used, status


@njit(cache=True, nogil=True)
def pool_counts_numba(lengths, compromised, min_responders, empty_is_failure):
    runs, n = lengths.shape
    bad = np.zeros(runs, dtype=np.int64)
    used = np.zeros(runs, dtype=np.int64)
    status = np.zeros(runs, dtype=np.int8)
    for r in range(runs):
        k = -1
        for j in range(n):
            length = lengths[r, j]
            if length < 0 or (empty_is_failure and length == 0):
                continue
            used[r] += 1
            if compromised[r, j]:
                bad[r] += 1
            if k < 0 or length < k:
                k = length
        if used[r] < min_responders:
            status[r] = STATUS_SERVFAIL
        elif used[r] == 0 or k == 0:
            status[r] = STATUS_EMPTY
    return bad, used, status


if USE_NUMBA:
    threshold_hits = threshold_hits_numba
    pool_counts = pool_counts_numba
else:
    threshold_hits = threshold_hits_numpy
    pool_counts = pool_counts_numpy
