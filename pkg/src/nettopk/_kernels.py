"""Array kernels for bulk simulation.

The object model in flowtable/protocol is the readable reference
implementation; these kernels run the same algorithms over packed uint64
arrays so large configurations (hundreds of switches, millions of packets)
finish in seconds. Each kernel has a pure-Python twin with identical
branch-level semantics; equivalence tests pin the two together, and the
twins double as a fallback when numba is unavailable.

Array layout: ids[d, s] and counts[d, s] per table, uint64 throughout.
A switch population is ids[n, d, s]. Empty slot is id 0, count 0.

All randomness is splitmix64 over explicit uint64 state, bit-identical
between the jitted and pure paths.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


U64 = np.uint64
_M32 = U64(0xFFFFFFFF)
_M64 = U64(0xFFFFFFFFFFFFFFFF)
_PY_M64 = 0xFFFFFFFFFFFFFFFF


@njit(cache=True)
def _hash_slot(fid, seed, mask):
    x = (fid ^ seed) & _M32
    x ^= x >> U64(16)
    x = (x * U64(0x85EBCA6B)) & _M32
    x ^= x >> U64(13)
    x = (x * U64(0xC2B2AE35)) & _M32
    x ^= x >> U64(16)
    return np.int64(x & mask)


@njit(cache=True)
def _next64(state):
    state = state + U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True)
def nb_ingest(ids, counts, seeds, mask, packets, rng_state):
    """Feed packets through local top-k replacement; returns (rng_state, recircs)."""
    d = ids.shape[0]
    recircs = 0
    one = U64(1)
    for p in range(packets.shape[0]):
        fid = packets[p]
        matched = False
        min_count = _M64
        min_vec = 0
        min_idx = np.int64(0)
        for i in range(d):
            j = _hash_slot(fid, seeds[i], mask)
            if ids[i, j] == fid:
                counts[i, j] += one
                matched = True
                break
            c = counts[i, j]
            if c < min_count:
                min_count = c
                min_vec = i
                min_idx = j
        if matched:
            continue
        if min_count > U64(0):
            rng_state, z = _next64(rng_state)
            if z >= _M64 // (min_count + one):
                continue
        ids[min_vec, min_idx] = fid
        counts[min_vec, min_idx] = min_count + one
        recircs += 1
    return rng_state, recircs


@njit(cache=True)
def _walk(g_ids, g_counts, pid, pcount, seeds, mask):
    d = g_ids.shape[0]
    for i in range(d):
        j = _hash_slot(pid, seeds[i], mask)
        scount = g_counts[i, j]
        if pcount > scount:
            g_counts[i, j] = pcount
            sid = g_ids[i, j]
            g_ids[i, j] = pid
            if sid == U64(0):
                return
            pid = sid
            pcount = scount
        elif pcount == scount:
            sid = g_ids[i, j]
            if sid == pid:
                return
            if pid > sid:
                g_ids[i, j] = pid
                pid = sid


@njit(cache=True)
def nb_aggregate(snap_ids, snap_counts, sum_counts, seeds, mask):
    """All-to-all aggregation round; returns delivered message count."""
    n = snap_ids.shape[0]
    d = snap_ids.shape[1]
    s = snap_ids.shape[2]
    deliveries = 0
    for r in range(n):
        for t in range(n):
            if t == r:
                continue
            for i in range(d):
                for jj in range(s):
                    fid = snap_ids[t, i, jj]
                    if fid == U64(0):
                        continue
                    deliveries += 1
                    cnt = snap_counts[t, i, jj]
                    for vi in range(d):
                        j2 = _hash_slot(fid, seeds[vi], mask)
                        if snap_ids[r, vi, j2] == fid:
                            sum_counts[r, vi, j2] += cnt
                            break
    return deliveries


@njit(cache=True)
def nb_consolidate(sum_ids, sum_counts, g_ids, g_counts, seeds, mask):
    """All-to-all consolidation round (own entries first); returns deliveries."""
    n = sum_ids.shape[0]
    d = sum_ids.shape[1]
    s = sum_ids.shape[2]
    deliveries = 0
    for r in range(n):
        for i in range(d):
            for jj in range(s):
                fid = sum_ids[r, i, jj]
                if fid != U64(0):
                    _walk(g_ids[r], g_counts[r], fid, sum_counts[r, i, jj], seeds, mask)
        for t in range(n):
            if t == r:
                continue
            for i in range(d):
                for jj in range(s):
                    fid = sum_ids[t, i, jj]
                    if fid == U64(0):
                        continue
                    deliveries += 1
                    _walk(g_ids[r], g_counts[r], fid, sum_counts[t, i, jj], seeds, mask)
    return deliveries


@njit(cache=True)
def nb_replay(src_ids, src_counts, dst_ids, dst_counts, seeds, mask):
    """Walk every entry of one table into another; returns entries walked."""
    d = src_ids.shape[0]
    s = src_ids.shape[1]
    walked = 0
    for i in range(d):
        for jj in range(s):
            fid = src_ids[i, jj]
            if fid == U64(0):
                continue
            walked += 1
            _walk(dst_ids, dst_counts, fid, src_counts[i, jj], seeds, mask)
    return walked


# Pure-Python twins. Same arrays, same branches, no jit.


def _py_hash_slot(fid: int, seed: int, mask: int) -> int:
    x = (fid ^ seed) & 0xFFFFFFFF
    x ^= x >> 16
    x = (x * 0x85EBCA6B) & 0xFFFFFFFF
    x ^= x >> 13
    x = (x * 0xC2B2AE35) & 0xFFFFFFFF
    x ^= x >> 16
    return x & mask


def _py_next64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _PY_M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _PY_M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _PY_M64
    z = z ^ (z >> 31)
    return state, z


def py_ingest(ids, counts, seeds, mask, packets, rng_state):
    d = ids.shape[0]
    mask = int(mask)
    seeds_l = [int(x) for x in seeds]
    state = int(rng_state)
    recircs = 0
    for fid in packets.tolist():
        matched = False
        min_count = -1
        min_vec = 0
        min_idx = 0
        for i in range(d):
            j = _py_hash_slot(fid, seeds_l[i], mask)
            if int(ids[i, j]) == fid:
                counts[i, j] = int(counts[i, j]) + 1
                matched = True
                break
            c = int(counts[i, j])
            if min_count < 0 or c < min_count:
                min_count = c
                min_vec = i
                min_idx = j
        if matched:
            continue
        if min_count > 0:
            state, z = _py_next64(state)
            if z >= _PY_M64 // (min_count + 1):
                continue
        ids[min_vec, min_idx] = fid
        counts[min_vec, min_idx] = min_count + 1
        recircs += 1
    return U64(state), recircs


def _py_walk(g_ids, g_counts, pid: int, pcount: int, seeds_l, mask: int) -> None:
    d = g_ids.shape[0]
    for i in range(d):
        j = _py_hash_slot(pid, seeds_l[i], mask)
        scount = int(g_counts[i, j])
        if pcount > scount:
            g_counts[i, j] = pcount
            sid = int(g_ids[i, j])
            g_ids[i, j] = pid
            if sid == 0:
                return
            pid = sid
            pcount = scount
        elif pcount == scount:
            sid = int(g_ids[i, j])
            if sid == pid:
                return
            if pid > sid:
                g_ids[i, j] = pid
                pid = sid


def py_aggregate(snap_ids, snap_counts, sum_counts, seeds, mask):
    n, d, s = snap_ids.shape
    mask = int(mask)
    seeds_l = [int(x) for x in seeds]
    deliveries = 0
    for r in range(n):
        for t in range(n):
            if t == r:
                continue
            for i in range(d):
                for jj in range(s):
                    fid = int(snap_ids[t, i, jj])
                    if fid == 0:
                        continue
                    deliveries += 1
                    cnt = int(snap_counts[t, i, jj])
                    for vi in range(d):
                        j2 = _py_hash_slot(fid, seeds_l[vi], mask)
                        if int(snap_ids[r, vi, j2]) == fid:
                            sum_counts[r, vi, j2] = int(sum_counts[r, vi, j2]) + cnt
                            break
    return deliveries


def py_consolidate(sum_ids, sum_counts, g_ids, g_counts, seeds, mask):
    n, d, s = sum_ids.shape
    mask = int(mask)
    seeds_l = [int(x) for x in seeds]
    deliveries = 0
    for r in range(n):
        for i in range(d):
            for jj in range(s):
                fid = int(sum_ids[r, i, jj])
                if fid != 0:
                    _py_walk(g_ids[r], g_counts[r], fid, int(sum_counts[r, i, jj]), seeds_l, mask)
        for t in range(n):
            if t == r:
                continue
            for i in range(d):
                for jj in range(s):
                    fid = int(sum_ids[t, i, jj])
                    if fid == 0:
                        continue
                    deliveries += 1
                    _py_walk(g_ids[r], g_counts[r], fid, int(sum_counts[t, i, jj]), seeds_l, mask)
    return deliveries


def py_replay(src_ids, src_counts, dst_ids, dst_counts, seeds, mask):
    d, s = src_ids.shape
    mask = int(mask)
    seeds_l = [int(x) for x in seeds]
    walked = 0
    for i in range(d):
        for jj in range(s):
            fid = int(src_ids[i, jj])
            if fid == 0:
                continue
            walked += 1
            _py_walk(dst_ids, dst_counts, fid, int(src_counts[i, jj]), seeds_l, mask)
    return walked


# Dispatch names used by the bulk engine.
if HAVE_NUMBA:
    _ingest_impl = nb_ingest
    aggregate_arrays = nb_aggregate
    consolidate_arrays = nb_consolidate
    replay_arrays = nb_replay
else:  # pragma: no cover
    _ingest_impl = py_ingest
    aggregate_arrays = py_aggregate
    consolidate_arrays = py_consolidate
    replay_arrays = py_replay


def ingest_arrays(ids, counts, seeds, mask, packets, rng_state):
    """Ingest packets into one switch's (d, s) arrays; returns (rng_state, recircs).

    The RNG state is pinned to uint64 on the way in and out so the value a
    caller feeds back for the next batch never shifts numba's typing.
    """
    state, recircs = _ingest_impl(
        ids, counts, seeds, mask, packets, np.uint64(int(rng_state) & _PY_M64)
    )
    return np.uint64(int(state) & _PY_M64), int(recircs)


def vector_hash_indices(ids: np.ndarray, seed: int, mask: int) -> np.ndarray:
    """Vectorized slot indices for an array of flow IDs (one hash seed)."""
    x = (ids.astype(np.uint64) ^ np.uint64(seed & 0xFFFFFFFF)) & np.uint64(0xFFFFFFFF)
    x ^= x >> np.uint64(16)
    x = (x * np.uint64(0x85EBCA6B)) & np.uint64(0xFFFFFFFF)
    x ^= x >> np.uint64(13)
    x = (x * np.uint64(0xC2B2AE35)) & np.uint64(0xFFFFFFFF)
    x ^= x >> np.uint64(16)
    return (x & np.uint64(mask)).astype(np.int64)
