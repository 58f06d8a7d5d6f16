"""Clustered operation: per-cluster cycles, a representatives' cycle, and
dissemination of the final table to every member.

Phase 1 runs a full cycle independently inside each cluster, leaving all
members of a cluster with the same merged table. Phase 2 takes one
representative per cluster and runs a cycle among representatives, using
each one's phase-1 merged table as its local table. Phase 3 broadcasts the
representatives' final table back to their members, who rebuild it by
walking the received entries into an empty table; a consolidated table
replayed this way reproduces itself exactly, so afterwards every switch in
the network serves the identical query table.

The message saving comes from replacing one n-wide all-to-all with c
cluster-local all-to-alls plus a c-wide one plus a linear dissemination.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .flowtable import FieldOrder, MultiVectorTable, snapshot_copy, table_entries
from .protocol import (
    CycleStats,
    InvariantError,
    Round,
    RoundPhase,
    check_cycle_invariants,
    consolidate_into,
    run_cycle,
    _slot_reader,
)
from .transport import Network, NetworkConfig


@dataclass(frozen=True)
class ClusterPlan:
    c: int
    assignment: dict[int, int]
    representatives: tuple[int, ...]

    def members(self, cluster_id: int) -> list[int]:
        return sorted(s for s, c in self.assignment.items() if c == cluster_id)


def partition(n: int, c: int, seed: int) -> ClusterPlan:
    """Split switches 0..n-1 into c clusters whose sizes differ by at most 1."""
    if not 1 <= c <= n:
        raise ValueError("need 1 <= c <= n")
    ids = list(range(n))
    random.Random(seed).shuffle(ids)
    base, extra = divmod(n, c)
    assignment: dict[int, int] = {}
    reps = []
    pos = 0
    for cid in range(c):
        size = base + (1 if cid < extra else 0)
        chunk = ids[pos : pos + size]
        pos += size
        for s in chunk:
            assignment[s] = cid
        reps.append(min(chunk))
    return ClusterPlan(c=c, assignment=assignment, representatives=tuple(reps))


def plan_to_csv(plan: ClusterPlan) -> str:
    lines = ["switch_id,cluster_id,is_representative"]
    reps = set(plan.representatives)
    for sid in sorted(plan.assignment):
        lines.append(f"{sid},{plan.assignment[sid]},{int(sid in reps)}")
    return "\n".join(lines) + "\n"


@dataclass
class ClusteredStats:
    phase1: CycleStats
    phase2: CycleStats
    phase3: CycleStats

    @property
    def delivered(self) -> int:
        return self.phase1.delivered + self.phase2.delivered + self.phase3.delivered

    @property
    def dropped(self) -> int:
        return self.phase1.dropped + self.phase2.dropped + self.phase3.dropped


def run_clustered(switches, plan: ClusterPlan, net_config: NetworkConfig, check: bool = True) -> ClusteredStats:
    """Run the three clustered phases over the object model.

    net_config supplies loss and ordering policy; each phase gets fresh
    transport instances (phase boundaries are global barriers). Afterwards
    every switch's query table holds the network-wide result.
    """
    sws = {sw.switch_id: sw for sw in switches}
    phase_seed = net_config.seed

    def make_net(participants, offset):
        cfg = NetworkConfig(
            n=len(participants),
            drop_probability=net_config.drop_probability,
            delivery_order=net_config.delivery_order,
            seed=phase_seed + offset,
        )
        return Network(cfg, participants=tuple(participants))

    p1 = CycleStats(0, 0)
    for cid in range(plan.c):
        members = plan.members(cid)
        net = make_net(members, 1000 + cid)
        stats = run_cycle([sws[m] for m in members], net)
        net.audit_exactly_once()
        p1.delivered += stats.delivered
        p1.dropped += stats.dropped
        if check:
            check_cycle_invariants([sws[m] for m in members])

    # phase 2: each representative's merged table becomes its local table
    cluster_tables = {rep: snapshot_copy(sws[rep].g_topk) for rep in plan.representatives}
    reps = sorted(plan.representatives)
    net2 = make_net(reps, 2000)
    for rep in reps:
        sws[rep].begin_cycle(source=cluster_tables[rep])
    for rep in reps:
        reader, count = _slot_reader(sws[rep].snapshot)
        net2.broadcast(rep, Round.AGG, reader, count)
    p2 = _drive(sws, reps, net2)
    net2.audit_exactly_once()
    if check:
        check_cycle_invariants([sws[r] for r in reps])

    # phase 3: representatives disseminate the final table to their clusters
    p3 = CycleStats(0, 0)
    for cid in range(plan.c):
        rep = plan.representatives[cid]
        members = plan.members(cid)
        others = [m for m in members if m != rep]
        final = sws[rep].g_topk
        if others:
            net3 = make_net(members, 3000 + cid)
            reader, count = _slot_reader(final)
            net3.broadcast(rep, "install", reader, count, receivers=others)
            rebuilt = {
                m: MultiVectorTable(sws[rep].config, FieldOrder.COUNT_FIRST) for m in others
            }
            while True:
                ev = net3.step()
                if ev is None:
                    break
                if ev.kind == "deliver":
                    consolidate_into(rebuilt[ev.receiver], ev.entry.id, ev.entry.count)
            net3.audit_exactly_once()
            p3.delivered += net3.delivered_count
            p3.dropped += net3.dropped_count
            for m in others:
                sws[m].query = snapshot_copy(rebuilt[m], FieldOrder.ID_FIRST)
        sws[rep].query = snapshot_copy(final, FieldOrder.ID_FIRST)

    if check:
        ref = switches[0].query
        for sw in switches:
            if not sw.query.equals(ref):
                raise InvariantError(f"query differs on switch {sw.switch_id} after dissemination")
    return ClusteredStats(p1, p2, p3)


def _drive(sws, participants, net) -> CycleStats:
    # same event loop as run_cycle, but begin_cycle was already called
    from .protocol import _advance

    subset = {pid: sws[pid] for pid in participants}
    _advance(subset, net)
    while True:
        ev = net.step()
        if ev is None:
            break
        if ev.kind == "deliver":
            sw = subset[ev.receiver]
            from .protocol import ProtocolMessage

            msg = ProtocolMessage(Round(ev.round), ev.sender, ev.entry)
            if msg.round is Round.AGG:
                sw.handle_aggregation_packet(msg)
            else:
                sw.handle_consolidation_packet(msg)
            _advance(subset, net)
    for sw in subset.values():
        assert sw.phase is RoundPhase.IDLE
    return CycleStats(net.delivered_count, net.dropped_count)


# Closed-form lossless message counts.


def flat_message_count(n: int, entries_per_switch: int) -> int:
    """Deliveries in one flat cycle with equal per-switch occupancy."""
    return n * (n - 1) * entries_per_switch * 2


def clustered_message_count(n: int, c: int, entries: int) -> int:
    """Deliveries across the three clustered phases at uniform occupancy."""
    base, extra = divmod(n, c)
    sizes = [base + (1 if i < extra else 0) for i in range(c)]
    phase1 = sum(m * (m - 1) for m in sizes) * entries * 2
    phase2 = c * (c - 1) * entries * 2
    phase3 = sum(m - 1 for m in sizes) * entries
    return phase1 + phase2 + phase3


# Array engine.


@dataclass
class ClusteredArrayResult:
    query_ids: np.ndarray
    query_counts: np.ndarray
    delivered: int
    phase_delivered: tuple[int, int, int]


def run_clustered_arrays(
    l_ids: np.ndarray, l_counts: np.ndarray, seeds: np.ndarray, mask, plan: ClusterPlan
) -> ClusteredArrayResult:
    """Lossless clustered run over an (n, d, s) population."""
    n, d, s = l_ids.shape
    g_ids = np.zeros_like(l_ids)
    g_counts = np.zeros_like(l_counts)
    p1 = 0
    for cid in range(plan.c):
        members = plan.members(cid)
        idx = np.array(members, dtype=np.int64)
        snap_ids = l_ids[idx].copy()
        snap_counts = l_counts[idx].copy()
        sum_counts = snap_counts.copy()
        p1 += int(_kernels.aggregate_arrays(snap_ids, snap_counts, sum_counts, seeds, mask))
        sub_g_ids = np.zeros_like(snap_ids)
        sub_g_counts = np.zeros_like(snap_counts)
        p1 += int(
            _kernels.consolidate_arrays(snap_ids, sum_counts, sub_g_ids, sub_g_counts, seeds, mask)
        )
        if not ((sub_g_ids == sub_g_ids[0]).all() and (sub_g_counts == sub_g_counts[0]).all()):
            raise InvariantError(f"cluster {cid} members diverged in phase 1")
        g_ids[idx] = sub_g_ids
        g_counts[idx] = sub_g_counts

    reps = sorted(plan.representatives)
    ridx = np.array(reps, dtype=np.int64)
    snap_ids = g_ids[ridx].copy()
    snap_counts = g_counts[ridx].copy()
    sum_counts = snap_counts.copy()
    p2 = int(_kernels.aggregate_arrays(snap_ids, snap_counts, sum_counts, seeds, mask))
    rep_g_ids = np.zeros_like(snap_ids)
    rep_g_counts = np.zeros_like(snap_counts)
    p2 += int(_kernels.consolidate_arrays(snap_ids, sum_counts, rep_g_ids, rep_g_counts, seeds, mask))
    if not ((rep_g_ids == rep_g_ids[0]).all() and (rep_g_counts == rep_g_counts[0]).all()):
        raise InvariantError("representatives diverged in phase 2")

    query_ids = np.zeros_like(l_ids)
    query_counts = np.zeros_like(l_counts)
    p3 = 0
    for cid in range(plan.c):
        rep = plan.representatives[cid]
        rep_pos = reps.index(rep)
        for m in plan.members(cid):
            if m == rep:
                query_ids[m] = rep_g_ids[rep_pos]
                query_counts[m] = rep_g_counts[rep_pos]
                continue
            p3 += int(
                _kernels.replay_arrays(
                    rep_g_ids[rep_pos], rep_g_counts[rep_pos], query_ids[m], query_counts[m], seeds, mask
                )
            )
    if not ((query_ids == query_ids[0]).all() and (query_counts == query_counts[0]).all()):
        raise InvariantError("query tables diverged after dissemination")
    return ClusteredArrayResult(query_ids, query_counts, p1 + p2 + p3, (p1, p2, p3))
