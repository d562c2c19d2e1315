"""Time-stepped DTN engine: generation, contacts, and per-contact exchanges.

Each tick covers ``[t, t + dt)``. Messages created by the start of the tick
are handed to their owner; every pair in contact at tick ``t`` then exchanges
for ``dt`` seconds. The two directions of a contact run concurrently at the
link rate, one message at a time each, with completions processed in time
order. A contact that disappears aborts whatever was in flight.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .config import GATEWAY, MessageRecord, ScenarioConfig
from .detectors import NeverSimilar, OracleDetector
from .mobility import Trajectories
from .routing import (Admit, NodeBuffer, TransferSession, admit_care, admit_epidemic, care_check)
from .workload import WorkloadSchedule

EPIDEMIC, CARE = "epidemic", "care"
EVENT_COLUMNS = ("tick", "event", "node", "msg_id", "cluster_id")

_REJECT_EVENT = {
    Admit.REJECTED_DUPLICATE: "reject_dup",
    Admit.REJECTED_REDUNDANT: "reject_redundant",
    Admit.REJECTED_FP: "reject_fp",
}


def detector_seed(cfg: ScenarioConfig) -> int:
    ss = np.random.SeedSequence(cfg.rng_seed, spawn_key=(2,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_detector(cfg: ScenarioConfig):
    if cfg.detector == "never":
        return NeverSimilar()
    return OracleDetector(cfg.detector_fp, cfg.detector_fn, detector_seed(cfg), cfg.detector_scope)


@dataclass
class RunResult:
    router: str
    events: list[tuple]
    buffers: list[NodeBuffer]
    schedule: WorkloadSchedule
    dt: float
    gateway: int
    stats: dict = field(default_factory=dict)
    n_ticks: int = 0

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        w.writerows(self.events)
        return buf.getvalue()

    def count(self, event: str) -> int:
        return sum(1 for e in self.events if e[1] == event)


class Engine:
    def __init__(self, cfg: ScenarioConfig, schedule: WorkloadSchedule, traj: Trajectories,
                 router: str = CARE, detector=None):
        if router not in (EPIDEMIC, CARE):
            raise ValueError(f"unknown router {router!r}")
        self.cfg = cfg
        self.schedule = schedule
        self.traj = traj
        self.router = router
        self.detector = detector if detector is not None else make_detector(cfg)
        self.specs = cfg.node_specs()
        self.gateway = next(s.node_id for s in self.specs if s.role == GATEWAY)
        self.buffers = [NodeBuffer(s.buffer_capacity) for s in self.specs]
        self.rates = [s.link_rate for s in self.specs]
        self.events: list[tuple] = []
        self.sessions: dict[tuple[int, int], list] = {}
        self.stats: dict = {}
        self.tick = 0

    # -- admission -------------------------------------------------------
    def _admit(self, node: int, msg: MessageRecord):
        buf = self.buffers[node]
        if self.router == CARE and node != self.gateway:
            return admit_care(buf, msg, self.detector, self.stats)
        return admit_epidemic(buf, msg)

    def _record(self, node: int, msg: MessageRecord, res) -> None:
        ev = self.events
        t = self.tick
        if res.status in _REJECT_EVENT:
            ev.append((t, _REJECT_EVENT[res.status], node, msg.msg_id, msg.cluster_id))
        elif res.status == Admit.REJECTED_OVERSIZE:
            ev.append((t, "drop_capacity", node, msg.msg_id, msg.cluster_id))
        else:
            for d in res.dropped:
                ev.append((t, "drop_capacity", node, d.msg_id, d.cluster_id))
            if node == self.gateway:
                ev.append((t, "deliver", node, msg.msg_id, msg.cluster_id))

    # -- exchange --------------------------------------------------------
    def _next_message(self, s: TransferSession):
        """Advance the session's cursor to the next message worth sending."""
        src = self.buffers[s.sender]
        dst = self.buffers[s.receiver]
        log = src.log
        check = self.router == CARE and s.receiver != self.gateway
        while s.cursor < len(log):
            entry = log[s.cursor]
            s.cursor += 1
            mid = entry[0]
            if mid in dst.queue or src.serial.get(mid) != entry[1]:
                continue
            msg = src.queue[mid]
            if check:
                verdict = care_check(dst, msg, self.detector)
                if verdict is not None:
                    # refused on offer: costs no airtime
                    self.stats[verdict.value] = self.stats.get(verdict.value, 0) + 1
                    self.events.append((self.tick, _REJECT_EVENT[verdict], s.receiver, mid, msg.cluster_id))
                    continue
            s.msg = msg
            s.bytes_sent = 0.0
            return msg
        s.msg = None
        return None

    def _exchange(self, pair: tuple[int, int], dt: float) -> None:
        sess = self.sessions[pair]
        clocks = [0.0, 0.0]
        idle = [s is None for s in sess]
        while True:
            best = None
            for k in (0, 1):
                s = sess[k]
                if idle[k]:
                    continue
                if s.msg is not None and self.buffers[s.sender].serial.get(s.msg.msg_id) is None:
                    s.msg = None  # sender evicted it mid-flight
                if s.msg is None and self._next_message(s) is None:
                    idle[k] = True
                    continue
                finish = clocks[k] + s.remaining * 8.0 / s.rate
                if finish <= dt + 1e-12 and (best is None or finish < best[0]):
                    best = (finish, k)
            if best is None:
                for k in (0, 1):
                    s = sess[k]
                    if not idle[k] and s.msg is not None:
                        s.bytes_sent += (dt - clocks[k]) * s.rate / 8.0
                return
            finish, k = best
            clocks[k] = finish
            s = sess[k]
            msg = s.msg
            s.msg = None
            s.bytes_sent = 0.0
            self.events.append((self.tick, "send", s.sender, msg.msg_id, msg.cluster_id))
            self._record(s.receiver, msg, self._admit(s.receiver, msg))

    def _open(self, pair):
        a, b = pair
        rate = min(self.rates[a], self.rates[b])
        # the gateway is a sink and never forwards
        ab = TransferSession(a, b, None, rate) if a != self.gateway else None
        ba = TransferSession(b, a, None, rate) if b != self.gateway else None
        self.sessions[pair] = [ab, ba]

    # -- main loop -------------------------------------------------------
    def run(self) -> RunResult:
        dt = self.traj.dt
        entries = self.schedule.entries
        n_ticks = len(self.traj.contacts)
        idx = 0
        active: set = set()
        for t in range(n_ticks):
            self.tick = t
            now = t * dt
            while idx < len(entries) and entries[idx].created_at <= now + 1e-9:
                msg = entries[idx]
                idx += 1
                self.events.append((t, "gen", msg.owner, msg.msg_id, msg.cluster_id))
                self._record(msg.owner, msg, self._admit(msg.owner, msg))
            current = self.traj.contacts[t]
            cur_set = set(current)
            for pair in sorted(active - cur_set):
                del self.sessions[pair]   # partial transfers are discarded
            for pair in current:
                if pair not in self.sessions:
                    self._open(pair)
            active = cur_set
            for pair in current:
                self._exchange(pair, dt)
        return RunResult(self.router, self.events, self.buffers, self.schedule, dt, self.gateway,
                         dict(self.stats), n_ticks)


def run_simulation(cfg: ScenarioConfig, schedule: WorkloadSchedule, traj: Trajectories,
                   router: str = CARE, detector=None) -> RunResult:
    return Engine(cfg, schedule, traj, router, detector).run()


def conservation(result: RunResult) -> dict:
    """Classify every generated message, and every cluster, at the end of a run.

    Messages are delivered, buffered (a copy survives at a non-gateway node),
    rejected (refused by its own creator, so no copy ever existed) or dropped
    (copies existed but all were evicted). Clusters are delivered, buffered or
    lost. Each family partitions its set.
    """
    generated: dict[int, int] = {}
    at_source = set()
    delivered = set()
    owner_of: dict[int, int] = {}
    pending = None
    for t, ev, node, mid, cid in result.events:
        if ev == "gen":
            generated[mid] = cid
            owner_of[mid] = node
            pending = (t, node, mid)
        elif ev == "deliver":
            delivered.add(mid)
        elif ev.startswith("reject_") or ev == "drop_capacity":
            if pending == (t, node, mid):
                at_source.add(mid)
        if ev != "gen" and pending is not None and pending[2] != mid:
            pending = None
    held = set()
    for node, buf in enumerate(result.buffers):
        if node != result.gateway:
            held.update(buf.queue)
    out = {"generated": len(generated), "delivered": 0, "buffered": 0, "rejected": 0, "dropped": 0}
    for mid in generated:
        if mid in delivered:
            out["delivered"] += 1
        elif mid in held:
            out["buffered"] += 1
        elif mid in at_source:
            out["rejected"] += 1
        else:
            out["dropped"] += 1
    clusters = set(generated.values())
    c_del = {generated[m] for m in delivered if m in generated}
    c_buf = {generated[m] for m in held if m in generated} - c_del
    out["clusters"] = len(clusters)
    out["clusters_delivered"] = len(c_del)
    out["clusters_buffered"] = len(c_buf)
    out["clusters_lost"] = len(clusters - c_del - c_buf)
    return out
