"""Message schedule with a controlled fraction of semantically redundant copies."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, MessageRecord, ScenarioConfig, check_config


@dataclass
class WorkloadSchedule:
    entries: list[MessageRecord]

    @property
    def realized_redundancy(self) -> float:
        if not self.entries:
            return 0.0
        return 1.0 - len({m.cluster_id for m in self.entries}) / len(self.entries)

    @property
    def n_clusters(self) -> int:
        return len({m.cluster_id for m in self.entries})

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "owner", "msg_id", "cluster_id", "size"])
            for m in self.entries:
                w.writerow([repr(float(m.created_at)), m.owner, m.msg_id, m.cluster_id, m.size])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WorkloadSchedule":
        entries = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append(MessageRecord(int(row["msg_id"]), int(row["cluster_id"]), int(row["owner"]),
                                             float(row["time"]), int(row["size"])))
        entries.sort(key=lambda m: (m.created_at, m.msg_id))
        return cls(entries)


def workload_rng(cfg: ScenarioConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(0,)))


def generate_schedule(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> WorkloadSchedule:
    """One message every G seconds from a random person, then convert a random
    subset into redundant copies placed within W seconds of a seed message.
    """
    check_config(cfg)
    rng = rng if rng is not None else workload_rng(cfg)
    n = cfg.n_messages
    n_red = int(round(cfg.target_redundancy_Rsim * n))
    if n_red >= n:
        raise ConfigError("target_redundancy_Rsim leaves no seed messages")
    # the first slot stays a seed so every copy has an earlier seed to point at
    times = [k * cfg.gen_interval_G for k in range(n)]
    owners = rng.integers(cfg.n_people, size=n).tolist()
    clusters = list(range(n))
    converted = np.sort(rng.choice(np.arange(1, n), size=n_red, replace=False)) if n_red else np.array([], dtype=int)
    is_copy = np.zeros(n, dtype=bool)
    is_copy[converted] = True
    seeds = np.flatnonzero(~is_copy)
    for k in converted.tolist():
        earlier = int(np.searchsorted(seeds, k))
        src = int(seeds[rng.integers(earlier)])
        clusters[k] = clusters[src]
        if cfg.owner_mode == "same_as_seed":
            owners[k] = owners[src]
        else:
            owners[k] = int(rng.integers(cfg.n_people))
        t = times[src] + rng.uniform(-cfg.window_W, cfg.window_W)
        times[k] = min(max(t, 0.0), cfg.duration_T)
    order = sorted(range(n), key=lambda k: (times[k], k))
    # msg ids follow creation order; cluster ids follow first appearance
    relabel: dict[int, int] = {}
    entries = []
    for new_id, k in enumerate(order, start=1):
        cid = relabel.setdefault(clusters[k], len(relabel) + 1)
        entries.append(MessageRecord(new_id, cid, int(owners[k]), float(times[k]), cfg.message_size))
    return WorkloadSchedule(entries)


def cluster_members(schedule: WorkloadSchedule) -> dict[int, list[MessageRecord]]:
    out: dict[int, list[MessageRecord]] = {}
    for m in schedule.entries:
        out.setdefault(m.cluster_id, []).append(m)
    return out


def seed_distance_ok(schedule: WorkloadSchedule, window: float) -> bool:
    """Every cluster's members lie within ``window`` of some common seed time."""
    for members in cluster_members(schedule).values():
        times = [m.created_at for m in members]
        if not any(all(abs(t - s) <= window + 1e-9 for t in times) for s in times):
            return False
    return True
