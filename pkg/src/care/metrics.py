"""Delivery, improvement, drop and latency statistics from run event logs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, check_config
from .mobility import MapGraph, Trajectories, scenario_map, simulate_mobility
from .simulator import CARE, EPIDEMIC, RunResult, run_simulation
from .workload import WorkloadSchedule, generate_schedule

DROP_EVENTS = ("drop_capacity", "reject_redundant", "reject_fp", "reject_dup")


class MetricError(ValueError):
    pass


@dataclass
class DeliveryLog:
    """Gateway arrivals of one run plus drop counters and creation ticks."""

    router: str
    deliveries: list[tuple[int, int, int]]          # (tick, msg_id, cluster_id)
    created: dict[int, int]                         # msg_id -> creation tick
    drops: dict[str, int] = field(default_factory=dict)
    dt: float = 1.0
    n_ticks: int = 0

    def __post_init__(self):
        seen = set()
        for tick, mid, _ in self.deliveries:
            if mid in seen:
                raise MetricError(f"message {mid} delivered twice")
            seen.add(mid)
            if mid in self.created and tick < self.created[mid]:
                raise MetricError(f"message {mid} delivered before it was created")

    @classmethod
    def from_result(cls, res: RunResult) -> "DeliveryLog":
        created = {}
        drops = dict.fromkeys(DROP_EVENTS, 0)
        deliveries = []
        for tick, ev, _node, mid, cid in res.events:
            if ev == "gen":
                created[mid] = tick
            elif ev == "deliver":
                deliveries.append((tick, mid, cid))
            elif ev in drops:
                drops[ev] += 1
        return cls(res.router, deliveries, created, drops, res.dt, res.n_ticks)

    @property
    def n_delivered(self) -> int:
        return len(self.deliveries)

    def latencies(self) -> np.ndarray:
        """Seconds from creation to gateway arrival, one per delivered message."""
        return np.array([(t - self.created[m]) * self.dt for t, m, _ in self.deliveries], dtype=float)

    def unique_latencies(self) -> np.ndarray:
        """Latency of each cluster's first delivery, measured from the cluster's first creation."""
        first_created: dict[int, int] = {}
        cl_of = {m: c for _, m, c in self.deliveries}
        for m, t in self.created.items():
            c = cl_of.get(m)
            if c is not None:
                first_created[c] = min(first_created.get(c, t), t)
        first_deliv: dict[int, int] = {}
        for t, _, c in self.deliveries:
            first_deliv.setdefault(c, t)
        return np.array([(first_deliv[c] - first_created[c]) * self.dt for c in first_deliv], dtype=float)


def unique_delivered(log: DeliveryLog, up_to_tick: int | None = None) -> int:
    return len({c for t, _, c in log.deliveries if up_to_tick is None or t <= up_to_tick})


def unique_series(log: DeliveryLog) -> list[tuple[int, int]]:
    """(tick, count) at tick 0, at every tick where the count changes, and at the end."""
    seen: set[int] = set()
    out = [(0, 0)]
    for t, _, c in sorted(log.deliveries):
        if c in seen:
            continue
        seen.add(c)
        if out[-1][0] == t:
            out[-1] = (t, len(seen))
        else:
            out.append((t, len(seen)))
    end = max(log.n_ticks - 1, out[-1][0])
    if out[-1][0] != end:
        out.append((end, len(seen)))
    return out


def improvement(u_care: int, u_nonre: int) -> float:
    """Percent gain of CARE over plain epidemic; NaN when the baseline delivered nothing."""
    if u_nonre <= 0:
        return math.nan
    return 100.0 * (u_care - u_nonre) / u_nonre


def latency_cdf(latencies) -> list[tuple[float, float]]:
    """Empirical CDF as (latency, cumulative fraction) at each distinct latency."""
    x = np.sort(np.asarray(latencies, dtype=float))
    if x.size == 0:
        raise MetricError("latency CDF of an empty log")
    vals, counts = np.unique(x, return_counts=True)
    frac = np.cumsum(counts) / x.size
    return [(float(v), float(f)) for v, f in zip(vals, frac)]


def median_latency(latencies) -> float:
    x = np.asarray(latencies, dtype=float)
    if x.size == 0:
        raise MetricError("median of an empty log")
    return float(np.median(x))


@dataclass
class PairedResult:
    cfg: ScenarioConfig
    care: DeliveryLog
    nonre: DeliveryLog
    improvement: float
    drops: dict[str, int]
    disaster_fraction: float
    results: dict[str, RunResult] = field(default_factory=dict, repr=False)

    def summary_row(self) -> dict:
        return {
            "seed": self.cfg.rng_seed,
            "R_sim": self.cfg.target_redundancy_Rsim,
            "pr_disaster": self.cfg.pr_disaster,
            "disaster_fraction": round(self.disaster_fraction, 6),
            "U_care": unique_delivered(self.care),
            "U_nonre": unique_delivered(self.nonre),
            "improvement": round(self.improvement, 6),
            "drops_care": self.drops["care"],
            "drops_nonre": self.drops["nonre"],
        }


SUMMARY_COLUMNS = ("seed", "R_sim", "pr_disaster", "disaster_fraction", "U_care", "U_nonre",
                   "improvement", "drops_care", "drops_nonre")


def paired_run(cfg: ScenarioConfig, seed: int | None = None, g: MapGraph | None = None,
               traj: Trajectories | None = None, schedule: WorkloadSchedule | None = None,
               care_detector=None) -> PairedResult:
    """Run CARE and plain epidemic on the same workload and trajectories."""
    if seed is not None:
        cfg = cfg.replace(rng_seed=seed)
    check_config(cfg)
    if traj is None:
        traj = simulate_mobility(cfg, g if g is not None else scenario_map(cfg))
    if schedule is None:
        schedule = generate_schedule(cfg)
    res_c = run_simulation(cfg, schedule, traj, CARE, care_detector)
    res_e = run_simulation(cfg, schedule, traj, EPIDEMIC)
    lc, le = DeliveryLog.from_result(res_c), DeliveryLog.from_result(res_e)
    imp = improvement(unique_delivered(lc), unique_delivered(le))
    drops = {"care": lc.drops["drop_capacity"], "nonre": le.drops["drop_capacity"]}
    return PairedResult(cfg, lc, le, imp, drops, traj.disaster_time_fraction,
                        {CARE: res_c, EPIDEMIC: res_e})


# -- output ------------------------------------------------------------------

def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_paired_outputs(p: PairedResult, out: str | Path, events: bool = True) -> list[str]:
    """Write the metric CSVs (and event logs) for one paired run; returns file names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    fh, w = _writer(out / "unique_over_time.csv")
    with fh:
        w.writerow(["tick", "count", "router"])
        for log in (p.care, p.nonre):
            for t, c in unique_series(log):
                w.writerow([t, c, log.router])
    names.append("unique_over_time.csv")
    fh, w = _writer(out / "latency_cdf.csv")
    with fh:
        w.writerow(["latency", "fraction", "router"])
        for log in (p.care, p.nonre):
            if log.n_delivered:
                for x, f in latency_cdf(log.latencies()):
                    w.writerow([repr(x), repr(f), log.router])
    names.append("latency_cdf.csv")
    write_summary(out / "summary.csv", [p.summary_row()])
    names.append("summary.csv")
    if events:
        for router, res in p.results.items():
            name = f"events_{router}.csv"
            (out / name).write_text(res.events_csv())
            names.append(name)
        p.results[CARE].schedule.to_csv(out / "workload.csv")
        names.append("workload.csv")
    return names


def write_summary(path: str | Path, rows: list[dict], columns=SUMMARY_COLUMNS) -> None:
    fh, w = _writer(Path(path))
    with fh:
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])


def aggregate(rows: list[dict], keys: list[str]) -> list[dict]:
    """Per-cell mean and sample stddev of improvement over seeds."""
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for cell, rs in cells.items():
        imps = np.array([r["improvement"] for r in rs], dtype=float)
        fr = np.array([r["disaster_fraction"] for r in rs], dtype=float)
        row = dict(zip(keys, cell))
        row.update({
            "n_seeds": len(rs),
            "improvement_mean": round(float(np.nanmean(imps)), 6) if np.isfinite(imps).any() else math.nan,
            "improvement_std": round(float(np.nanstd(imps, ddof=1)), 6) if np.isfinite(imps).sum() > 1 else 0.0,
            "disaster_fraction_mean": round(float(fr.mean()), 6),
        })
        out.append(row)
    return out
