"""Command-line entry point: ``care <subcommand> ...``.

Exit codes: 0 ok, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
import time
from multiprocessing import Pool
from pathlib import Path

import yaml

from . import BACKEND, __version__
from .config import ConfigError, ScenarioConfig, check_config, config_from_dict, load_config
from .detectors import (Thresholds, phash_compute, phash_similarity, read_feature_csv, read_pgm,
                        read_sift_csv)
from .evaluation import (CalibrationError, PairScoreSet, build_pair_scores, calibrate_pipeline,
                         calibrate_threshold, pipeline_report, report_csv, roc_sweep)
from .metrics import aggregate, paired_run, write_paired_outputs, write_summary
from .mobility import MapError, scenario_map, simulate_mobility
from .redundancy import LabelError, aggregate_labels, analyze, chunk_dedup_ratio, read_items, read_labels
from .redundancy import report_csv as redundancy_csv

log = logging.getLogger("care")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# fields that do not influence trajectories; sweep cells differing only in
# these share one mobility simulation per seed
NON_MOBILITY = {"target_redundancy_Rsim", "gen_interval_G", "window_W", "detector", "detector_fp",
                "detector_fn", "detector_scope", "buffer_mode", "people_buffer", "rescue_buffer", "message_size",
                "owner_mode", "person_rate", "vehicle_rate", "gateway_rate"}


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out: Path, command: str, cfg: ScenarioConfig | None, files: list[str],
                   started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "seed": cfg.rng_seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "files": sorted(files),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config, args.set or [])
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    return check_config(cfg)


# -- simulation ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = paired_run(cfg)
    files = write_paired_outputs(p, out, events=not args.no_events)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    files.append("config.yaml")
    write_manifest(out, "simulate", cfg, files, started)
    row = p.summary_row()
    print(f"U_care={row['U_care']} U_nonre={row['U_nonre']} improvement={row['improvement']:.2f}% "
          f"drops_care={row['drops_care']} drops_nonre={row['drops_nonre']} "
          f"disaster_fraction={row['disaster_fraction']:.3f}")
    return EXIT_OK


def parse_grid(items: list[str]) -> dict[str, list]:
    if not items:
        raise ConfigError("sweep: empty grid (give at least one --grid key=v1,v2,...)")
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        key = key.strip()
        vals = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
        if not sep or not key or not vals:
            raise ConfigError(f"sweep: bad grid entry {item!r}")
        grid[key] = vals
    return grid


def _cell_name(cell: dict) -> str:
    return "__".join(f"{k}={v}" for k, v in cell.items()).replace("/", "_")


def _run_group(task):
    """One mobility simulation, then every sweep cell that shares it."""
    base, seed, cells, out, events = task
    mob_cfg = base.replace(rng_seed=seed)
    traj = simulate_mobility(mob_cfg, scenario_map(mob_cfg))
    rows = []
    for cell, cfg in cells:
        cfg = cfg.replace(rng_seed=seed)
        p = paired_run(cfg, traj=traj)
        row = p.summary_row()
        row.update(cell)
        if out is not None:
            write_paired_outputs(p, Path(out) / "cells" / f"{_cell_name(cell)}__seed={seed}", events=events)
        rows.append(row)
    return rows


def _grid_key(cfg: ScenarioConfig):
    d = cfg.to_dict()
    for k in NON_MOBILITY:
        d.pop(k)
    return json.dumps(d, sort_keys=True)


def cmd_sweep(args) -> int:
    started = time.time()
    base = _config(args)
    grid = parse_grid(args.grid)
    seeds = _parse_seeds(args.seeds)
    cells = []
    for combo in itertools.product(*grid.values()):
        cell = dict(zip(grid, combo))
        cells.append((cell, check_config(config_from_dict(cell, base=base))))
    groups: dict[str, list] = {}
    for cell, cfg in cells:
        groups.setdefault(_grid_key(cfg), []).append((cell, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(members[0][1], s, members, str(out), args.events)
             for members in groups.values() for s in seeds]
    if args.workers > 1:
        with Pool(args.workers) as pool:
            results = pool.map(_run_group, tasks)
    else:
        results = [_run_group(t) for t in tasks]
    # merge after the barrier, in grid order then seed order
    order = {_cell_name(c): i for i, (c, _) in enumerate(cells)}
    rows = sorted((r for rs in results for r in rs),
                  key=lambda r: (order[_cell_name({k: r[k] for k in grid})], r["seed"]))
    keys = list(grid)
    cols = tuple(keys) + tuple(c for c in ("seed", "R_sim", "pr_disaster", "disaster_fraction", "U_care",
                                           "U_nonre", "improvement", "drops_care", "drops_nonre")
                               if c not in keys)
    write_summary(out / "summary.csv", rows, cols)
    agg = aggregate(rows, keys)
    write_summary(out / "cells.csv", agg, tuple(agg[0].keys()))
    write_manifest(out, "sweep", base, ["summary.csv", "cells.csv"], started,
                   {"grid": grid, "seeds": seeds})
    sys.stdout.write((out / "cells.csv").read_text())
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        if "-" in text and "," not in text:
            a, b = text.split("-")
            return list(range(int(a), int(b) + 1))
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from exc
    if not seeds:
        raise ConfigError("--seeds: no seeds given")
    return seeds


# -- analysis wrappers ---------------------------------------------------------

def _truth(path) -> dict:
    """Ground truth per pair from a label CSV: similar iff the mean score is >= 3."""
    return {(r.item_a, r.item_b): sum(r.scores) >= 3 * len(r.scores) for r in read_labels(path)}


def cmd_redundancy(args) -> int:
    items = read_items(args.items)
    g = aggregate_labels(read_labels(args.labels), items)
    res = analyze(g, exact=True if args.exact else None)
    sys.stdout.write(redundancy_csv(res))
    return EXIT_OK


def _read_scores(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "item_a":
                continue
            out[(row[0].strip(), row[1].strip())] = float(row[2])
    return out


def cmd_roc(args) -> int:
    scores = _read_scores(args.scores)
    truth = _truth(args.labels)
    pairs = [p for p in scores if p in truth or p[::-1] in truth]
    if not pairs:
        raise ConfigError("roc: no scored pair has a label")
    labels = [truth.get(p, truth.get(p[::-1])) for p in pairs]
    ps = PairScoreSet(pairs, [scores[p] for p in pairs], labels)
    curve = roc_sweep(ps, higher_is_similar=not args.lower_is_similar)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fp_rate", "tp_rate"])
    for pt in curve.points:
        w.writerow([repr(pt.threshold), repr(pt.fp_rate), repr(pt.tp_rate)])
    w.writerow(["# auc", repr(curve.auc()), ""])
    if args.max_fp is not None or args.max_fn is not None:
        t = calibrate_threshold(ps, max_fp=args.max_fp, max_fn=args.max_fn,
                                higher_is_similar=not args.lower_is_similar)
        w.writerow(["# threshold", repr(t), ""])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _read_hashes(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "item_id":
                continue
            out[row[0].strip()] = int(row[1].strip(), 0)
    return out


def cmd_pipeline(args) -> int:
    truth = _truth(args.labels)
    gist = read_feature_csv(args.gist) if args.gist else None
    phash = _read_hashes(args.phash) if args.phash else None
    sift = read_sift_csv(args.sift) if args.sift else None
    pairs = build_pair_scores(truth, gist, phash, sift)
    if args.thresholds:
        try:
            tg, tp, ts = (float(v) for v in args.thresholds.split(","))
        except ValueError as exc:
            raise ConfigError("--thresholds expects gist,phash,sift") from exc
        th = Thresholds(tg, tp, ts)
    else:
        th = calibrate_pipeline(pairs, args.gist_fn, args.phash_fp, args.sift_fp)
    rows = pipeline_report(pairs, th, use_gist=gist is not None)
    sys.stdout.write(report_csv(rows, universe=f"{len(pairs)} labeled pairs"))
    print(f"# thresholds gist={th.gist!r} phash={th.phash!r} sift={th.sift!r}")
    return EXIT_OK


def cmd_phash(args) -> int:
    hashes = [(p, phash_compute(read_pgm(p))) for p in args.images]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["image", "phash"])
    for p, h in hashes:
        w.writerow([p, f"0x{int(h):016x}"])
    if len(hashes) > 1:
        w.writerow(["image_a", "image_b", "distance"])
        for (pa, ha), (pb, hb) in itertools.combinations(hashes, 2):
            w.writerow([pa, pb, 64 - phash_similarity(ha, hb)])
    return EXIT_OK


def cmd_chunk(args) -> int:
    blobs = [Path(p).read_bytes() for p in args.files]
    ratio = chunk_dedup_ratio(blobs, args.chunk_size)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["files", "chunk_size", "dedup_ratio"])
    w.writerow([len(blobs), args.chunk_size, f"{ratio:.6f}"])
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="care", description="Content-aware DTN redundancy elimination toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("--config", help="YAML scenario file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--seed", type=int, help="rng_seed override")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="paired CARE / plain-epidemic run")
    scenario(p)
    p.add_argument("--no-events", action="store_true", help="skip event-log CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid x seeds of paired runs")
    scenario(p)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2,...")
    p.add_argument("--seeds", default="1-5", help="e.g. 1-5 or 1,2,7")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--events", action="store_true", help="keep per-cell event logs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("redundancy", help="set-cover redundancy of a labeled corpus")
    p.add_argument("--labels", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--exact", action="store_true", help="force the exact cover solver")
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("roc", help="ROC sweep of pairwise scores")
    p.add_argument("--scores", required=True, help="CSV item_a,item_b,score")
    p.add_argument("--labels", required=True, help="label CSV item_a,item_b,score1,...")
    p.add_argument("--lower-is-similar", action="store_true")
    p.add_argument("--max-fp", type=float)
    p.add_argument("--max-fn", type=float)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("pipeline", help="staged GIST/pHash/SIFT evaluation")
    p.add_argument("--labels", required=True)
    p.add_argument("--gist", help="feature CSV item_id,v1..vk")
    p.add_argument("--phash", help="CSV item_id,hash (hex or decimal)")
    p.add_argument("--sift", help="CSV item_a,item_b,m,m_prime")
    p.add_argument("--thresholds", help="gist,phash,sift; calibrated from targets if omitted")
    p.add_argument("--gist-fn", type=float, default=0.30)
    p.add_argument("--phash-fp", type=float, default=0.01)
    p.add_argument("--sift-fp", type=float, default=0.01)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("phash", help="64-bit perceptual hashes of PGM images")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_phash)

    p = sub.add_parser("chunk", help="fixed-size chunk dedup ratio")
    p.add_argument("files", nargs="+")
    p.add_argument("--chunk-size", type=int, default=512)
    p.set_defaults(func=cmd_chunk)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LabelError, CalibrationError, MapError) as exc:
        print(f"care: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"care: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"care: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
