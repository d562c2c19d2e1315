"""Image similarity scores, the simulator's oracle detector, and the staged pipeline.

Three scores are supported:

* pHash: 64-bit DCT fingerprint computed from pixels; score = 64 - Hamming distance.
* GIST: Pearson correlation of two supplied scene descriptors.
* SIFT: m'/m from supplied keypoint match counts (m matches, m' surviving
  geometric refinement); undefined when m <= 8.

The pipeline runs a metadata gate, then GIST (can only say NotSimilar), then
pHash (can only say Similar), then SIFT (final say), charging each stage's
normalized cost only when it actually runs.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.fft import dctn

from . import kernels

HASH_BITS = 64
SIFT_MIN_MATCHES = 8
EARTH_RADIUS = 6_371_008.8


class Verdict(str, enum.Enum):
    SIMILAR = "Similar"
    NOT_SIMILAR = "NotSimilar"
    UNCERTAIN = "Uncertain"


class ScoreUndefined(ValueError):
    """A similarity score is mathematically undefined for the given inputs."""


# -- pHash -------------------------------------------------------------------

class PHash64(int):
    """64-bit perceptual hash; bit i corresponds to DCT coefficient i (row-major 8x8)."""

    def __new__(cls, value):
        value = int(value)
        if not 0 <= value < 1 << HASH_BITS:
            raise ValueError("hash must fit in 64 bits")
        return super().__new__(cls, value)

    def bits(self) -> list[int]:
        return [(self >> i) & 1 for i in range(HASH_BITS)]

    def __repr__(self):
        return f"PHash64(0x{int(self):016x})"

    def __str__(self):
        return f"{int(self):016x}"


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row k averages input samples over [k, k+1) * n_in / n_out, by overlap."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.arange(n_in)
    w = np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :])
    w = np.clip(w, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def resample_box(image: np.ndarray, size: int = 32) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return _box_weights(img.shape[0], size) @ img @ _box_weights(img.shape[1], size).T


def _median(values: np.ndarray) -> float:
    s = np.sort(values)
    n = len(s)
    mid = n // 2
    return float(s[mid]) if n % 2 else float((s[mid - 1] + s[mid]) / 2.0)


def phash_compute(image) -> PHash64:
    """Perceptual hash of a 2-D grayscale intensity matrix (H x W, both >= 8)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 8 or img.shape[1] < 8:
        raise ValueError(f"image must be at least 8x8, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or np.any(img < 0):
        raise ValueError("intensities must be finite and non-negative")
    small = resample_box(img)
    spread = float(small.max() - small.min())
    if spread == 0.0:
        return PHash64(0)
    small = small - small.mean()
    block = dctn(small, type=2, norm="ortho")[:8, :8].ravel()
    # round-off from resampling a flat region must not masquerade as signal
    tol = 1e-9 * spread * 32
    block[np.abs(block) <= tol] = 0.0
    ac = block[1:]
    med = _median(ac)
    value = 0
    for i, c in enumerate(ac, start=1):
        # same for ties with the median: equal in exact arithmetic means "not above"
        if c > med + tol:
            value |= 1 << i
    return PHash64(value)


def phash_similarity(a: int, b: int) -> int:
    return HASH_BITS - bin((int(a) ^ int(b)) & ((1 << HASH_BITS) - 1)).count("1")


def phash_similarity_matrix(a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    """All-pairs S_ph between two hash lists (compiled popcount when available)."""
    ha = np.array([int(x) for x in a], dtype=np.uint64)
    hb = np.array([int(x) for x in b], dtype=np.uint64)
    return HASH_BITS - kernels.hamming_matrix(ha, hb)


# -- PGM I/O -----------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, pos: int):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) 8-bit PGM into an H x W float array."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval={maxval})")
    if magic == b"P5":
        pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    else:
        toks, _ = _pgm_tokens(data, w * h, pos)
        pix = np.array([int(t) for t in toks], dtype=np.uint8)
    return pix.reshape(h, w).astype(np.float64)


def write_pgm(path: str | Path, image) -> None:
    img = np.asarray(image)
    if img.min() < 0 or img.max() > 255:
        raise ValueError("PGM intensities must lie in 0..255")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.rint(img).astype(np.uint8).tobytes())


# -- GIST / SIFT -------------------------------------------------------------

def gist_similarity(v1, v2) -> float:
    a = np.asarray(v1, dtype=np.float64)
    b = np.asarray(v2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("GIST vectors must be 1-D, equal length, length >= 2")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("GIST vectors must be finite")
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if sa == 0.0 or sb == 0.0:
        raise ScoreUndefined("GIST similarity undefined for a constant vector")
    return float(np.clip((a @ b) / (sa * sb), -1.0, 1.0))


def sift_similarity(m_matched: int, m_refined: int) -> float | None:
    """m'/m, or None when too few matches (m <= 8) to decide."""
    if m_refined < 0 or m_matched < 0:
        raise ValueError("match counts must be non-negative")
    if m_refined > m_matched:
        raise ValueError(f"refined matches {m_refined} exceed matches {m_matched}")
    if m_matched <= SIFT_MIN_MATCHES:
        return None
    return m_refined / m_matched


# -- oracle detector ---------------------------------------------------------

class OracleDetector:
    """Ground-truth detector corrupted by deterministic FP/FN errors.

    ``decide`` judges one pair; its error draw is a hash of (seed, unordered
    msg_id pair), so every node reaches the same verdict for the same pair.

    ``scan`` judges a message against a whole buffer. With ``scope="message"``
    one FP/FN draw per incoming message decides the buffer check (keyed by
    its msg_id, so again identical everywhere): a message whose cluster is
    absent is flagged with probability ``fp`` however large the buffer is.
    With ``scope="pair"`` every buffered message gets its own pairwise draw
    and any Similar verdict flags the message, so the effective rate grows
    with buffer occupancy.
    """

    SCOPES = ("message", "pair")

    def __init__(self, fp: float = 0.0, fn: float = 0.0, seed: int = 0, scope: str = "message"):
        if not (0.0 <= fp <= 1.0 and 0.0 <= fn <= 1.0):
            raise ValueError("fp and fn must be probabilities")
        if scope not in self.SCOPES:
            raise ValueError(f"unknown oracle scope {scope!r}")
        self.fp = float(fp)
        self.fn = float(fn)
        self.seed = int(seed) & ((1 << 64) - 1)
        self.scope = scope

    def decide(self, a, b) -> Verdict:
        u = kernels.pair_uniform(self.seed, int(a.msg_id), int(b.msg_id))
        if a.cluster_id == b.cluster_id:
            return Verdict.NOT_SIMILAR if u < self.fn else Verdict.SIMILAR
        return Verdict.SIMILAR if u < self.fp else Verdict.NOT_SIMILAR

    def message_draws(self, msg_id: int) -> tuple[float, float]:
        """Independent (fp, fn) uniforms for one message's buffer checks."""
        mid = int(msg_id)
        return (kernels.pair_uniform(self.seed, mid, mid),
                kernels.pair_uniform(self.seed ^ _FN_STREAM, mid, mid))

    def scan(self, msg, ids: np.ndarray, clusters: np.ndarray) -> tuple[bool, bool]:
        """(buffer check says Similar, msg's cluster already buffered)."""
        if self.scope == "pair":
            return kernels.oracle_scan(msg.msg_id, msg.cluster_id, ids, clusters,
                                       self.fp, self.fn, self.seed)
        present = bool(np.any(np.asarray(clusters) == msg.cluster_id))
        if len(ids) == 0:
            return False, present
        u_fp, u_fn = self.message_draws(msg.msg_id)
        if present:
            return not u_fn < self.fn, True
        return u_fp < self.fp, False


_FN_STREAM = 0x5DEECE66DA3B1F27


class NeverSimilar:
    """Detector that never flags anything; CARE degenerates to plain epidemic."""

    def decide(self, a, b) -> Verdict:
        return Verdict.NOT_SIMILAR

    def scan(self, msg, ids, clusters) -> tuple[bool, bool]:
        return False, bool(np.any(np.asarray(clusters) == msg.cluster_id))


def oracle_decide(a, b, fp: float, fn: float, seed: int) -> Verdict:
    return OracleDetector(fp, fn, seed).decide(a, b)


# -- pipeline ----------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    c_phash: float = 1.0
    c_gist: float = 50.0
    c_sift: float = 150.0

    def __post_init__(self):
        if min(self.c_phash, self.c_gist, self.c_sift) <= 0:
            raise ValueError("stage costs must be positive")


@dataclass(frozen=True)
class Thresholds:
    gist: float
    phash: float
    sift: float


@dataclass(frozen=True)
class Gates:
    max_distance: float = 100.0
    max_age: float = 3600.0


@dataclass
class ItemMeta:
    item_id: object
    geo: tuple[float, float] | None = None
    timestamp: float | None = None
    phash: int | None = None
    gist: Sequence[float] | None = None
    sift: dict = field(default_factory=dict)  # other item_id -> (m, m')


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    stage: str
    cost_units: float = 0.0
    stages_run: tuple[str, ...] = ()


class PipelineResult(NamedTuple):
    per_item: list[Decision]
    aggregate: Decision
    cost_units: float


def haversine(p, q) -> float:
    lat1, lon1 = map(math.radians, p)
    lat2, lon2 = map(math.radians, q)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def stage_decide(s_gist: float | None, s_ph: float | None, sift: tuple[int, int] | None,
                 th: Thresholds, cost: CostModel = CostModel(), use_gist: bool = True) -> Decision:
    """Pipeline verdict for one pair from its (possibly missing) stage scores.

    ``use_gist=False`` replaces the GIST stage by one that always answers
    Uncertain at no cost.
    """
    spent = 0.0
    ran = []
    if use_gist and s_gist is not None:
        ran.append("gist")
        spent += cost.c_gist
        if s_gist < th.gist:
            return Decision(Verdict.NOT_SIMILAR, "gist", spent, tuple(ran))
    if s_ph is not None:
        ran.append("phash")
        spent += cost.c_phash
        if s_ph > th.phash:
            return Decision(Verdict.SIMILAR, "phash", spent, tuple(ran))
    if sift is not None:
        ran.append("sift")
        spent += cost.c_sift
        s = sift_similarity(*sift)
        verdict = Verdict.SIMILAR if s is not None and s > th.sift else Verdict.NOT_SIMILAR
        return Decision(verdict, "sift", spent, tuple(ran))
    # nothing left to consult; a full pipeline never leaves a pair Uncertain
    return Decision(Verdict.NOT_SIMILAR, "exhausted", spent, tuple(ran))


def _sift_counts(a: ItemMeta, b: ItemMeta):
    if b.item_id in a.sift:
        return tuple(a.sift[b.item_id])
    if a.item_id in b.sift:
        return tuple(b.sift[a.item_id])
    return None


def pipeline_decide(candidate: ItemMeta, buffered: Sequence[ItemMeta], thresholds: Thresholds,
                    gates: Gates = Gates(), cost: CostModel = CostModel()) -> PipelineResult:
    per_item = []
    for other in buffered:
        if candidate.geo is not None and other.geo is not None \
                and haversine(candidate.geo, other.geo) > gates.max_distance:
            per_item.append(Decision(Verdict.NOT_SIMILAR, "metadata"))
            continue
        if candidate.timestamp is not None and other.timestamp is not None \
                and abs(candidate.timestamp - other.timestamp) > gates.max_age:
            per_item.append(Decision(Verdict.NOT_SIMILAR, "metadata"))
            continue
        s_gist = None
        if candidate.gist is not None and other.gist is not None:
            try:
                s_gist = gist_similarity(candidate.gist, other.gist)
            except ScoreUndefined:
                s_gist = None
        s_ph = None
        if candidate.phash is not None and other.phash is not None:
            s_ph = phash_similarity(candidate.phash, other.phash)
        per_item.append(stage_decide(s_gist, s_ph, _sift_counts(candidate, other), thresholds, cost))
    total = sum(d.cost_units for d in per_item)
    hits = [d for d in per_item if d.verdict == Verdict.SIMILAR]
    if hits:
        aggregate = Decision(Verdict.SIMILAR, hits[0].stage, total)
    else:
        last = per_item[-1].stage if per_item else "empty"
        aggregate = Decision(Verdict.NOT_SIMILAR, last, total)
    return PipelineResult(per_item, aggregate, total)


def stage_counts(decisions: Sequence[Decision]) -> tuple[int, int, int]:
    """(N1, N2, N3): comparisons that ran GIST, pHash and SIFT respectively."""
    n = [0, 0, 0]
    for d in decisions:
        for k, name in enumerate(("gist", "phash", "sift")):
            if name in d.stages_run:
                n[k] += 1
    return n[0], n[1], n[2]


def pipeline_avg_cost(n1: int, n2: int, n3: int, cost: CostModel = CostModel()) -> float:
    """Mean normalized cost per comparison with stage order GIST, pHash, SIFT."""
    if n1 <= 0:
        raise ValueError("N1 must be positive")
    if not n1 >= n2 >= n3 >= 0:
        raise ValueError("stage counts must satisfy N1 >= N2 >= N3 >= 0")
    return (n1 * cost.c_gist + n2 * cost.c_phash + n3 * cost.c_sift) / n1


# -- feature files -----------------------------------------------------------

def _rows(path):
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and "".join(row).strip():
                yield [c.strip() for c in row]


def _is_header(row, first):
    return row[0] == first


def read_feature_csv(path) -> dict[str, np.ndarray]:
    """``item_id,v1,...,vk`` rows."""
    out = {}
    for row in _rows(path):
        if _is_header(row, "item_id"):
            continue
        out[row[0]] = np.array([float(v) for v in row[1:]])
    return out


def read_sift_csv(path) -> dict[tuple[str, str], tuple[int, int]]:
    """``item_a,item_b,m,m_prime`` rows keyed by the (item_a, item_b) pair."""
    out = {}
    for row in _rows(path):
        if _is_header(row, "item_a"):
            continue
        out[(row[0], row[1])] = (int(row[2]), int(row[3]))
    return out


def read_metadata_csv(path) -> dict[str, tuple[tuple[float, float] | None, float | None]]:
    """``item_id,lat,lon,timestamp``; blank fields mean missing."""
    out = {}
    for row in _rows(path):
        if _is_header(row, "item_id"):
            continue
        row = row + [""] * (4 - len(row))
        geo = (float(row[1]), float(row[2])) if row[1] and row[2] else None
        ts = float(row[3]) if row[3] else None
        out[row[0]] = (geo, ts)
    return out
