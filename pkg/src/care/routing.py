"""Node buffers and the epidemic / CARE admission rules.

Plain epidemic routing rejects only messages whose id is already buffered
and, when full, evicts from the head of the queue (oldest admission first).
CARE additionally asks a similarity detector whether the incoming message
matches anything already buffered and, if so, refuses it; this applies both
to a node's own fresh messages and to messages received from peers.
"""
from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .config import MessageRecord
from .detectors import NeverSimilar, OracleDetector


class Admit(str, enum.Enum):
    ACCEPTED = "accepted"
    ACCEPTED_WITH_DROPS = "accepted_with_drops"
    REJECTED_DUPLICATE = "rejected_duplicate"
    REJECTED_REDUNDANT = "rejected_redundant"
    REJECTED_FP = "rejected_fp"
    REJECTED_OVERSIZE = "rejected_oversize"


@dataclass
class AdmitResult:
    status: Admit
    dropped: list[MessageRecord] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.status in (Admit.ACCEPTED, Admit.ACCEPTED_WITH_DROPS)


class NodeBuffer:
    """FIFO message store with a byte capacity.

    ``log`` records every admission as (msg_id, serial) in order; a log entry
    is live while the message is buffered under that serial. Transfer
    sessions walk the log instead of re-scanning the queue.
    """

    def __init__(self, capacity: float = math.inf):
        self.capacity = capacity
        self.queue: OrderedDict[int, MessageRecord] = OrderedDict()
        self.occupied = 0
        self.clusters: dict[int, int] = {}
        self.serial: dict[int, int] = {}
        self.log: list[tuple[int, int]] = []
        self._arrays = None

    def __contains__(self, msg_id) -> bool:
        return msg_id in self.queue

    def __len__(self):
        return len(self.queue)

    def ids(self) -> list[int]:
        return list(self.queue)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._arrays is None:
            ids = np.fromiter(self.queue.keys(), dtype=np.int64, count=len(self.queue))
            cl = np.fromiter((m.cluster_id for m in self.queue.values()), dtype=np.int64,
                             count=len(self.queue))
            self._arrays = (ids, cl)
        return self._arrays

    def append(self, msg: MessageRecord) -> None:
        self.queue[msg.msg_id] = msg
        self.occupied += msg.size
        self.clusters[msg.cluster_id] = self.clusters.get(msg.cluster_id, 0) + 1
        s = len(self.log)
        self.serial[msg.msg_id] = s
        self.log.append((msg.msg_id, s))
        self._arrays = None

    def remove(self, msg_id: int) -> MessageRecord:
        msg = self.queue.pop(msg_id)
        self.occupied -= msg.size
        c = self.clusters[msg.cluster_id] - 1
        if c:
            self.clusters[msg.cluster_id] = c
        else:
            del self.clusters[msg.cluster_id]
        del self.serial[msg_id]
        self._arrays = None
        return msg

    def pop_head(self) -> MessageRecord:
        return self.remove(next(iter(self.queue)))

    def live(self, entry: tuple[int, int]) -> bool:
        return self.serial.get(entry[0]) == entry[1]


def admit_epidemic(buf: NodeBuffer, msg: MessageRecord) -> AdmitResult:
    if msg.msg_id in buf.queue:
        return AdmitResult(Admit.REJECTED_DUPLICATE)
    if msg.size > buf.capacity:
        return AdmitResult(Admit.REJECTED_OVERSIZE)
    dropped = []
    while buf.occupied + msg.size > buf.capacity:
        dropped.append(buf.pop_head())
    buf.append(msg)
    return AdmitResult(Admit.ACCEPTED_WITH_DROPS if dropped else Admit.ACCEPTED, dropped)


def care_check(buf: NodeBuffer, msg: MessageRecord, detector) -> Admit | None:
    """Detector verdict against the whole buffer; None means admissible."""
    if not len(buf):
        return None
    if isinstance(detector, OracleDetector) and detector.fp == 0.0 and detector.fn == 0.0:
        # perfect oracle: Similar iff the cluster is already present
        return Admit.REJECTED_REDUNDANT if msg.cluster_id in buf.clusters else None
    if isinstance(detector, NeverSimilar):
        return None
    ids, clusters = buf.arrays()
    similar, present = detector.scan(msg, ids, clusters)
    if not similar:
        return None
    return Admit.REJECTED_REDUNDANT if present else Admit.REJECTED_FP


def admit_care(buf: NodeBuffer, msg: MessageRecord, detector, stats: dict | None = None) -> AdmitResult:
    """Epidemic admission preceded by the content check.

    A rejection counts as redundant when the message's cluster was already
    buffered (no information lost) and as a false positive otherwise.
    """
    if msg.msg_id in buf.queue:
        return AdmitResult(Admit.REJECTED_DUPLICATE)
    verdict = care_check(buf, msg, detector)
    if verdict is not None:
        if stats is not None:
            stats[verdict.value] = stats.get(verdict.value, 0) + 1
        return AdmitResult(verdict)
    return admit_epidemic(buf, msg)


def summary_exchange(a: NodeBuffer, b: NodeBuffer) -> list[int]:
    """Ids held by ``a`` but not ``b``, in ``a``'s queue order."""
    return [mid for mid in a.queue if mid not in b.queue]


class Outcome(str, enum.Enum):
    IN_PROGRESS = "in-progress"
    DELIVERED = "delivered"
    ABORTED = "aborted"


@dataclass
class TransferSession:
    sender: int
    receiver: int
    msg: MessageRecord | None
    rate: float
    bytes_sent: float = 0.0
    cursor: int = 0           # position in the sender's admission log

    @property
    def remaining(self) -> float:
        return self.msg.size - self.bytes_sent if self.msg else 0.0


def transfer_tick(session: TransferSession, dt: float, contact_alive: bool = True) -> Outcome:
    """Advance one in-flight message by ``dt`` seconds of airtime."""
    if session.rate <= 0:
        raise ValueError("link rate must be positive")
    if not contact_alive:
        session.bytes_sent = 0.0
        return Outcome.ABORTED
    session.bytes_sent = min(session.msg.size, session.bytes_sent + session.rate * dt / 8.0)
    if session.bytes_sent >= session.msg.size:
        return Outcome.DELIVERED
    return Outcome.IN_PROGRESS
