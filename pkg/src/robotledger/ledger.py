"""Simulated permissioned ledger.

Transactions follow execute-order-validate:

1. ``submit`` runs the contract against the committed world state, recording
   a read set of ``(key, version)`` pairs and a write set.
2. A single FIFO sequencer cuts blocks by size or timeout and feeds them to
   a deterministic server that commits ``service_rate`` transactions per
   second.  Commit time is ``service_start + base_latency``.
3. Each block is validated in order: a transaction commits only if every
   version it read is still current (MVCC); otherwise it is invalidated and
   its writes are dropped.  Every commit emits a :class:`CommitEvent`.

All times are virtual milliseconds taken from a shared :class:`VirtualClock`.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Iterator, Protocol, Sequence

from .errors import ValidationError
from .identity import Certificate, Membership

logger = logging.getLogger(__name__)


class VirtualClock:
    def __init__(self, now_ms: float = 0.0):
        self.now_ms = float(now_ms)

    def advance_to(self, t_ms: float) -> None:
        if t_ms < self.now_ms:
            raise ValueError(f"clock cannot move backwards ({t_ms} < {self.now_ms})")
        self.now_ms = float(t_ms)

    def advance(self, dt_ms: float) -> None:
        self.advance_to(self.now_ms + dt_ms)


@dataclass(frozen=True)
class OrderingConfig:
    batch_size: int = 1
    batch_timeout_ms: float = 5.0
    service_rate: float = 70.0
    base_latency_ms: float = 300.0

    def __post_init__(self):
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValidationError("batch_size must be an integer >= 1")
        if not self.service_rate > 0 or not math.isfinite(self.service_rate):
            raise ValidationError("service_rate must be > 0")
        if not self.base_latency_ms >= 0:
            raise ValidationError("base_latency_ms must be >= 0")
        if not self.batch_timeout_ms >= 0:
            raise ValidationError("batch_timeout_ms must be >= 0")

    @property
    def service_time_ms(self) -> float:
        return 1000.0 / self.service_rate


class TxStatus(str, Enum):
    SIMULATED = "simulated"
    COMMITTED = "committed"
    INVALIDATED = "invalidated"
    REJECTED = "rejected"


@dataclass
class Transaction:
    tx_id: str
    submitter: Certificate
    function: str
    args: tuple[str, ...]
    submit_ms: float
    read_set: list[tuple[str, int]] = field(default_factory=list)
    write_set: list[tuple[str, bytes]] = field(default_factory=list)
    appends: list[tuple[str, bytes]] = field(default_factory=list)
    status: TxStatus = TxStatus.SIMULATED
    commit_ms: float | None = None
    result: Any = None
    error: Exception | None = None
    block: int | None = None
    written_keys: tuple[str, ...] = ()
    sequences: tuple[int, ...] = ()

    def log_record(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "function": self.function,
            "submitter": self.submitter.subject_id,
            "status": self.status.value,
            "submit_ms": round(self.submit_ms, 3),
            "commit_ms": None if self.commit_ms is None else round(self.commit_ms, 3),
            "block": self.block,
        }


@dataclass(frozen=True)
class Block:
    height: int
    transactions: tuple[Transaction, ...]
    cut_reason: str  # "batch-size" | "timeout"
    cut_ms: float
    commit_ms: float


@dataclass(frozen=True)
class CommitEvent:
    tx_id: str
    block_height: int
    written_keys: tuple[str, ...]
    commit_ms: float


class WorldState:
    """Versioned key-value store.  Absent keys have version 0."""

    def __init__(self):
        self.entries: dict[str, tuple[bytes, int]] = {}
        self.sequences: dict[str, int] = {}

    def get(self, key: str) -> tuple[bytes, int] | None:
        return self.entries.get(key)

    def version(self, key: str) -> int:
        entry = self.entries.get(key)
        return 0 if entry is None else entry[1]

    def put(self, key: str, value: bytes) -> None:
        self.entries[key] = (bytes(value), self.version(key) + 1)

    def append(self, prefix: str, value: bytes) -> tuple[str, int]:
        seq = self.sequences.get(prefix, 0)
        self.sequences[prefix] = seq + 1
        key = f"{prefix}{seq}"
        self.put(key, value)
        return key, seq

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self.entries if k.startswith(prefix))

    def snapshot(self) -> tuple[dict[str, tuple[bytes, int]], dict[str, int]]:
        return dict(self.entries), dict(self.sequences)


class TxContext:
    """The view a contract function gets of the ledger during simulation."""

    def __init__(self, state: WorldState, tx: Transaction, membership: Membership):
        self._state = state
        self._tx = tx
        self.membership = membership

    @property
    def tx_id(self) -> str:
        return self._tx.tx_id

    @property
    def timestamp_ms(self) -> float:
        return self._tx.submit_ms

    @property
    def creator(self) -> Certificate:
        return self._tx.submitter

    def get_state(self, key: str) -> bytes | None:
        entry = self._state.get(key)
        self._tx.read_set.append((key, 0 if entry is None else entry[1]))
        return None if entry is None else entry[0]

    def put_state(self, key: str, value: bytes) -> None:
        self._tx.write_set.append((key, bytes(value)))

    def append_state(self, prefix: str, value: bytes) -> None:
        """Write ``value`` under ``prefix + <next sequence>``; the sequence is assigned at commit."""
        self._tx.appends.append((prefix, bytes(value)))


class Contract(Protocol):
    def invoke(self, ctx: TxContext, function: str, args: Sequence[str]) -> Any: ...


class EventStream:
    """Single-consumer queue of commit events matching a key prefix."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._queue: deque[CommitEvent] = deque()
        self._lock = threading.Lock()
        self.closed = False

    def matches(self, event: CommitEvent) -> bool:
        return any(k.startswith(self.prefix) for k in event.written_keys)

    def _push(self, event: CommitEvent) -> None:
        with self._lock:
            self._queue.append(event)

    def drain(self) -> list[CommitEvent]:
        with self._lock:
            out = list(self._queue)
            self._queue.clear()
        return out

    def __len__(self) -> int:
        return len(self._queue)

    def __iter__(self) -> Iterator[CommitEvent]:
        return iter(self.drain())


def validate_and_commit(block: Block, state: WorldState) -> list[TxStatus]:
    """Apply ``block`` to ``state`` in order under MVCC read-set validation."""
    statuses = []
    for tx in block.transactions:
        tx.block = block.height
        tx.commit_ms = block.commit_ms
        if any(state.version(key) != version for key, version in tx.read_set):
            tx.status = TxStatus.INVALIDATED
            statuses.append(tx.status)
            continue
        written = []
        for key, value in tx.write_set:
            state.put(key, value)
            written.append(key)
        seqs = []
        for prefix, value in tx.appends:
            key, seq = state.append(prefix, value)
            written.append(key)
            seqs.append(seq)
        tx.written_keys = tuple(dict.fromkeys(written))
        tx.sequences = tuple(seqs)
        tx.status = TxStatus.COMMITTED
        statuses.append(tx.status)
    return statuses


class Ledger:
    """One peer's world state plus the ordering/commit pipeline in front of it."""

    def __init__(
        self,
        contract: Contract,
        membership: Membership,
        config: OrderingConfig | None = None,
        clock: VirtualClock | None = None,
    ):
        self.contract = contract
        self.membership = membership
        self.config = config or OrderingConfig()
        self.clock = clock or VirtualClock()
        self.state = WorldState()
        self.transactions: dict[str, Transaction] = {}
        self.blocks: list[Block] = []
        self.events: list[CommitEvent] = []
        self._pending: list[Transaction] = []
        self._cut: deque[Block] = deque()
        self._server_free_ms = -math.inf
        self._next_height = 0
        self._counter = 0
        self._streams: list[EventStream] = []
        self._lock = threading.RLock()

    # -- submission -------------------------------------------------------

    def submit(self, function: str, args: Sequence[str], submitter: Certificate) -> str:
        """Simulate ``function(*args)`` as ``submitter`` and enqueue it for ordering.

        Raises AuthenticationError for certificates no known CA verifies.
        Contract failures do not raise: the transaction is marked rejected,
        the exception is kept on ``tx.error`` and nothing is ordered.
        """
        self.membership.authenticate(submitter)
        with self._lock:
            now = self.clock.now_ms
            self.run_ordering(now)
            self._counter += 1
            tx = Transaction(
                tx_id=f"tx{self._counter:07d}",
                submitter=submitter,
                function=function,
                args=tuple(str(a) for a in args),
                submit_ms=now,
            )
            self.transactions[tx.tx_id] = tx
            ctx = TxContext(self.state, tx, self.membership)
            try:
                tx.result = self.contract.invoke(ctx, function, tx.args)
            except Exception as exc:
                tx.status = TxStatus.REJECTED
                tx.error = exc
                tx.write_set.clear()
                tx.appends.clear()
                logger.debug("rejected %s %s: %s", tx.tx_id, function, exc)
                return tx.tx_id
            self._pending.append(tx)
            if len(self._pending) >= self.config.batch_size:
                self._cut_block(now, "batch-size")
            return tx.tx_id

    def transaction(self, tx_id: str) -> Transaction:
        return self.transactions[tx_id]

    # -- ordering and commit ---------------------------------------------

    def _cut_block(self, cut_ms: float, reason: str) -> None:
        txs = tuple(sorted(self._pending, key=lambda t: (t.submit_ms, t.tx_id)))
        self._pending = []
        start = max(cut_ms, self._server_free_ms)
        self._server_free_ms = start + len(txs) * self.config.service_time_ms
        block = Block(
            height=self._next_height,
            transactions=txs,
            cut_reason=reason,
            cut_ms=cut_ms,
            commit_ms=start + self.config.base_latency_ms,
        )
        self._next_height += 1
        self._cut.append(block)

    def run_ordering(self, until_ms: float | None = None) -> list[Block]:
        """Cut due blocks and commit every block whose commit time is <= ``until_ms``.

        ``until_ms`` defaults to the clock's current time; ``math.inf``
        drains the pipeline completely.
        """
        if until_ms is None:
            until_ms = self.clock.now_ms
        committed = []
        with self._lock:
            if self._pending:
                deadline = self._pending[0].submit_ms + self.config.batch_timeout_ms
                if deadline <= until_ms:
                    self._cut_block(deadline, "timeout")
            while self._cut and self._cut[0].commit_ms <= until_ms:
                block = self._cut.popleft()
                validate_and_commit(block, self.state)
                self.blocks.append(block)
                committed.append(block)
                for tx in block.transactions:
                    if tx.status is TxStatus.COMMITTED:
                        self._emit(CommitEvent(tx.tx_id, block.height, tx.written_keys, block.commit_ms))
        return committed

    def flush(self) -> list[Block]:
        return self.run_ordering(math.inf)

    @property
    def in_flight(self) -> int:
        return len(self._pending) + sum(len(b.transactions) for b in self._cut)

    def in_flight_transactions(self) -> list[Transaction]:
        return list(self._pending) + [tx for b in self._cut for tx in b.transactions]

    # -- reads and events ------------------------------------------------

    def read_state(self, key: str) -> tuple[bytes, int] | None:
        return self.state.get(key)

    def subscribe_events(self, prefix: str = "") -> EventStream:
        stream = EventStream(prefix)
        with self._lock:
            self._streams.append(stream)
        return stream

    def unsubscribe(self, stream: EventStream) -> None:
        with self._lock:
            stream.closed = True
            self._streams = [s for s in self._streams if s is not stream]

    def _emit(self, event: CommitEvent) -> None:
        self.events.append(event)
        for stream in self._streams:
            if stream.matches(event):
                stream._push(event)

    # -- export ----------------------------------------------------------

    def block_log_records(self) -> list[dict]:
        return [tx.log_record() for block in self.blocks for tx in block.transactions]

    def write_block_log(self, fh: IO[str]) -> None:
        for rec in self.block_log_records():
            fh.write(json.dumps(rec, sort_keys=False) + "\n")


def read_block_log(fh: IO[str]) -> list[dict]:
    records = []
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: {exc.msg}") from exc
    return records
