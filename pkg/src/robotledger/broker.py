"""Topic broker over the ledger.

Publishing submits the contract's ``set`` function; every committed message
becomes an asset under ``msg/<robot>/<sequence>`` and subscribers are fed
from the ledger's commit events.  The broker adds no ordering of its own.
"""

from __future__ import annotations

import base64
import csv
import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .contract import RobotAsset, message_prefix, robot_key
from .errors import AuthorizationError, NotFoundError
from .identity import Certificate
from .ledger import EventStream, Ledger, TxStatus


@dataclass(frozen=True)
class TopicMessage:
    topic: str
    robot_id: str
    sequence: int
    publisher: str
    payload: bytes
    publish_ms: float
    deliver_ms: float
    tx_id: str

    @property
    def latency_ms(self) -> float:
        return self.deliver_ms - self.publish_ms


class Subscription:
    """Ordered, exactly-once delivery of one robot's committed messages."""

    def __init__(self, ledger: Ledger, robot_id: str, stream: EventStream):
        self.ledger = ledger
        self.robot_id = robot_id
        self._stream = stream
        self._prefix = message_prefix(robot_id)
        self.delivered: list[TopicMessage] = []

    def poll(self) -> list[TopicMessage]:
        """Return messages committed since the last poll, in commit order."""
        out = []
        for event in self._stream.drain():
            for key in event.written_keys:
                if not key.startswith(self._prefix):
                    continue
                value, _ = self.ledger.read_state(key)
                doc = json.loads(value)
                out.append(
                    TopicMessage(
                        topic=doc["topic"],
                        robot_id=doc["robot"],
                        sequence=int(key[len(self._prefix):]),
                        publisher=doc["publisher"],
                        payload=base64.b64decode(doc["payload"]),
                        publish_ms=doc["publish_ms"],
                        deliver_ms=event.commit_ms,
                        tx_id=event.tx_id,
                    )
                )
        self.delivered.extend(out)
        return out

    def close(self) -> None:
        self.ledger.unsubscribe(self._stream)

    def write_dump(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "publisher", "publish_ms", "deliver_ms", "payload_hex"])
        for m in self.delivered:
            w.writerow([m.sequence, m.publisher, f"{m.publish_ms:.3f}", f"{m.deliver_ms:.3f}", m.payload.hex()])


class Broker:
    def __init__(self, ledger: Ledger):
        self.ledger = ledger

    def robot(self, robot_id: str) -> RobotAsset:
        entry = self.ledger.read_state(robot_key(robot_id))
        if entry is None:
            raise NotFoundError(f"robot {robot_id!r} does not exist")
        return RobotAsset.from_json(entry[0])

    def publish(self, cert: Certificate, robot_id: str, payload: bytes) -> str:
        """Submit ``payload`` for ``robot_id``; contract rejections are re-raised."""
        tx_id = self.ledger.submit("set", [robot_id, base64.b64encode(payload).decode()], cert)
        tx = self.ledger.transaction(tx_id)
        if tx.status is TxStatus.REJECTED:
            raise tx.error
        return tx_id

    def subscribe(self, robot_id: str, subscriber: Certificate | None = None) -> Subscription:
        """Subscribe to messages for ``robot_id``.

        Robots with a ``subscribe_attribute`` (the localization service)
        only accept subscribers whose verified certificate carries it.
        """
        robot = self.robot(robot_id)
        if robot.subscribe_attribute:
            if subscriber is None or not self.ledger.membership.verify(subscriber) \
                    or robot.subscribe_attribute not in subscriber.attributes:
                raise AuthorizationError(f"subscribing to {robot_id!r} requires {robot.subscribe_attribute!r}")
        return Subscription(self.ledger, robot_id, self.ledger.subscribe_events(message_prefix(robot_id)))


@dataclass(frozen=True)
class Measurement:
    delivered_hz: float
    count: int
    p50_ms: float | None
    p95_ms: float | None
    p99_ms: float | None


def measure(messages, window_s: float, start_ms: float | None = None) -> Measurement:
    """Throughput and latency percentiles over ``[start, start + window)`` by delivery time.

    ``messages`` is a Subscription or an iterable of TopicMessage.  The
    window starts at the first delivery unless ``start_ms`` is given.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if isinstance(messages, Subscription):
        messages = messages.delivered
    messages = list(messages)
    if start_ms is None:
        start_ms = messages[0].deliver_ms if messages else 0.0
    end_ms = start_ms + window_s * 1000.0
    inside = [m for m in messages if start_ms <= m.deliver_ms < end_ms]
    if not inside:
        return Measurement(0.0, 0, None, None, None)
    lat = np.array([m.latency_ms for m in inside])
    p50, p95, p99 = (float(v) for v in np.percentile(lat, [50, 95, 99]))
    return Measurement(len(inside) / window_s, len(inside), p50, p95, p99)
