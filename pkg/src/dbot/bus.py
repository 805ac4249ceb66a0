"""In-process publish/subscribe bus used by experts to share findings.

Publishing never blocks on subscribers: a message is appended to each
matching subscription's queue under one lock, which gives every subscriber
the same per-publisher order and exactly-once delivery.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

BROADCAST = "findings"


class PublishAfterClose(RuntimeError):
    pass


@dataclass(frozen=True)
class BusMessage:
    seq: int
    publisher: str
    topic: str
    payload: str
    turn: int = 0


class Subscription:
    def __init__(self, subscriber: str, topics: Iterable[str]):
        self.subscriber = subscriber
        self.topics = frozenset(topics)
        self._queue: deque[BusMessage] = deque()
        self._lock = threading.Lock()

    def _put(self, msg: BusMessage) -> None:
        with self._lock:
            self._queue.append(msg)

    def drain(self) -> list[BusMessage]:
        """Take every message delivered since the last drain, oldest first."""
        with self._lock:
            out = list(self._queue)
            self._queue.clear()
        return out

    def __len__(self):
        with self._lock:
            return len(self._queue)


class MessageBus:
    def __init__(self):
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._seq: dict[str, int] = {}
        self.log: list[BusMessage] = []
        self.closed = False

    def subscribe(self, subscriber: str, topics: Iterable[str]) -> Subscription:
        sub = Subscription(subscriber, topics)
        with self._lock:
            self._subs.append(sub)
        return sub

    def publish(self, publisher: str, topic: str, payload: str, turn: int = 0) -> BusMessage:
        with self._lock:
            if self.closed:
                raise PublishAfterClose(f"{publisher} published to {topic!r} after the bus closed")
            seq = self._seq.get(publisher, 0) + 1
            self._seq[publisher] = seq
            msg = BusMessage(seq, publisher, topic, payload, turn)
            self.log.append(msg)
            for sub in self._subs:
                if topic in sub.topics and sub.subscriber != publisher:
                    sub._put(msg)
        return msg

    def close(self) -> None:
        with self._lock:
            self.closed = True

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for msg in self.log:
                fh.write(json.dumps(asdict(msg), sort_keys=True) + "\n")
