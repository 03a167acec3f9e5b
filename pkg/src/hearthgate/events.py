"""
In-process event bus behind the server-push stream.

Every event gets a monotonically increasing sequence number and lands in a
replay ring buffer, so a reconnecting client that presents its last-seen
sequence resumes with no gaps (as long as the gap fits the buffer).
Fan-out uses one unbounded queue per subscriber; emitting never blocks on
slow consumers.
"""

from __future__ import annotations

import json
import queue
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterator


@dataclass(frozen=True)
class Event:
    seq: int
    type: str
    data: dict

    def to_sse(self) -> str:
        payload = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return f"id: {self.seq}\nevent: {self.type}\ndata: {payload}\n\n"


class Subscription:
    def __init__(self, bus: "EventBus", q: "queue.Queue[Event]"):
        self._bus = bus
        self._queue = q
        self.closed = False

    def get(self, timeout: float | None = None) -> Event | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._bus._unsubscribe(self._queue)

    def __enter__(self) -> "Subscription":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __iter__(self) -> Iterator[Event]:
        while True:
            event = self.get(timeout=None)
            if event is not None:
                yield event


class EventBus:
    def __init__(self, buffer_size: int = 65536):
        self._lock = threading.Lock()
        self._seq = 0
        self._buffer: deque[Event] = deque(maxlen=buffer_size)
        self._subscribers: list[queue.Queue[Event]] = []

    def emit(self, event_type: str, data: dict) -> Event:
        with self._lock:
            self._seq += 1
            event = Event(seq=self._seq, type=event_type, data=data)
            self._buffer.append(event)
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(event)
        return event

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self._seq

    def events_since(self, seq: int) -> list[Event]:
        with self._lock:
            return [e for e in self._buffer if e.seq > seq]

    def subscribe(self, since: int | None = None) -> Subscription:
        """
        Register a subscriber. With `since`, buffered events after that
        sequence are replayed first; registration and replay are atomic, so
        nothing between them is missed.
        """
        q: queue.Queue[Event] = queue.Queue()
        with self._lock:
            if since is not None:
                for event in self._buffer:
                    if event.seq > since:
                        q.put(event)
            self._subscribers.append(q)
        return Subscription(self, q)

    def _unsubscribe(self, q: "queue.Queue[Event]") -> None:
        with self._lock:
            try:
                self._subscribers.remove(q)
            except ValueError:
                pass
