"""Capacity-bounded LRU cache with per-entry TTL expiry."""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from typing import Any, Callable, Optional


class LruTtlCache:
    """Thread-safe strict-LRU cache; expired entries are treated as absent.

    get() refreshes recency; put() evicts the least recently used entry once
    the capacity is exceeded. A ttl of None never expires.
    """

    def __init__(self, capacity: int, ttl_s: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.default_ttl_s = ttl_s
        self._clock = clock
        self._entries: OrderedDict[Any, tuple[Any, Optional[float]]] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def get(self, key):
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
                return None
            value, expires_at = entry
            if expires_at is not None and self._clock() >= expires_at:
                del self._entries[key]
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return value

    def put(self, key, value, ttl_s: Optional[float] = None) -> None:
        ttl = self.default_ttl_s if ttl_s is None else ttl_s
        expires_at = None if ttl is None else self._clock() + ttl
        with self._lock:
            if key in self._entries:
                del self._entries[key]
            self._entries[key] = (value, expires_at)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
