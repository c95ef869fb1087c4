"""
Per-client token buckets for keyserver evaluations.

Each client certificate gets a bucket that starts full, holds one second of
refill and is debited by the number of points in a request. Requests that do
not fit are rejected with a retry-after hint instead of waiting.
"""
import threading
import time
from typing import Callable, Dict, Optional

from .errors import RateLimited


class TokenBucket:
    """Token bucket measured in windows"""

    def __init__(self, rate: float, capacity: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic):
        self.rate = float(rate)
        self.capacity = float(capacity) if capacity else self.rate
        self.clock = clock
        self.tokens = self.capacity
        self.last = clock()
        self._lock = threading.Lock()

    def _refill(self):
        now = self.clock()
        self.tokens = min(self.capacity, self.tokens + max(0.0, now - self.last) * self.rate)
        self.last = now

    def try_acquire(self, amount: float) -> float:
        """
        Debit ``amount`` tokens if available.

        Returns:
            0.0 on success, otherwise seconds until the request could fit
            (infinity if it never can)
        """
        with self._lock:
            self._refill()
            if amount <= self.tokens:
                self.tokens -= amount
                return 0.0
            if amount > self.capacity:
                return float('inf')
            return (amount - self.tokens) / self.rate

    def is_full(self) -> bool:
        """Whether the bucket has refilled, making it equal to a fresh one"""
        with self._lock:
            return self.tokens + max(0.0, self.clock() - self.last) * self.rate >= self.capacity


class ClientRateLimiter:
    """
    One bucket per client identity.

    Buckets that have refilled are dropped every ``sweep_interval`` seconds;
    a client coming back gets a fresh, equally full bucket.
    """

    def __init__(self, rate: float, capacity: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic, sweep_interval: float = 60.0):
        self.rate = rate
        self.capacity = capacity or rate
        self.clock = clock
        self.sweep_interval = sweep_interval
        self._buckets: Dict[str, TokenBucket] = {}
        self._last_sweep = clock()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._buckets)

    def _sweep(self):
        now = self.clock()
        if now - self._last_sweep < self.sweep_interval:
            return
        self._last_sweep = now
        self._buckets = {client: bucket for client, bucket in self._buckets.items() if not bucket.is_full()}

    def acquire(self, client_id: str, amount: int):
        with self._lock:
            self._sweep()
            bucket = self._buckets.get(client_id)
            if bucket is None:
                bucket = self._buckets[client_id] = TokenBucket(self.rate, self.capacity, self.clock)
        wait = bucket.try_acquire(amount)
        if wait:
            retry_after = None if wait == float('inf') else round(wait, 3)
            raise RateLimited(
                f"Rate limit of {self.rate:g} windows/s exceeded by a request of {amount}",
                retry_after=retry_after,
            )

    def describe(self) -> Dict:
        return {'rate': self.rate, 'capacity': self.capacity}
