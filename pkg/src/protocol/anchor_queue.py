"""
Bounded FIFO of compressed anchors.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from src.codec import EncodedBlob
from src.exceptions import ProtocolViolation


@dataclass(frozen=True, eq=False)
class AnchorEntry:
    """
    One deployed anchor.

    `decoded` is what every client reconstructs from `blob`; `reference` is
    the same weights over uncompressed 32-bit transport, kept for the
    estimation-error diagnostics.
    """
    stamp: int
    blob: EncodedBlob
    decoded: np.ndarray = field(repr=False)
    reference: np.ndarray = field(repr=False, default=None)


class AnchorQueue:
    """
    The `capacity` most recent anchors, oldest first.

    Stamps are strictly increasing multiples of the deployment rate; an
    enqueue at capacity evicts the oldest entry.
    """

    def __init__(self, capacity: int, anchor_rate: int):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        if anchor_rate < 1:
            raise ValueError(f"anchor rate must be >= 1, got {anchor_rate}")
        self.capacity = int(capacity)
        self.anchor_rate = int(anchor_rate)
        self._entries = deque()

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def is_full(self) -> bool:
        return len(self._entries) == self.capacity

    @property
    def stamps(self) -> list:
        return [entry.stamp for entry in self._entries]

    def enqueue(self, entry: AnchorEntry):
        """Append an anchor; returns the evicted entry, if any."""
        if entry.stamp % self.anchor_rate != 0:
            raise ProtocolViolation(f"anchor stamp {entry.stamp} is not a multiple of K={self.anchor_rate}")
        if self._entries and entry.stamp <= self._entries[-1].stamp:
            raise ProtocolViolation(
                f"anchor stamp {entry.stamp} does not follow the newest stamp {self._entries[-1].stamp}"
            )
        evicted = self._entries.popleft() if self.is_full else None
        self._entries.append(entry)
        return evicted

    def top(self) -> AnchorEntry:
        """Newest anchor."""
        if not self._entries:
            raise ProtocolViolation("anchor queue is empty; no anchor has been deployed yet")
        return self._entries[-1]

    def oldest(self) -> AnchorEntry:
        if not self._entries:
            raise ProtocolViolation("anchor queue is empty; no anchor has been deployed yet")
        return self._entries[0]

    def newest_first(self) -> list:
        return list(reversed(self._entries))

    def __repr__(self):
        return f"AnchorQueue(capacity={self.capacity}, K={self.anchor_rate}, stamps={self.stamps})"
