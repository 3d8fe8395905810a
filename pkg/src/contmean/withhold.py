"""Per-user exponential withhold-release scheduling.

A user's samples are released in dyadic bursts: the 1st and 2nd samples are
released immediately, then the block (3,4] when the 4th arrives, (4,8] when
the 8th arrives, and so on.  A release fires exactly when the user's count
hits a power of two, and the released block is the second half of the
user's samples so far.  At any time at least half of all samples seen have
been released, whatever the user ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["ReleaseDecision", "UserLedger"]


@dataclass(frozen=True)
class ReleaseDecision:
    """Outcome of one arriving sample: withhold, or release a dyadic block.

    On a release at level ``level`` the block covers ``block_size`` =
    2^max(level-1, 0) samples and ``block_sum`` is their raw (untruncated)
    sum.  On a withhold both are None.
    """

    released: bool
    level: int | None = None
    block_sum: float | None = None
    block_size: int | None = None


_WITHHOLD = ReleaseDecision(released=False)


class UserLedger:
    """Tracks per-user sample counts and the values withheld since each
    user's last release.  Single-owner; not thread-safe."""

    def __init__(self) -> None:
        self.counts: dict[int, int] = {}
        self.pending: dict[int, list[float]] = {}
        self._seen = 0
        self._pending_total = 0

    def on_sample(self, user_id: int, value: float) -> ReleaseDecision:
        """Record one sample; release iff the user's count becomes 2^level."""
        if not math.isfinite(value):
            raise ValueError(f"sample value must be finite, got {value}")
        count = self.counts.get(user_id, 0) + 1
        self.counts[user_id] = count
        self._seen += 1
        if count & (count - 1):  # not a power of two: withhold
            self.pending.setdefault(user_id, []).append(value)
            self._pending_total += 1
            return _WITHHOLD
        level = count.bit_length() - 1
        held = self.pending.pop(user_id, [])
        self._pending_total -= len(held)
        block = held + [value] if level >= 1 else [value]
        return ReleaseDecision(
            released=True,
            level=level,
            block_sum=math.fsum(block),
            block_size=1 << max(level - 1, 0),
        )

    def released_info_count(self) -> int:
        """Number of samples whose information has been released so far."""
        return self._seen - self._pending_total

    def pending_count(self) -> int:
        """Samples currently withheld across all users."""
        return self._pending_total

    def samples_seen(self) -> int:
        return self._seen

    def count_of(self, user_id: int) -> int:
        return self.counts.get(user_id, 0)

    def max_count(self) -> int:
        return max(self.counts.values(), default=0)
