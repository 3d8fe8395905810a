"""Stream generation and CSV serialization.

A stream is an ordered list of (t, user, value) events with t counting from
1, user ids counting from 1, and values in [0, 1].  Values are drawn i.i.d.
Bernoulli(mu); the user sequence comes from a pluggable ordering.  The file
format is a header-bearing CSV ``t,user,value`` with values written as
shortest round-trip decimals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from contmean.noise import spawn_rng

__all__ = [
    "ORDERING_KINDS",
    "OrderingSpec",
    "StreamEvent",
    "StreamParseError",
    "generate",
    "read_stream",
    "write_stream",
]

ORDERING_KINDS = ("contiguous", "round_robin", "uniform_random", "single_user_prefix", "from_file")

_HEADER = ["t", "user", "value"]


class StreamParseError(ValueError):
    """Malformed stream file; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class StreamEvent:
    t: int
    user: int
    value: float


@dataclass(frozen=True)
class OrderingSpec:
    """Which user contributes at each step.

    ``single_user_prefix`` has user 1 contribute ``prefix_len`` samples
    (default: its full cap) before anyone else; ``from_file`` replays the
    user column of an existing stream file.
    """

    kind: str
    prefix_len: int | None = None
    path: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ORDERING_KINDS:
            raise ValueError(f"unknown ordering kind {self.kind!r}; pick from {ORDERING_KINDS}")
        if self.kind == "from_file" and not self.path:
            raise ValueError("from_file ordering needs a path")


def _user_sequence(ordering: OrderingSpec, n: int, m: int, T: int, rng) -> list[int]:
    if ordering.kind == "contiguous":
        return [1 + i // m for i in range(T)]
    if ordering.kind == "round_robin":
        return [1 + i % n for i in range(T)]
    if ordering.kind == "uniform_random":
        remaining = {u: m for u in range(1, n + 1)}
        seq = []
        for _ in range(T):
            open_users = [u for u, r in remaining.items() if r > 0]
            u = int(open_users[rng.integers(len(open_users))])
            remaining[u] -= 1
            seq.append(u)
        return seq
    if ordering.kind == "single_user_prefix":
        prefix = min(ordering.prefix_len or m, m, T)
        seq = [1] * prefix
        others = [u for u in range(2, n + 1) for _ in range(m)]
        seq.extend(others[: T - prefix])
        if len(seq) < T:
            raise ValueError("single_user_prefix ordering cannot reach the requested length")
        return seq
    if ordering.kind == "from_file":
        events = read_stream(ordering.path)
        if len(events) < T:
            raise ValueError(f"{ordering.path} holds {len(events)} events, need {T}")
        return [ev.user for ev in events[:T]]
    raise AssertionError(ordering.kind)


def generate(
    mu: float, n: int, m: int, T: int, ordering: OrderingSpec, seed: int
) -> list[StreamEvent]:
    """Draw a Bernoulli(mu) stream of length T under the given ordering."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    if T > n * m:
        raise ValueError(f"infeasible ordering: T={T} exceeds n*m={n * m}")
    rng = spawn_rng(seed, 0)
    users = _user_sequence(ordering, n, m, T, rng)
    counts: dict[int, int] = {}
    for u in users:
        counts[u] = counts.get(u, 0) + 1
        if counts[u] > m:
            raise ValueError(f"ordering gives user {u} more than m={m} samples")
    values = (rng.random(T) < mu).astype(float)
    return [StreamEvent(t=i + 1, user=users[i], value=float(values[i])) for i in range(T)]


def write_stream(events: list[StreamEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for ev in events:
            writer.writerow([ev.t, ev.user, repr(ev.value)])


def read_stream(path) -> list[StreamEvent]:
    events: list[StreamEvent] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        return []
    if rows[0] != _HEADER:
        raise StreamParseError(1, f"expected header {','.join(_HEADER)!r}, got {rows[0]!r}")
    prev_t = 0
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise StreamParseError(line_no, f"expected 3 fields, got {len(row)}")
        try:
            t, user, value = int(row[0]), int(row[1]), float(row[2])
        except ValueError as exc:
            raise StreamParseError(line_no, str(exc)) from exc
        if t <= prev_t:
            raise StreamParseError(line_no, f"t={t} does not increase past {prev_t}")
        if user < 1:
            raise StreamParseError(line_no, f"user ids are 1-based, got {user}")
        if not 0.0 <= value <= 1.0:
            raise StreamParseError(line_no, f"value {value} outside [0, 1]")
        events.append(StreamEvent(t=t, user=user, value=value))
        prev_t = t
    return events
