"""Flow model: unidirectional 5-tuple keys, TCP/UDP payload reassembly, periods.

A flow is one direction of a 5-tuple; the reverse direction is a separate
flow. Flow payloads never cross a capture-period boundary: a flow spanning
the boundary is split into two payload records that share the key.
"""

from __future__ import annotations

import enum
import ipaddress
import math
from bisect import bisect_left
from dataclasses import dataclass, field

_V4_PREFIX = b"\x00" * 10 + b"\xff\xff"


class Protocol(enum.IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True, order=False)
class FlowKey:
    """Unidirectional flow identity."""

    src_addr: ipaddress.IPv4Address | ipaddress.IPv6Address
    dst_addr: ipaddress.IPv4Address | ipaddress.IPv6Address
    src_port: int
    dst_port: int
    protocol: Protocol

    def __post_init__(self):
        if not (0 <= self.src_port <= 0xFFFF and 0 <= self.dst_port <= 0xFFFF):
            raise ValueError("ports must fit in 16 bits")
        if self.protocol not in (Protocol.TCP, Protocol.UDP):
            raise ValueError("only TCP and UDP flows are tracked")

    def sort_key(self) -> tuple:
        return (pack_addr16(self.src_addr), pack_addr16(self.dst_addr),
                self.src_port, self.dst_port, int(self.protocol))

    def packed(self) -> bytes:
        """Canonical 37-byte form used for hashing and storage."""
        return (pack_addr16(self.src_addr) + pack_addr16(self.dst_addr)
                + self.src_port.to_bytes(2, "little") + self.dst_port.to_bytes(2, "little")
                + bytes([int(self.protocol)]))

    def __str__(self) -> str:
        return (f"{self.src_addr}:{self.src_port}->{self.dst_addr}:{self.dst_port}"
                f"/{self.protocol.name}")


def pack_addr16(addr) -> bytes:
    """16-byte address form; IPv4 stored as a v4-mapped IPv6 address."""
    packed = addr.packed
    return packed if len(packed) == 16 else _V4_PREFIX + packed


def unpack_addr16(data: bytes):
    if data[:12] == _V4_PREFIX:
        return ipaddress.IPv4Address(data[12:])
    return ipaddress.IPv6Address(data)


@dataclass
class PacketFragment:
    """One packet's application payload under its flow key."""

    key: FlowKey
    timestamp: float
    payload: bytes
    tcp_seq: int | None = None


@dataclass
class FlowPayload:
    """Reassembled payload bytes of one flow within one capture period."""

    key: FlowKey
    period_id: int
    data: bytes
    first_seen: float
    last_seen: float
    gap_count: int = 0


@dataclass(frozen=True)
class CapturePeriod:
    period_id: int
    start_time: float
    end_time: float
    flow_count: int


def _seq_diff(a: int, b: int) -> int:
    """Signed 32-bit sequence-number difference a-b."""
    return ((a - b + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def reassemble_flow(fragments: list[PacketFragment], period_id: int = 0) -> FlowPayload:
    """Merge one flow's packet payloads into a byte stream.

    TCP fragments are placed by unwrapped sequence number; byte ranges written
    first win, and unresolved gaps are closed up (never zero-filled) with the
    gap count recorded. UDP fragments concatenate in capture order.
    """
    if not fragments:
        raise ValueError("no fragments to reassemble")
    key = fragments[0].key
    if any(f.key != key for f in fragments):
        raise ValueError("fragments belong to different flows")
    first_seen = min(f.timestamp for f in fragments)
    last_seen = max(f.timestamp for f in fragments)

    if key.protocol is Protocol.UDP:
        data = b"".join(f.payload for f in fragments)
        return FlowPayload(key, period_id, data, first_seen, last_seen, gap_count=0)

    # Unwrap 32-bit sequence numbers into stream positions, tolerating
    # wraparound and local reordering.
    positions = []
    prev_seq = fragments[0].tcp_seq or 0
    prev_pos = 0
    for f in fragments:
        seq = f.tcp_seq or 0
        pos = prev_pos + _seq_diff(seq, prev_seq)
        positions.append(pos)
        prev_pos, prev_seq = pos, seq
    base = min(positions)
    positions = [p - base for p in positions]

    covered: list[tuple[int, int]] = []  # disjoint, sorted [start, end)
    pieces: list[tuple[int, bytes]] = []
    for pos, frag in zip(positions, fragments):
        s, e = pos, pos + len(frag.payload)
        if s == e:
            continue
        i = bisect_left(covered, (s,)) if covered else 0
        if i > 0 and covered[i - 1][1] > s:
            i -= 1
        cursor = s
        while cursor < e:
            if i < len(covered) and covered[i][0] < e:
                cs, ce = covered[i]
                if cs > cursor:
                    pieces.append((cursor, frag.payload[cursor - s : cs - s]))
                cursor = max(cursor, ce)
                i += 1
            else:
                pieces.append((cursor, frag.payload[cursor - s : e - s]))
                cursor = e
        # merge [s, e) into the covered set
        lo = bisect_left(covered, (s,))
        if lo > 0 and covered[lo - 1][1] >= s:
            lo -= 1
        hi = lo
        ns, ne = s, e
        while hi < len(covered) and covered[hi][0] <= ne:
            ns = min(ns, covered[hi][0])
            ne = max(ne, covered[hi][1])
            hi += 1
        covered[lo:hi] = [(ns, ne)]

    pieces.sort(key=lambda p: p[0])
    data = b"".join(p[1] for p in pieces)
    gaps = max(0, len(covered) - 1)
    return FlowPayload(key, period_id, data, first_seen, last_seen, gap_count=gaps)


@dataclass
class _OpenFlow:
    fragments: list[PacketFragment] = field(default_factory=list)
    period_id: int = 0
    last_seen: float = 0.0


class FlowAssembler:
    """Groups a packet stream into per-period reassembled flow payloads.

    A flow record closes at a period boundary or after the idle timeout; a
    later packet with the same key starts a fresh record. Completed payloads
    are immutable.
    """

    def __init__(self, period_seconds: float = 3600.0, idle_timeout: float = 300.0):
        if period_seconds <= 0:
            raise ValueError("period_seconds must be positive")
        self.period_seconds = float(period_seconds)
        self.idle_timeout = float(idle_timeout)
        self._open: dict[FlowKey, _OpenFlow] = {}
        self._done: dict[int, list[FlowPayload]] = {}

    def _period_of(self, ts: float) -> int:
        return math.floor(ts / self.period_seconds)

    def _close(self, key: FlowKey, state: _OpenFlow) -> None:
        payload = reassemble_flow(state.fragments, period_id=state.period_id)
        self._done.setdefault(state.period_id, []).append(payload)

    def feed(self, fragment: PacketFragment) -> None:
        period = self._period_of(fragment.timestamp)
        state = self._open.get(fragment.key)
        if state is not None:
            idle = fragment.timestamp - state.last_seen
            if period != state.period_id or idle > self.idle_timeout:
                self._close(fragment.key, state)
                state = None
        if state is None:
            state = _OpenFlow(period_id=period)
            self._open[fragment.key] = state
        state.fragments.append(fragment)
        state.last_seen = max(state.last_seen, fragment.timestamp)

    def finish(self) -> dict[int, list[FlowPayload]]:
        for key, state in self._open.items():
            self._close(key, state)
        self._open.clear()
        return self._done

    def periods(self) -> list[CapturePeriod]:
        out = []
        for pid in sorted(self._done):
            out.append(CapturePeriod(
                period_id=pid,
                start_time=pid * self.period_seconds,
                end_time=(pid + 1) * self.period_seconds,
                flow_count=len(self._done[pid]),
            ))
        return out


def bucket_periods(
    fragments,
    period_seconds: float = 3600.0,
    idle_timeout: float = 300.0,
) -> dict[int, list[FlowPayload]]:
    """Assemble an iterable of packet fragments into per-period flow payloads."""
    asm = FlowAssembler(period_seconds, idle_timeout)
    for frag in fragments:
        asm.feed(frag)
    return asm.finish()
