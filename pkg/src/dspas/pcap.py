"""Minimal libpcap container reader producing per-packet flow fragments.

Understands the classic microsecond magic, the nanosecond variant, and both
byte orders. Link types: Ethernet (with up to two VLAN tags) and raw IP.
Malformed or truncated packets are skipped and counted; an unreadable file
header is fatal.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field

from .errors import CaptureError
from .flows import FlowKey, PacketFragment, Protocol

MAGIC_US_LE = 0xA1B2C3D4
MAGIC_US_BE = 0xD4C3B2A1
MAGIC_NS_LE = 0xA1B23C4D
MAGIC_NS_BE = 0x4D3CB2A1

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

_ETH_IPV4 = 0x0800
_ETH_IPV6 = 0x86DD
_ETH_VLAN = (0x8100, 0x88A8)


@dataclass
class CaptureStats:
    packets_total: int = 0
    packets_emitted: int = 0
    truncated: int = 0
    malformed: int = 0
    non_ip: int = 0
    other_protocol: int = 0
    ip_fragments: int = 0
    empty_payload: int = 0

    def dropped_total(self) -> int:
        return (self.truncated + self.malformed + self.non_ip
                + self.other_protocol + self.ip_fragments + self.empty_payload)


@dataclass
class PcapReader:
    path: str
    stats: CaptureStats = field(default_factory=CaptureStats)

    def __post_init__(self):
        try:
            with open(self.path, "rb") as fh:
                head = fh.read(24)
        except OSError as exc:
            raise CaptureError(f"cannot read capture {self.path}: {exc}") from exc
        if len(head) < 24:
            raise CaptureError(f"{self.path}: not a capture file (short global header)")
        magic = struct.unpack("<I", head[:4])[0]
        if magic in (MAGIC_US_LE, MAGIC_NS_LE):
            self._endian = "<"
        elif magic in (MAGIC_US_BE, MAGIC_NS_BE):
            self._endian = ">"
            magic = struct.unpack(">I", head[:4])[0]
        else:
            raise CaptureError(f"{self.path}: unknown capture magic {magic:#010x}")
        self._ts_div = 1e9 if magic == MAGIC_NS_LE else 1e6
        self._linktype = struct.unpack(self._endian + "I", head[20:24])[0] & 0x0FFFFFFF
        if self._linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
            raise CaptureError(f"{self.path}: unsupported link type {self._linktype}")

    def packets(self):
        """Yield PacketFragment for every TCP/UDP packet with payload."""
        rec = struct.Struct(self._endian + "IIII")
        with open(self.path, "rb") as fh:
            fh.seek(24)
            while True:
                head = fh.read(16)
                if not head:
                    break
                if len(head) < 16:
                    self.stats.truncated += 1
                    break
                ts_sec, ts_frac, incl_len, _orig = rec.unpack(head)
                data = fh.read(incl_len)
                self.stats.packets_total += 1
                if len(data) < incl_len:
                    self.stats.truncated += 1
                    break
                frag = self._parse(ts_sec + ts_frac / self._ts_div, data)
                if frag is not None:
                    self.stats.packets_emitted += 1
                    yield frag

    def _parse(self, ts: float, data: bytes) -> PacketFragment | None:
        if self._linktype == LINKTYPE_ETHERNET:
            if len(data) < 14:
                self.stats.truncated += 1
                return None
            ethertype = struct.unpack_from(">H", data, 12)[0]
            offset = 14
            for _ in range(2):
                if ethertype in _ETH_VLAN:
                    if len(data) < offset + 4:
                        self.stats.truncated += 1
                        return None
                    ethertype = struct.unpack_from(">H", data, offset + 2)[0]
                    offset += 4
            if ethertype == _ETH_IPV4:
                return self._parse_ipv4(ts, data, offset)
            if ethertype == _ETH_IPV6:
                return self._parse_ipv6(ts, data, offset)
            self.stats.non_ip += 1
            return None
        # raw IP: version nibble decides
        if not data:
            self.stats.truncated += 1
            return None
        version = data[0] >> 4
        if version == 4:
            return self._parse_ipv4(ts, data, 0)
        if version == 6:
            return self._parse_ipv6(ts, data, 0)
        self.stats.non_ip += 1
        return None

    def _parse_ipv4(self, ts: float, data: bytes, off: int) -> PacketFragment | None:
        if len(data) < off + 20:
            self.stats.truncated += 1
            return None
        ihl = (data[off] & 0x0F) * 4
        total_len = struct.unpack_from(">H", data, off + 2)[0]
        flags_frag = struct.unpack_from(">H", data, off + 6)[0]
        proto = data[off + 9]
        if ihl < 20 or total_len < ihl or len(data) < off + ihl:
            self.stats.malformed += 1
            return None
        if flags_frag & 0x1FFF:  # non-first IP fragment: transport header absent
            self.stats.ip_fragments += 1
            return None
        src = ipaddress.IPv4Address(data[off + 12 : off + 16])
        dst = ipaddress.IPv4Address(data[off + 16 : off + 20])
        end = min(len(data), off + total_len)
        return self._parse_transport(ts, src, dst, proto, data, off + ihl, end)

    def _parse_ipv6(self, ts: float, data: bytes, off: int) -> PacketFragment | None:
        if len(data) < off + 40:
            self.stats.truncated += 1
            return None
        payload_len = struct.unpack_from(">H", data, off + 4)[0]
        nxt = data[off + 6]
        src = ipaddress.IPv6Address(data[off + 8 : off + 24])
        dst = ipaddress.IPv6Address(data[off + 24 : off + 40])
        end = min(len(data), off + 40 + payload_len)
        pos = off + 40
        for _ in range(8):  # bounded extension-header walk
            if nxt in (int(Protocol.TCP), int(Protocol.UDP)):
                return self._parse_transport(ts, src, dst, nxt, data, pos, end)
            if nxt in (0, 43, 60):  # hop-by-hop / routing / destination options
                if len(data) < pos + 2:
                    self.stats.truncated += 1
                    return None
                nxt = data[pos]
                pos += (data[pos + 1] + 1) * 8
                continue
            if nxt == 44:  # fragment header
                if len(data) < pos + 8:
                    self.stats.truncated += 1
                    return None
                frag_off = struct.unpack_from(">H", data, pos + 2)[0] >> 3
                if frag_off:
                    self.stats.ip_fragments += 1
                    return None
                nxt = data[pos]
                pos += 8
                continue
            self.stats.other_protocol += 1
            return None
        self.stats.malformed += 1
        return None

    def _parse_transport(self, ts, src, dst, proto, data, pos, end) -> PacketFragment | None:
        if proto == int(Protocol.TCP):
            if end < pos + 20 or len(data) < pos + 20:
                self.stats.truncated += 1
                return None
            sport, dport, seq = struct.unpack_from(">HHI", data, pos)
            doff = (data[pos + 12] >> 4) * 4
            if doff < 20 or pos + doff > end:
                self.stats.malformed += 1
                return None
            payload = data[pos + doff : end]
            key = FlowKey(src, dst, sport, dport, Protocol.TCP)
            if not payload:
                self.stats.empty_payload += 1
                return None
            return PacketFragment(key=key, timestamp=ts, payload=payload, tcp_seq=seq)
        if proto == int(Protocol.UDP):
            if end < pos + 8 or len(data) < pos + 8:
                self.stats.truncated += 1
                return None
            sport, dport, ulen = struct.unpack_from(">HHH", data, pos)
            if ulen < 8 or pos + ulen > end:
                self.stats.malformed += 1
                return None
            payload = data[pos + 8 : pos + ulen]
            key = FlowKey(src, dst, sport, dport, Protocol.UDP)
            if not payload:
                self.stats.empty_payload += 1
                return None
            return PacketFragment(key=key, timestamp=ts, payload=payload, tcp_seq=None)
        self.stats.other_protocol += 1
        return None


def classify_packets(capture_path: str) -> PcapReader:
    """Open a capture for classification; iterate reader.packets() for fragments."""
    return PcapReader(capture_path)
