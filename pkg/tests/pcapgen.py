"""Build small pcap files byte-by-byte for ingest tests.

Constructed independently of the package's reader: the layouts here are the
oracle for what the reader must recover.
"""

from __future__ import annotations

import ipaddress
import struct

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_ARP = 0x0806
VLAN = 0x8100


def eth_frame(src_mac: bytes, dst_mac: bytes, ethertype: int, body: bytes,
              vlan: int | None = None) -> bytes:
    head = dst_mac + src_mac
    if vlan is not None:
        head += struct.pack(">HH", VLAN, vlan)
    return head + struct.pack(">H", ethertype) + body


def ipv4_packet(src: str, dst: str, proto: int, body: bytes, ttl: int = 64,
                frag_offset: int = 0) -> bytes:
    total = 20 + len(body)
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, total, 0x1234, frag_offset & 0x3FFF, ttl, proto, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed,
    )
    return header + body


def ipv6_packet(src: str, dst: str, next_header: int, body: bytes) -> bytes:
    header = struct.pack(
        ">IHBB16s16s",
        0x60000000, len(body), next_header, 64,
        ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed,
    )
    return header + body


def tcp_segment(sport: int, dport: int, seq: int, payload: bytes) -> bytes:
    header = struct.pack(">HHIIBBHHH", sport, dport, seq, 0, 5 << 4, 0x18, 8192, 0, 0)
    return header + payload


def udp_datagram(sport: int, dport: int, payload: bytes) -> bytes:
    return struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload


def tcp4(ts, src, dst, sport, dport, seq, payload, pad_to: int = 0, vlan=None):
    body = ipv4_packet(src, dst, 6, tcp_segment(sport, dport, seq, payload))
    frame = eth_frame(b"\xaa" * 6, b"\xbb" * 6, ETH_IPV4, body, vlan=vlan)
    if pad_to and len(frame) < pad_to:
        frame += b"\x00" * (pad_to - len(frame))  # ethernet trailer padding
    return ts, frame


def udp4(ts, src, dst, sport, dport, payload, vlan=None):
    body = ipv4_packet(src, dst, 17, udp_datagram(sport, dport, payload))
    return ts, eth_frame(b"\xaa" * 6, b"\xbb" * 6, ETH_IPV4, body, vlan=vlan)


def tcp6(ts, src, dst, sport, dport, seq, payload):
    body = ipv6_packet(src, dst, 6, tcp_segment(sport, dport, seq, payload))
    return ts, eth_frame(b"\xaa" * 6, b"\xbb" * 6, ETH_IPV6, body)


def icmp4(ts, src, dst):
    body = ipv4_packet(src, dst, 1, b"\x08\x00\x00\x00rest")
    return ts, eth_frame(b"\xaa" * 6, b"\xbb" * 6, ETH_IPV4, body)


def arp(ts):
    return ts, eth_frame(b"\xaa" * 6, b"\xbb" * 6, ETH_ARP, b"\x00" * 28)


def build_pcap(frames, nano: bool = False, big_endian: bool = False,
               linktype: int = 1) -> bytes:
    """frames: iterable of (timestamp_seconds, frame_bytes)."""
    endian = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nano else 0xA1B2C3D4
    scale = 1_000_000_000 if nano else 1_000_000
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 0x40000, linktype)
    for ts, frame in frames:
        sec = int(ts)
        frac = round((ts - sec) * scale)
        out += struct.pack(endian + "IIII", sec, frac, len(frame), len(frame))
        out += frame
    return out
