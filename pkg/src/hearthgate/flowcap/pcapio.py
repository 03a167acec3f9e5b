"""
Capture file I/O: classic pcap and pcapng readers, plus writers and frame
builders used by the replay test harness.

The readers work header-only: each packet yields a compact tuple of the
fields the flow pipeline needs, and nothing of the payload survives.
Malformed *container* structure (truncated record, bad magic) raises
IngestError naming the byte offset; malformed *content* (non-IP frames,
truncated IP headers) is skipped and counted, never fatal.

Supported link types: Ethernet (1, incl. stacked 802.1Q tags) and raw
IPv4/IPv6 (101). Wireless-layer capture is explicitly out of scope.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

from .models import PacketHeader, Transport

# (ts_ms, src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port, ip_proto, byte_len)
RawHeader = "tuple[int, bytes, bytes, bytes, bytes, int, int, int, int]"

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
PCAPNG_SHB = 0x0A0D0D0A
PCAPNG_BYTE_ORDER = 0x1A2B3C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8)

IPPROTO_TCP = 6
IPPROTO_UDP = 17

# IPv6 extension headers we walk through to find the transport
_IPV6_EXT = frozenset({0, 43, 44, 60})


class IngestError(Exception):
    """Unreadable or corrupt capture file. Carries the byte offset."""

    def __init__(self, message: str, byte_offset: int):
        self.byte_offset = byte_offset
        super().__init__(f"{message} (byte offset {byte_offset})")


@dataclass
class ReaderStats:
    """Counters maintained while a capture is being read."""

    packets_total: int = 0
    packets_ip: int = 0
    packets_skipped: int = 0
    bytes_ip: int = 0


def _parse_frame(data: bytes, linktype: int):
    """
    Extract (src_mac, dst_mac, src_ip, dst_ip, sport, dport, proto) from one
    frame, or None when there is no parseable IP header.
    """
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return None
        dst_mac = data[0:6]
        src_mac = data[6:12]
        ethertype = (data[12] << 8) | data[13]
        offset = 14
        while ethertype in ETHERTYPE_VLAN:
            if len(data) < offset + 4:
                return None
            ethertype = (data[offset + 2] << 8) | data[offset + 3]
            offset += 4
        if ethertype == ETHERTYPE_IPV4:
            return _parse_ipv4(data, offset, src_mac, dst_mac)
        if ethertype == ETHERTYPE_IPV6:
            return _parse_ipv6(data, offset, src_mac, dst_mac)
        return None
    if linktype == LINKTYPE_RAW:
        if not data:
            return None
        version = data[0] >> 4
        if version == 4:
            return _parse_ipv4(data, 0, b"", b"")
        if version == 6:
            return _parse_ipv6(data, 0, b"", b"")
        return None
    return None


def _parse_ipv4(data: bytes, off: int, src_mac: bytes, dst_mac: bytes):
    if len(data) < off + 20:
        return None
    ihl = (data[off] & 0x0F) * 4
    if ihl < 20 or len(data) < off + ihl:
        return None
    proto = data[off + 9]
    src_ip = data[off + 12 : off + 16]
    dst_ip = data[off + 16 : off + 20]
    sport = dport = 0
    if proto in (IPPROTO_TCP, IPPROTO_UDP):
        # A fragment with nonzero offset carries no transport header
        frag = ((data[off + 6] & 0x1F) << 8) | data[off + 7]
        if frag == 0 and len(data) >= off + ihl + 4:
            sport = (data[off + ihl] << 8) | data[off + ihl + 1]
            dport = (data[off + ihl + 2] << 8) | data[off + ihl + 3]
    return (src_mac, dst_mac, src_ip, dst_ip, sport, dport, proto)


def _parse_ipv6(data: bytes, off: int, src_mac: bytes, dst_mac: bytes):
    if len(data) < off + 40:
        return None
    nxt = data[off + 6]
    src_ip = data[off + 8 : off + 24]
    dst_ip = data[off + 24 : off + 40]
    pos = off + 40
    while nxt in _IPV6_EXT:
        if len(data) < pos + 8:
            return (src_mac, dst_mac, src_ip, dst_ip, 0, 0, nxt)
        if nxt == 44:  # fragment header: fixed 8 bytes
            ext_len = 8
        else:
            ext_len = (data[pos + 1] + 1) * 8
        nxt = data[pos]
        pos += ext_len
    sport = dport = 0
    if nxt in (IPPROTO_TCP, IPPROTO_UDP) and len(data) >= pos + 4:
        sport = (data[pos] << 8) | data[pos + 1]
        dport = (data[pos + 2] << 8) | data[pos + 3]
    return (src_mac, dst_mac, src_ip, dst_ip, sport, dport, nxt)


# ---------------------------------------------------------------------------
# Classic pcap
# ---------------------------------------------------------------------------


def _iter_pcap(buf: bytes, stats: ReaderStats) -> Iterator[tuple]:
    magic = struct.unpack_from("<I", buf, 0)[0]
    if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        endian = "<"
    else:
        magic = struct.unpack_from(">I", buf, 0)[0]
        if magic not in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            raise IngestError("not a pcap file (bad magic)", 0)
        endian = ">"
    nanos = magic == PCAP_MAGIC_NS
    if len(buf) < 24:
        raise IngestError("truncated pcap global header", len(buf))
    linktype = struct.unpack_from(endian + "I", buf, 20)[0] & 0x0FFFFFFF
    rec = struct.Struct(endian + "IIII")
    pos = 24
    end = len(buf)
    while pos < end:
        if pos + 16 > end:
            raise IngestError("truncated packet record header", pos)
        ts_sec, ts_frac, caplen, origlen = rec.unpack_from(buf, pos)
        data_start = pos + 16
        if data_start + caplen > end:
            raise IngestError("truncated packet data", pos)
        stats.packets_total += 1
        parsed = _parse_frame(buf[data_start : data_start + caplen], linktype)
        if parsed is None:
            stats.packets_skipped += 1
        else:
            ts_ms = ts_sec * 1000 + (ts_frac // 1_000_000 if nanos else ts_frac // 1000)
            stats.packets_ip += 1
            stats.bytes_ip += origlen
            yield (ts_ms, *parsed, origlen)
        pos = data_start + caplen


# ---------------------------------------------------------------------------
# pcapng
# ---------------------------------------------------------------------------


def _tsresol_ticks(options: bytes, endian: str) -> int:
    """Ticks per second from IDB options; default is microseconds."""
    pos = 0
    while pos + 4 <= len(options):
        code, length = struct.unpack_from(endian + "HH", options, pos)
        pos += 4
        if code == 0:
            break
        if code == 9 and length >= 1:
            raw = options[pos]
            return 2 ** (raw & 0x7F) if raw & 0x80 else 10 ** (raw & 0x7F)
        pos += (length + 3) & ~3
    return 10**6


def _iter_pcapng(buf: bytes, stats: ReaderStats) -> Iterator[tuple]:
    pos = 0
    end = len(buf)
    endian = "<"
    interfaces: list[tuple[int, int]] = []  # (linktype, ticks_per_sec)
    last_ts_ms = 1
    snaplen = 0
    while pos < end:
        if pos + 12 > end:
            raise IngestError("truncated pcapng block header", pos)
        block_type = struct.unpack_from(endian + "I", buf, pos)[0]
        if block_type == PCAPNG_SHB:
            # Byte order can change per section
            bom_le = struct.unpack_from("<I", buf, pos + 8)[0]
            if bom_le == PCAPNG_BYTE_ORDER:
                endian = "<"
            elif struct.unpack_from(">I", buf, pos + 8)[0] == PCAPNG_BYTE_ORDER:
                endian = ">"
            else:
                raise IngestError("bad pcapng byte-order magic", pos + 8)
            interfaces = []
            block_type = struct.unpack_from(endian + "I", buf, pos)[0]
        total_len = struct.unpack_from(endian + "I", buf, pos + 4)[0]
        if total_len < 12 or total_len % 4 != 0 or pos + total_len > end:
            raise IngestError("bad pcapng block length", pos + 4)
        body = buf[pos + 8 : pos + total_len - 4]
        if block_type == 1:  # Interface Description Block
            if len(body) < 8:
                raise IngestError("short interface description block", pos)
            linktype = struct.unpack_from(endian + "H", body, 0)[0]
            snaplen = struct.unpack_from(endian + "I", body, 4)[0]
            interfaces.append((linktype, _tsresol_ticks(body[8:], endian)))
        elif block_type == 6:  # Enhanced Packet Block
            if len(body) < 20:
                raise IngestError("short enhanced packet block", pos)
            if_id, ts_high, ts_low, caplen, origlen = struct.unpack_from(
                endian + "IIIII", body, 0
            )
            if if_id >= len(interfaces):
                raise IngestError(f"packet references unknown interface {if_id}", pos)
            if 20 + caplen > len(body):
                raise IngestError("truncated packet data", pos)
            linktype, ticks = interfaces[if_id]
            ts_ms = ((ts_high << 32) | ts_low) * 1000 // ticks
            last_ts_ms = ts_ms
            stats.packets_total += 1
            parsed = _parse_frame(body[20 : 20 + caplen], linktype)
            if parsed is None:
                stats.packets_skipped += 1
            else:
                stats.packets_ip += 1
                stats.bytes_ip += origlen
                yield (ts_ms, *parsed, origlen)
        elif block_type == 3:  # Simple Packet Block: no timestamp recorded
            if len(body) < 4 or not interfaces:
                raise IngestError("short simple packet block", pos)
            origlen = struct.unpack_from(endian + "I", body, 0)[0]
            caplen = min(origlen, snaplen) if snaplen else origlen
            if 4 + caplen > len(body):
                raise IngestError("truncated packet data", pos)
            linktype, _ = interfaces[0]
            stats.packets_total += 1
            parsed = _parse_frame(body[4 : 4 + caplen], linktype)
            if parsed is None:
                stats.packets_skipped += 1
            else:
                stats.packets_ip += 1
                stats.bytes_ip += origlen
                yield (last_ts_ms, *parsed, origlen)
        # all other block types (name resolution, statistics, ...) are skipped
        pos += total_len


def iter_raw_headers(path: str, stats: ReaderStats | None = None) -> Iterator[tuple]:
    """
    Yield compact per-packet tuples from a pcap or pcapng file:

        (ts_ms, src_mac, dst_mac, src_ip, dst_ip, sport, dport, proto, byte_len)

    MAC and IP fields are raw bytes; byte_len is the original wire length.
    """
    if stats is None:
        stats = ReaderStats()
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IngestError(f"cannot read capture file: {exc}", 0) from exc
    if len(buf) == 0:
        return
    if len(buf) < 4:
        raise IngestError("file too short to be a capture", 0)
    first = struct.unpack_from("<I", buf, 0)[0]
    if first == PCAPNG_SHB:
        yield from _iter_pcapng(buf, stats)
    else:
        yield from _iter_pcap(buf, stats)


def _format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac) if mac else ""


def _format_ip(ip: bytes) -> str:
    return str(ipaddress.ip_address(ip))


def iter_packet_headers(path: str) -> Iterator[PacketHeader]:
    """Reader convenience: yield PacketHeader dataclasses (slow path)."""
    for ts_ms, smac, dmac, sip, dip, sport, dport, proto, blen in iter_raw_headers(path):
        if proto == IPPROTO_TCP:
            transport = Transport.TCP
        elif proto == IPPROTO_UDP:
            transport = Transport.UDP
        else:
            transport = Transport.OTHER
        yield PacketHeader(
            timestamp_ms=ts_ms,
            src_mac=_format_mac(smac),
            dst_mac=_format_mac(dmac),
            src_ip=_format_ip(sip),
            dst_ip=_format_ip(dip),
            src_port=sport,
            dst_port=dport,
            transport=transport,
            byte_len=blen,
        )


# ---------------------------------------------------------------------------
# Writers and frame builders (replay/test tooling)
# ---------------------------------------------------------------------------


def build_frame(
    src_mac: str | bytes,
    dst_mac: str | bytes,
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    transport: Transport | str = Transport.TCP,
    payload_len: int = 0,
) -> bytes:
    """Assemble a minimal valid Ethernet/IP/TCP|UDP frame (zero checksums)."""

    def mac_bytes(m: str | bytes) -> bytes:
        if isinstance(m, bytes):
            return m
        return bytes.fromhex(m.replace(":", "").replace("-", ""))

    transport = Transport(transport)
    src = ipaddress.ip_address(src_ip)
    dst = ipaddress.ip_address(dst_ip)
    if transport is Transport.TCP:
        l4 = struct.pack(">HHIIBBHHH", src_port, dst_port, 0, 0, 5 << 4, 0x10, 8192, 0, 0)
    elif transport is Transport.UDP:
        l4 = struct.pack(">HHHH", src_port, dst_port, 8 + payload_len, 0)
    else:
        l4 = b""
    payload = b"\x00" * payload_len
    if src.version == 4:
        proto = {Transport.TCP: 6, Transport.UDP: 17, Transport.OTHER: 253}[transport]
        total = 20 + len(l4) + len(payload)
        ip_hdr = struct.pack(
            ">BBHHHBBH4s4s", 0x45, 0, total, 0, 0, 64, proto, 0, src.packed, dst.packed
        )
        ethertype = ETHERTYPE_IPV4
    else:
        proto = {Transport.TCP: 6, Transport.UDP: 17, Transport.OTHER: 59}[transport]
        ip_hdr = struct.pack(
            ">IHBB16s16s",
            6 << 28,
            len(l4) + len(payload),
            proto,
            64,
            src.packed,
            dst.packed,
        )
        ethertype = ETHERTYPE_IPV6
    eth = mac_bytes(dst_mac) + mac_bytes(src_mac) + struct.pack(">H", ethertype)
    return eth + ip_hdr + l4 + payload


def write_pcap(path: str, packets: Iterable[tuple[int, bytes]]) -> int:
    """
    Write (ts_ms, frame) pairs as a classic little-endian microsecond pcap.
    Returns the number of packets written.
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", PCAP_MAGIC_US, 2, 4, 0, 0, 262144, LINKTYPE_ETHERNET))
        for ts_ms, frame in packets:
            fh.write(
                struct.pack(
                    "<IIII", ts_ms // 1000, (ts_ms % 1000) * 1000, len(frame), len(frame)
                )
            )
            fh.write(frame)
            count += 1
    return count


def write_pcapng(path: str, packets: Iterable[tuple[int, bytes]]) -> int:
    """Write (ts_ms, frame) pairs as a minimal pcapng file (ms resolution)."""

    def block(block_type: int, body: bytes) -> bytes:
        pad = (-len(body)) % 4
        total = 12 + len(body) + pad
        return (
            struct.pack("<II", block_type, total)
            + body
            + b"\x00" * pad
            + struct.pack("<I", total)
        )

    count = 0
    with open(path, "wb") as fh:
        shb = struct.pack("<IHHq", PCAPNG_BYTE_ORDER, 1, 0, -1)
        fh.write(block(PCAPNG_SHB, shb))
        # if_tsresol = 3 (milliseconds), then end-of-options
        idb_opts = struct.pack("<HHB", 9, 1, 3) + b"\x00" * 3 + struct.pack("<HH", 0, 0)
        fh.write(block(1, struct.pack("<HHI", LINKTYPE_ETHERNET, 0, 262144) + idb_opts))
        for ts_ms, frame in packets:
            body = struct.pack(
                "<IIIII", 0, ts_ms >> 32, ts_ms & 0xFFFFFFFF, len(frame), len(frame)
            )
            fh.write(block(6, body + frame))
            count += 1
    return count
