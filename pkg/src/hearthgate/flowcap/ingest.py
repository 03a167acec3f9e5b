"""
Packet-to-flow reduction.

Per-packet rows are infeasible to retain over a multi-week deployment, so
packets sharing (device, far endpoint, port, transport, direction) within
one aligned coalesce window collapse into a single FlowRecord.

Attribution rules, in order:
  1. registered source MAC        -> OUTBOUND from that device
  2. registered destination MAC   -> INBOUND to that device
  3. local source IP              -> OUTBOUND, source MAC auto-registered
  4. local destination IP         -> INBOUND, destination MAC auto-registered
  5. otherwise                    -> OUTBOUND, source MAC auto-registered

Inputs are assumed near-ordered in time (true of real captures); one full
window of reordering grace is kept open. Disorder beyond that still counts
every packet exactly once but may emit a late record out of order.
"""

from __future__ import annotations

import ipaddress
import uuid
from typing import Iterator

from .models import (
    DeviceRegistry,
    Direction,
    FlowRecord,
    Locality,
    Transport,
    _normalise_mac,
    classify_encryption,
    is_local_ip,
)
from .pcapio import IPPROTO_TCP, IPPROTO_UDP, ReaderStats, iter_raw_headers

DEFAULT_COALESCE_WINDOW_MS = 60_000

_OUT = 0
_IN = 1


class FlowCoalescer:
    """
    Streaming aggregator: push parsed packet headers, collect FlowRecords.

    One instance per capture source; not safe for concurrent producers.
    """

    def __init__(
        self, registry: DeviceRegistry, window_ms: int = DEFAULT_COALESCE_WINDOW_MS
    ):
        if window_ms <= 0:
            raise ValueError("coalesce window must be positive")
        self.registry = registry
        self.window_ms = window_ms
        # window_start -> {(device_id, ip_bytes, port, proto, dir): [bytes, pkts]}
        self._windows: dict[int, dict] = {}
        self._mac_ids: dict[bytes, str] = {}
        self._ip_info: dict[bytes, tuple[str, Locality]] = {}
        self._device_seen: dict[str, list[int]] = {}
        self._watermark_window = 0

    def prime(self, device_map: dict[str, str], now_ms: int = 0) -> None:
        """Pre-register the known MAC->name mapping."""
        for mac, name in device_map.items():
            device = self.registry.register(mac, name, now_ms)
            self._mac_ids[_normalise_mac(mac)] = device.device_id

    def _device_for(self, mac: bytes, ts_ms: int) -> str:
        device = self.registry.ensure_for_mac(mac, ts_ms)
        self._mac_ids[mac] = device.device_id
        return device.device_id

    def _ip_of(self, raw: bytes) -> tuple[str, Locality]:
        info = self._ip_info.get(raw)
        if info is None:
            addr = ipaddress.ip_address(raw)
            info = (
                str(addr),
                Locality.LOCAL if is_local_ip(addr) else Locality.EXTERNAL,
            )
            self._ip_info[raw] = info
        return info

    def push(
        self,
        ts_ms: int,
        src_mac: bytes,
        dst_mac: bytes,
        src_ip: bytes,
        dst_ip: bytes,
        src_port: int,
        dst_port: int,
        proto: int,
        byte_len: int,
    ) -> list[FlowRecord]:
        """Account one packet; returns any windows closed by time advancing."""
        mac_ids = self._mac_ids
        device_id = mac_ids.get(src_mac)
        if device_id is not None:
            direction = _OUT
        else:
            device_id = mac_ids.get(dst_mac)
            if device_id is not None:
                direction = _IN
            elif self._ip_of(src_ip)[1] is Locality.LOCAL:
                device_id = self._device_for(src_mac, ts_ms)
                direction = _OUT
            elif self._ip_of(dst_ip)[1] is Locality.LOCAL:
                device_id = self._device_for(dst_mac, ts_ms)
                direction = _IN
            else:
                device_id = self._device_for(src_mac, ts_ms)
                direction = _OUT

        if direction == _OUT:
            remote_ip, remote_port = dst_ip, dst_port
        else:
            remote_ip, remote_port = src_ip, src_port

        window = ts_ms - ts_ms % self.window_ms
        bucket = self._windows.get(window)
        if bucket is None:
            bucket = self._windows[window] = {}
        key = (device_id, remote_ip, remote_port, proto, direction)
        counts = bucket.get(key)
        if counts is None:
            bucket[key] = [byte_len, 1]
        else:
            counts[0] += byte_len
            counts[1] += 1

        seen = self._device_seen.get(device_id)
        if seen is None:
            self._device_seen[device_id] = [ts_ms, ts_ms]
        else:
            if ts_ms < seen[0]:
                seen[0] = ts_ms
            if ts_ms > seen[1]:
                seen[1] = ts_ms

        if window > self._watermark_window:
            self._watermark_window = window
            cutoff = window - self.window_ms
            stale = [w for w in self._windows if w < cutoff]
            if stale:
                return self._emit(sorted(stale))
        return []

    def _emit(self, window_starts: list[int]) -> list[FlowRecord]:
        records: list[FlowRecord] = []
        for window in window_starts:
            entries = self._windows.pop(window)
            for key in sorted(entries):
                device_id, remote_ip, remote_port, proto, direction = key
                byte_count, packet_count = entries[key]
                ip_str, locality = self._ip_of(remote_ip)
                if proto == IPPROTO_TCP:
                    transport = Transport.TCP
                elif proto == IPPROTO_UDP:
                    transport = Transport.UDP
                else:
                    transport = Transport.OTHER
                records.append(
                    FlowRecord(
                        id=uuid.uuid4().hex,
                        device_id=device_id,
                        dst_ip=ip_str,
                        dst_port=remote_port,
                        transport=transport,
                        window_start_ms=window,
                        byte_count=byte_count,
                        packet_count=packet_count,
                        direction=Direction.OUTBOUND if direction == _OUT else Direction.INBOUND,
                        locality=locality,
                        encryption=classify_encryption(remote_port, transport),
                    )
                )
        return records

    def finish(self) -> list[FlowRecord]:
        """Close all open windows and sync device first/last-seen times."""
        records = self._emit(sorted(self._windows))
        for device_id, (first, last) in self._device_seen.items():
            self.registry.touch(device_id, first)
            self.registry.touch(device_id, last)
        return records


def ingest_pcap(
    path: str,
    device_map: dict[str, str] | None = None,
    coalesce_window_ms: int = DEFAULT_COALESCE_WINDOW_MS,
    *,
    salt: bytes = b"",
    registry: DeviceRegistry | None = None,
    stats: ReaderStats | None = None,
) -> Iterator[FlowRecord]:
    """
    Replay a pcap/pcapng file into a stream of FlowRecords.

    Every packet with a parseable IP header is attributed to exactly one
    record; byte totals are conserved exactly. Raises IngestError (with a
    byte offset) on corrupt container structure.
    """
    if registry is None:
        registry = DeviceRegistry(salt)
    coalescer = FlowCoalescer(registry, coalesce_window_ms)
    if device_map:
        coalescer.prime(device_map)
    for tup in iter_raw_headers(path, stats):
        flushed = coalescer.push(*tup)
        if flushed:
            yield from flushed
    yield from coalescer.finish()
