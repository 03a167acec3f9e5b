"""Capture layer: pcap/pcapng ingest, flow coalescing, device identity."""

from .ingest import DEFAULT_COALESCE_WINDOW_MS, FlowCoalescer, ingest_pcap
from .models import (
    Device,
    DeviceConflictError,
    DeviceRegistry,
    Direction,
    Encryption,
    FlowRecord,
    Locality,
    PacketHeader,
    Transport,
    classify_encryption,
    hash_mac,
    is_local_ip,
    locality_of,
    parse_device_map,
    register_device,
)
from .pcapio import (
    IngestError,
    ReaderStats,
    build_frame,
    iter_packet_headers,
    iter_raw_headers,
    write_pcap,
    write_pcapng,
)

__all__ = [
    "DEFAULT_COALESCE_WINDOW_MS",
    "Device",
    "DeviceConflictError",
    "DeviceRegistry",
    "Direction",
    "Encryption",
    "FlowCoalescer",
    "FlowRecord",
    "IngestError",
    "Locality",
    "PacketHeader",
    "ReaderStats",
    "Transport",
    "build_frame",
    "classify_encryption",
    "hash_mac",
    "ingest_pcap",
    "is_local_ip",
    "iter_packet_headers",
    "iter_raw_headers",
    "locality_of",
    "parse_device_map",
    "register_device",
    "write_pcap",
    "write_pcapng",
]
