"""
Domain types for the capture layer: packets, flows, devices.

Flow records are device-oriented: ``dst_ip``/``dst_port`` always name the
far endpoint of the conversation, regardless of which side sent the
packets. ``direction`` records which way the bytes travelled.

Raw MAC addresses are never stored. Devices are keyed by a salted hash so
that a copied database cannot be joined back to hardware identifiers.
"""

from __future__ import annotations

import hashlib
import ipaddress
import uuid
from dataclasses import dataclass
from enum import Enum


class Transport(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


class Direction(str, Enum):
    OUTBOUND = "OUTBOUND"
    INBOUND = "INBOUND"


class Locality(str, Enum):
    EXTERNAL = "EXTERNAL"
    LOCAL = "LOCAL"


class Encryption(str, Enum):
    ENCRYPTED = "ENCRYPTED"
    PLAINTEXT = "PLAINTEXT"
    UNKNOWN = "UNKNOWN"


# Header-only heuristic: these are the strongest signals available without
# payload inspection. TLS-wrapped ports over TCP; DNS and HTTP in the clear.
ENCRYPTED_TCP_PORTS = frozenset({443, 853, 8443})
PLAINTEXT_PORTS = frozenset({80, 53})


def classify_encryption(dst_port: int, transport: Transport) -> Encryption:
    """Port-based encryption classification. Deterministic, total."""
    if transport is Transport.TCP and dst_port in ENCRYPTED_TCP_PORTS:
        return Encryption.ENCRYPTED
    if dst_port in PLAINTEXT_PORTS:
        return Encryption.PLAINTEXT
    return Encryption.UNKNOWN


# Address ranges considered part of the home network. Kept as an explicit
# list so the definition is auditable: RFC1918, link-local, loopback, and
# the IPv6 unique-local block.
_LOCAL_NETWORKS = (
    ipaddress.ip_network("10.0.0.0/8"),
    ipaddress.ip_network("172.16.0.0/12"),
    ipaddress.ip_network("192.168.0.0/16"),
    ipaddress.ip_network("169.254.0.0/16"),
    ipaddress.ip_network("127.0.0.0/8"),
    ipaddress.ip_network("fe80::/10"),
    ipaddress.ip_network("fc00::/7"),
    ipaddress.ip_network("::1/128"),
)


def is_local_ip(ip: str | ipaddress.IPv4Address | ipaddress.IPv6Address) -> bool:
    """True for destinations inside the home realm (never enriched/bucketed)."""
    addr = ipaddress.ip_address(ip)
    return any(addr in net for net in _LOCAL_NETWORKS)


def locality_of(ip: str) -> Locality:
    return Locality.LOCAL if is_local_ip(ip) else Locality.EXTERNAL


@dataclass(slots=True)
class PacketHeader:
    """One captured packet, header fields only. No payload is ever kept."""

    timestamp_ms: int
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    transport: Transport
    byte_len: int


@dataclass(slots=True)
class FlowRecord:
    """
    One aggregated unidirectional header-level flow.

    Packets sharing (device, far endpoint, port, transport, direction)
    within one coalesce window collapse into a single record.
    """

    id: str
    device_id: str
    dst_ip: str
    dst_port: int
    transport: Transport
    window_start_ms: int
    byte_count: int
    packet_count: int
    direction: Direction
    locality: Locality
    encryption: Encryption

    @classmethod
    def fresh_id(cls) -> str:
        return uuid.uuid4().hex


@dataclass
class Device:
    """A household device. device_id is hash(salt || MAC); the MAC is gone."""

    device_id: str
    friendly_name: str
    first_seen_ms: int = 0
    last_seen_ms: int = 0


class DeviceConflictError(ValueError):
    """Raised when a MAC is re-registered under a different name."""

    def __init__(self, device_id: str, existing_name: str, new_name: str):
        self.device_id = device_id
        self.existing_name = existing_name
        super().__init__(
            f"device {device_id} already registered as {existing_name!r}, "
            f"refusing rename to {new_name!r} via registration"
        )


def _normalise_mac(mac: str | bytes) -> bytes:
    if isinstance(mac, bytes):
        if len(mac) != 6:
            raise ValueError(f"MAC must be 6 bytes, got {len(mac)}")
        return mac
    digits = mac.replace(":", "").replace("-", "").strip().lower()
    if len(digits) != 12:
        raise ValueError(f"malformed MAC address: {mac!r}")
    return bytes.fromhex(digits)


def hash_mac(mac: str | bytes, salt: bytes) -> str:
    """Salted, non-invertible device identifier for a MAC address."""
    if not salt:
        raise ValueError("salt must be nonempty")
    return hashlib.sha256(salt + _normalise_mac(mac)).hexdigest()[:16]


def register_device(
    mac: str | bytes, name: str, salt: bytes, now_ms: int = 0
) -> Device:
    """Build a Device for a MAC. The returned value retains no raw MAC."""
    device_id = hash_mac(mac, salt)
    return Device(
        device_id=device_id,
        friendly_name=name,
        first_seen_ms=now_ms,
        last_seen_ms=now_ms,
    )


class DeviceRegistry:
    """
    In-memory device table keyed by salted MAC hash.

    Unknown MACs seen during ingest are auto-registered as
    ``unrecognised-<hash prefix>`` rather than dropped, so no traffic is
    silently lost.
    """

    def __init__(self, salt: bytes):
        if not salt:
            raise ValueError("salt must be nonempty")
        self._salt = salt
        self._devices: dict[str, Device] = {}

    def register(self, mac: str | bytes, name: str, now_ms: int = 0) -> Device:
        device_id = hash_mac(mac, self._salt)
        existing = self._devices.get(device_id)
        if existing is not None:
            if existing.friendly_name != name:
                raise DeviceConflictError(device_id, existing.friendly_name, name)
            return existing
        device = register_device(mac, name, self._salt, now_ms)
        self._devices[device_id] = device
        return device

    def load_map(self, device_map: dict[str, str], now_ms: int = 0) -> None:
        for mac, name in device_map.items():
            self.register(mac, name, now_ms)

    def preload(self, devices: "list[Device]") -> None:
        """Adopt previously persisted devices (ids already salted)."""
        for device in devices:
            self._devices.setdefault(device.device_id, device)

    def lookup_mac(self, mac: str | bytes) -> Device | None:
        return self._devices.get(hash_mac(mac, self._salt))

    def get(self, device_id: str) -> Device | None:
        return self._devices.get(device_id)

    def ensure_for_mac(self, mac: str | bytes, now_ms: int) -> Device:
        """Return the device for a MAC, auto-registering unknowns."""
        device_id = hash_mac(mac, self._salt)
        device = self._devices.get(device_id)
        if device is None:
            device = Device(
                device_id=device_id,
                friendly_name=f"unrecognised-{device_id[:8]}",
                first_seen_ms=now_ms,
                last_seen_ms=now_ms,
            )
            self._devices[device_id] = device
        return device

    def touch(self, device_id: str, now_ms: int) -> None:
        device = self._devices.get(device_id)
        if device is None:
            return
        if device.first_seen_ms == 0 or now_ms < device.first_seen_ms:
            device.first_seen_ms = now_ms
        if now_ms > device.last_seen_ms:
            device.last_seen_ms = now_ms

    def rename(self, device_id: str, name: str) -> Device:
        device = self._devices.get(device_id)
        if device is None:
            raise KeyError(f"unknown device: {device_id}")
        device.friendly_name = name
        return device

    def all(self) -> list[Device]:
        return sorted(self._devices.values(), key=lambda d: d.device_id)


def parse_device_map(text: str) -> dict[str, str]:
    """
    Parse a ``MAC<TAB>name`` device map file. ``#`` starts a comment.
    """
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ValueError(f"device map line {lineno}: expected MAC<TAB>name")
        mac, name = parts[0].strip(), parts[1].strip()
        _normalise_mac(mac)  # validate early
        mapping[mac] = name
    return mapping
