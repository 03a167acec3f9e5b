"""Capture layer: parsing, coalescing, attribution, device identity."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hearthgate.flowcap import (
    DeviceConflictError,
    DeviceRegistry,
    Direction,
    Encryption,
    IngestError,
    Locality,
    ReaderStats,
    Transport,
    build_frame,
    classify_encryption,
    hash_mac,
    ingest_pcap,
    is_local_ip,
    parse_device_map,
    register_device,
    write_pcap,
    write_pcapng,
)

from .conftest import GATEWAY_MAC, MAC_LAPTOP, MAC_PHONE, T0
from .oracles import oracle_is_local, pcap_ip_byte_total

DEVICE_MAP = {MAC_LAPTOP: "laptop", MAC_PHONE: "phone"}


def frame_to(dst_ip: str, size: int, dst_port: int = 443, src_mac: str = MAC_LAPTOP,
             src_ip: str = "192.168.1.7", transport=Transport.TCP, dst_mac=GATEWAY_MAC,
             src_port: int = 50000):
    return build_frame(src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port,
                       transport, payload_len=max(size - 54, 0))


# ---------------------------------------------------------------------------
# ingest_pcap examples
# ---------------------------------------------------------------------------


def test_empty_capture_yields_no_records(tmp_path):
    path = tmp_path / "empty.pcap"
    path.write_bytes(b"")
    assert list(ingest_pcap(str(path), DEVICE_MAP, salt=b"s")) == []


def test_three_packets_same_tuple_merge(tmp_path):
    sizes = (100, 200, 300)
    frames = [(T0 + i, frame_to("93.184.216.34", s)) for i, s in enumerate(sizes)]
    path = tmp_path / "merge.pcap"
    write_pcap(str(path), frames)

    packets, total = pcap_ip_byte_total(str(path))  # independent oracle
    assert (packets, total) == (3, 600)

    records = list(ingest_pcap(str(path), DEVICE_MAP, 60_000, salt=b"s"))
    assert len(records) == 1
    assert records[0].byte_count == total == 600
    assert records[0].packet_count == 3
    assert records[0].transport is Transport.TCP
    assert records[0].direction is Direction.OUTBOUND


def test_private_destination_is_local(tmp_path):
    path = tmp_path / "local.pcap"
    write_pcap(str(path), [(T0, frame_to("192.168.1.10", 100))])
    [record] = ingest_pcap(str(path), DEVICE_MAP, salt=b"s")
    assert record.locality is Locality.LOCAL


def test_unknown_source_mac_autoregisters(tmp_path):
    path = tmp_path / "unknown.pcap"
    write_pcap(str(path), [(T0, frame_to("93.184.216.34", 100, src_mac="de:ad:be:ef:00:01"))])
    registry = DeviceRegistry(b"s")
    [record] = ingest_pcap(str(path), {}, registry=registry, salt=b"s")
    device = registry.get(record.device_id)
    assert device is not None
    assert device.friendly_name == f"unrecognised-{record.device_id[:8]}"


def test_inbound_packet_attributed_to_destination_device(tmp_path):
    # internet host -> laptop: device is the receiver, dst_ip the far end
    frame = build_frame("02:ff:00:00:00:09", MAC_LAPTOP, "93.184.216.34",
                        "192.168.1.7", 443, 50123, Transport.TCP, payload_len=46)
    path = tmp_path / "inbound.pcap"
    write_pcap(str(path), [(T0, frame)])
    [record] = ingest_pcap(str(path), DEVICE_MAP, salt=b"s")
    assert record.direction is Direction.INBOUND
    assert record.dst_ip == "93.184.216.34"
    assert record.dst_port == 443
    assert record.device_id == hash_mac(MAC_LAPTOP, b"s")


def test_corrupt_file_reports_byte_offset(tmp_path):
    path = tmp_path / "corrupt.pcap"
    good = frame_to("93.184.216.34", 100)
    write_pcap(str(path), [(T0, good)])
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 10])  # truncate inside packet data
    with pytest.raises(IngestError) as exc:
        list(ingest_pcap(str(path), DEVICE_MAP, salt=b"s"))
    assert exc.value.byte_offset == 24  # record header of the damaged packet
    assert "byte offset" in str(exc.value)


def test_not_a_capture_rejected(tmp_path):
    path = tmp_path / "garbage.pcap"
    path.write_bytes(b"this is not a capture file at all")
    with pytest.raises(IngestError):
        list(ingest_pcap(str(path), DEVICE_MAP, salt=b"s"))


def test_non_ip_frames_skipped_not_fatal(tmp_path):
    arp = bytes.fromhex("ffffffffffff") + bytes.fromhex("aabbcc000001") + b"\x08\x06" + b"\x00" * 28
    path = tmp_path / "mixed.pcap"
    write_pcap(str(path), [(T0, arp), (T0 + 1, frame_to("93.184.216.34", 100))])
    stats = ReaderStats()
    records = list(ingest_pcap(str(path), DEVICE_MAP, salt=b"s", stats=stats))
    assert len(records) == 1
    assert stats.packets_skipped == 1
    assert stats.packets_ip == 1


def test_pcapng_matches_pcap(tmp_path):
    frames = [(T0 + i, frame_to("93.184.216.34", 100 + i)) for i in range(5)]
    p1, p2 = tmp_path / "a.pcap", tmp_path / "a.pcapng"
    write_pcap(str(p1), frames)
    write_pcapng(str(p2), frames)
    r1 = list(ingest_pcap(str(p1), DEVICE_MAP, salt=b"s"))
    r2 = list(ingest_pcap(str(p2), DEVICE_MAP, salt=b"s"))
    strip = lambda rs: [(r.device_id, r.dst_ip, r.dst_port, r.byte_count, r.packet_count,
                         r.window_start_ms) for r in rs]
    assert strip(r1) == strip(r2)


def test_ipv6_flows(tmp_path):
    frame = build_frame(MAC_LAPTOP, GATEWAY_MAC, "fd00::7", "2001:db8::1",
                        50000, 443, Transport.TCP, payload_len=40)
    path = tmp_path / "v6.pcap"
    write_pcap(str(path), [(T0, frame)])
    [record] = ingest_pcap(str(path), DEVICE_MAP, salt=b"s")
    assert record.dst_ip == "2001:db8::1"
    assert record.locality is Locality.EXTERNAL
    assert record.encryption is Encryption.ENCRYPTED


# ---------------------------------------------------------------------------
# invariants over randomized captures
# ---------------------------------------------------------------------------


def _random_capture(rng: random.Random, n: int) -> list[tuple[int, bytes]]:
    macs = [MAC_LAPTOP, MAC_PHONE, "de:ad:00:00:00:03"]
    ips = ["93.184.216.34", "198.51.100.9", "203.0.113.77", "192.168.1.20", "8.8.8.8"]
    ports = [443, 80, 53, 1234, 8443]
    frames = []
    ts = T0
    for _ in range(n):
        ts += rng.randrange(0, 30_000)
        frames.append(
            (
                ts,
                frame_to(
                    rng.choice(ips),
                    rng.randrange(60, 1500),
                    dst_port=rng.choice(ports),
                    src_mac=rng.choice(macs),
                    transport=rng.choice([Transport.TCP, Transport.UDP]),
                ),
            )
        )
    return frames


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_conservation_partition_order(tmp_path, seed):
    rng = random.Random(seed)
    frames = _random_capture(rng, rng.randrange(1, 1000))
    path = tmp_path / f"rand{seed}.pcap"
    write_pcap(str(path), frames)

    oracle_packets, oracle_bytes = pcap_ip_byte_total(str(path))
    records = list(ingest_pcap(str(path), DEVICE_MAP, 60_000, salt=b"s"))

    # conservation: exact byte equality against the per-packet oracle
    assert sum(r.byte_count for r in records) == oracle_bytes
    # partition: every packet lands in exactly one record
    assert sum(r.packet_count for r in records) == oracle_packets
    # order: nondecreasing window starts
    starts = [r.window_start_ms for r in records]
    assert starts == sorted(starts)
    # alignment
    assert all(r.window_start_ms % 60_000 == 0 for r in records)


@given(
    ip=st.one_of(
        st.ip_addresses(v=4).map(str),
        st.ip_addresses(v=6).map(str),
    )
)
@settings(max_examples=300)
def test_locality_matches_range_oracle(ip):
    assert is_local_ip(ip) == oracle_is_local(ip)


# ---------------------------------------------------------------------------
# encryption classification
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "port,transport,expected",
    [
        (443, Transport.TCP, Encryption.ENCRYPTED),
        (853, Transport.TCP, Encryption.ENCRYPTED),
        (8443, Transport.TCP, Encryption.ENCRYPTED),
        (80, Transport.TCP, Encryption.PLAINTEXT),
        (53, Transport.UDP, Encryption.PLAINTEXT),
        (443, Transport.UDP, Encryption.UNKNOWN),  # TLS ports are TCP-only rules
        (1234, Transport.UDP, Encryption.UNKNOWN),
        (22, Transport.TCP, Encryption.UNKNOWN),
    ],
)
def test_classify_encryption(port, transport, expected):
    assert classify_encryption(port, transport) is expected


# ---------------------------------------------------------------------------
# device identity
# ---------------------------------------------------------------------------


def test_register_device_deterministic():
    a = register_device(MAC_LAPTOP, "laptop", b"salt-1")
    b = register_device(MAC_LAPTOP, "laptop", b"salt-1")
    assert a.device_id == b.device_id


def test_register_device_salt_sensitive():
    a = register_device(MAC_LAPTOP, "laptop", b"salt-1")
    b = register_device(MAC_LAPTOP, "laptop", b"salt-2")
    assert a.device_id != b.device_id


def test_registered_device_retains_no_mac():
    device = register_device(MAC_LAPTOP, "laptop", b"salt-1")
    mac_bytes = bytes.fromhex(MAC_LAPTOP.replace(":", ""))
    for value in vars(device).values():
        assert MAC_LAPTOP not in str(value)
        assert not (isinstance(value, bytes) and mac_bytes in value)


def test_conflicting_registration_names_existing():
    registry = DeviceRegistry(b"s")
    registry.register(MAC_LAPTOP, "laptop")
    with pytest.raises(DeviceConflictError, match="laptop"):
        registry.register(MAC_LAPTOP, "tablet")
    # same name is idempotent
    registry.register(MAC_LAPTOP, "laptop")


def test_empty_salt_rejected():
    with pytest.raises(ValueError):
        DeviceRegistry(b"")
    with pytest.raises(ValueError):
        hash_mac(MAC_LAPTOP, b"")


def test_parse_device_map():
    text = "# home devices\naa:bb:cc:00:00:01\tlaptop\n\naa:bb:cc:00:00:02\tphone  # P2\n"
    assert parse_device_map(text) == {
        "aa:bb:cc:00:00:01": "laptop",
        "aa:bb:cc:00:00:02": "phone",
    }
    with pytest.raises(ValueError, match="line 1"):
        parse_device_map("aa:bb:cc:00:00:01 laptop\n")  # spaces, not a tab
