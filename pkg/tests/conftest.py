"""Shared builders: fixture-A dataset, synthetic captures, app factories."""

from __future__ import annotations

import pytest

from hearthgate.api import create_app
from hearthgate.config import AppConfig
from hearthgate.core import GatewayCore
from hearthgate.flowcap import build_frame, write_pcap
from hearthgate.flowcap.models import (
    Direction,
    Encryption,
    FlowRecord,
    Locality,
    Transport,
)

SALT = b"test-salt"
ADMIN_TOKEN = "test-admin"
MAC_LAPTOP = "aa:bb:cc:00:00:01"
MAC_PHONE = "aa:bb:cc:00:00:02"
GATEWAY_MAC = "02:00:00:00:00:01"

T0 = 1_700_000_000_000  # capture epoch for synthetic data
NOW = T0 + 3_600_000  # "now" one hour after the capture started
WINDOW_ALL = (0, NOW)

# fixture-A: six companies with byte volumes chosen so that, with EU as the
# home region, top-3 share is 74% and out-of-region share is 54%.
FIXTURE_A_COMPANIES = [
    ("A", "US", 40_000),
    ("B", "DE", 20_000),
    ("C", "US", 14_000),
    ("D", "FR", 10_000),
    ("E", "IE", 9_000),
    ("F", "NL", 7_000),
]

FIXTURE_A_TEXT = "".join(
    f"203.0.{i}.0/24\t{name}\t-\t{jur}\tNONE\n"
    for i, (name, jur, _bytes) in enumerate(FIXTURE_A_COMPANIES)
)

FIXTURE_A_DEVICE_MAP = {MAC_LAPTOP: "laptop"}

# corporate-group fixtures: two siblings under a parent that has no
# prefixes of its own
GROUP_FIXTURE_TEXT = (
    "198.51.100.0/24\tInstagram\tFacebook\tUS\tNONE\n"
    "198.51.101.0/24\tWhatsApp\tFacebook\tUS\tNONE\n"
)


def fixture_a_frames() -> list[tuple[int, bytes]]:
    """24 packets (4 per company) from one laptop, sizes per FIXTURE_A."""
    frames = []
    for i, (_name, _jur, total) in enumerate(FIXTURE_A_COMPANIES):
        parts = 4
        per = total // parts
        rem = total - per * parts
        for j in range(parts):
            size = per + (rem if j == 0 else 0)
            frames.append(
                (
                    T0 + i * 1000 + j,
                    build_frame(
                        MAC_LAPTOP,
                        GATEWAY_MAC,
                        "192.168.1.7",
                        f"203.0.{i}.9",
                        40_000 + i,
                        443,
                        Transport.TCP,
                        payload_len=size - 54,
                    ),
                )
            )
    return frames


@pytest.fixture
def fixture_a_pcap(tmp_path):
    path = tmp_path / "fixture_a.pcap"
    write_pcap(str(path), fixture_a_frames())
    return str(path)


def make_core(
    fixture_text: str | None = FIXTURE_A_TEXT,
    clock_ms: int = NOW,
    stage: int = 1,
    db_path: str = ":memory:",
) -> GatewayCore:
    state = {"now": clock_ms}
    config = AppConfig(
        db_path=db_path,
        salt=SALT,
        admin_token=ADMIN_TOKEN,
        initial_stage=stage,
    )
    core = GatewayCore(config, clock=lambda: state["now"])
    core._clock_state = state  # tests can advance time: core._clock_state["now"] = ...
    if fixture_text:
        core.load_fixture_text(fixture_text)
    return core


def ingest_fixture_a(core: GatewayCore, pcap_path: str) -> dict:
    core.register_device_map(FIXTURE_A_DEVICE_MAP)
    return core.ingest_pcap_file(pcap_path, device_map=FIXTURE_A_DEVICE_MAP)


@pytest.fixture
def core_with_fixture_a(fixture_a_pcap):
    core = make_core()
    ingest_fixture_a(core, fixture_a_pcap)
    return core


@pytest.fixture
def client_factory():
    from fastapi.testclient import TestClient

    def build(core: GatewayCore) -> "TestClient":
        return TestClient(create_app(core))

    return build


def make_flow(
    flow_id: str,
    device_id: str = "dev1",
    dst_ip: str = "203.0.0.9",
    dst_port: int = 443,
    transport: Transport = Transport.TCP,
    window_start_ms: int = T0,
    byte_count: int = 1000,
    packet_count: int = 1,
    direction: Direction = Direction.OUTBOUND,
    locality: Locality = Locality.EXTERNAL,
    encryption: Encryption = Encryption.ENCRYPTED,
) -> FlowRecord:
    return FlowRecord(
        id=flow_id,
        device_id=device_id,
        dst_ip=dst_ip,
        dst_port=dst_port,
        transport=transport,
        window_start_ms=window_start_ms,
        byte_count=byte_count,
        packet_count=packet_count,
        direction=direction,
        locality=locality,
        encryption=encryption,
    )
