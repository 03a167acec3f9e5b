"""CLI: thin-client behaviour against a live gateway."""

from __future__ import annotations

import json
import threading
import time

import pytest
import uvicorn
from click.testing import CliRunner

from hearthgate.api import create_app
from hearthgate.cli import main
from hearthgate.flowcap import write_pcap

from .conftest import (
    ADMIN_TOKEN,
    FIXTURE_A_TEXT,
    MAC_LAPTOP,
    fixture_a_frames,
    make_core,
)


@pytest.fixture(scope="module")
def gateway(tmp_path_factory):
    core = make_core()
    server = uvicorn.Server(
        uvicorn.Config(create_app(core), host="127.0.0.1", port=0, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        assert time.monotonic() < deadline, "server failed to start"
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}", core
    server.should_exit = True
    thread.join(timeout=5)


@pytest.fixture(scope="module")
def paths(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    pcap = base / "fixture_a.pcap"
    write_pcap(str(pcap), fixture_a_frames())
    empty = base / "empty.pcap"
    write_pcap(str(empty), [])
    device_map = base / "devices.map"
    device_map.write_text(f"{MAC_LAPTOP}\tlaptop\n")
    fixtures = base / "fixtures.tsv"
    fixtures.write_text(FIXTURE_A_TEXT)
    return base


def run(gateway, *args, token: str | None = None):
    argv = ["--gateway", gateway[0]]
    if token:
        argv += ["--admin-token", token]
    return CliRunner().invoke(main, argv + list(args))


def test_replay_empty_pcap(gateway, paths):
    result = run(gateway, "replay", str(paths / "empty.pcap"))
    assert result.exit_code == 0, result.output
    assert "0 flows ingested" in result.output


def test_replay_fixture_a(gateway, paths):
    result = run(
        gateway,
        "replay",
        str(paths / "fixture_a.pcap"),
        "--device-map",
        str(paths / "devices.map"),
    )
    assert result.exit_code == 0, result.output
    assert "6 flows ingested" in result.output
    assert "24 packets" in result.output


def test_devices_list(gateway, paths):
    result = run(gateway, "devices", "list")
    assert result.exit_code == 0
    assert "laptop" in result.output


def test_report_table_format_targets(gateway, paths):
    result = run(gateway, "report", "--top-n", "3", "--home-region", "EU")
    assert result.exit_code == 0, result.output
    assert "74.0%" in result.output
    assert "54.0%" in result.output


def test_report_json_stable(gateway, paths):
    result = run(gateway, "report", "--json")
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert payload["top_n_share"] == 0.74
    # stable ordering for golden comparisons
    assert result.output == json.dumps(payload, sort_keys=True, indent=2) + "\n"


def test_stage_set_requires_token(gateway, paths):
    result = run(gateway, "stage", "set", "3")
    assert result.exit_code == 4
    assert result.output.startswith("error: ") or "error" in result.output


def test_stage_set_get_roundtrip(gateway, paths):
    result = run(gateway, "stage", "set", "3", token=ADMIN_TOKEN)
    assert result.exit_code == 0, result.output
    result = run(gateway, "stage", "get")
    assert result.exit_code == 0
    assert result.output.strip() == "3"


def test_fixtures_load(gateway, paths):
    result = run(gateway, "fixtures", "load", str(paths / "fixtures.tsv"))
    assert result.exit_code == 0, result.output
    assert "6 entries loaded" in result.output


def test_devices_rename(gateway, paths):
    import requests

    devices = requests.get(gateway[0] + "/v1/devices", timeout=5).json()["devices"]
    device_id = devices[0]["device_id"]
    result = run(gateway, "devices", "name", device_id, "den laptop")
    assert result.exit_code == 0
    assert "den laptop" in result.output


def test_export_flows_to_file(gateway, paths):
    out = paths / "flows.jsonl"
    result = run(gateway, "export", "flows", "-o", str(out))
    assert result.exit_code == 0
    lines = out.read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "flow-export"
    assert len(lines) == 7  # header + six flows


def test_export_directives(gateway, paths):
    result = run(gateway, "export", "directives")
    assert result.exit_code == 0
    assert json.loads(result.output)["kind"] == "directive-export"


def test_redact_company(gateway, paths):
    result = run(gateway, "redact", "company", "F")
    assert result.exit_code == 0
    assert "rows removed" in result.output
    report = run(gateway, "report", "--json")
    assert json.loads(report.output)["distinct_companies"] == 5


def test_redact_bad_range_validation_exit(gateway, paths):
    result = run(gateway, "redact", "range", "100", "50")
    assert result.exit_code == 3, result.output


def test_connection_refused_exit_code(paths):
    result = CliRunner().invoke(
        main, ["--gateway", "http://127.0.0.1:9", "stage", "get"]
    )
    assert result.exit_code == 2
    assert "connection_refused" in result.output
