"""
Command-line operation of the gateway. Every command except `serve` is a
thin client of the HTTP API: outputs are rendered straight from API
payloads with no local recomputation.

Exit codes:
  0 success
  1 unexpected error
  2 gateway unreachable (connection refused/timeout)
  3 validation error (HTTP 422)
  4 stage gate: feature locked at the current stage (HTTP 403)
  5 not found (HTTP 404)
  6 conflict, e.g. completing a module that is not due (HTTP 409)
"""

from __future__ import annotations

import json
import os
import sys

import click
import requests

DEFAULT_GATEWAY = "http://127.0.0.1:8799"

_STATUS_EXIT = {422: 3, 400: 3, 403: 4, 401: 4, 404: 5, 409: 6}


class Client:
    def __init__(self, gateway: str, admin_token: str | None):
        self.gateway = gateway.rstrip("/")
        self.admin_token = admin_token

    def request(self, method: str, path: str, **kwargs) -> requests.Response:
        headers = kwargs.pop("headers", {})
        if self.admin_token:
            headers["X-Admin-Token"] = self.admin_token
        try:
            response = requests.request(
                method, self.gateway + path, headers=headers, timeout=60, **kwargs
            )
        except requests.exceptions.ConnectionError:
            _fail(2, {"error": "connection_refused", "gateway": self.gateway})
        except requests.exceptions.Timeout:
            _fail(2, {"error": "timeout", "gateway": self.gateway})
        if response.status_code >= 400:
            try:
                detail = response.json()
            except ValueError:
                detail = {"error": "http", "detail": response.text[:200]}
            detail["status"] = response.status_code
            _fail(_STATUS_EXIT.get(response.status_code, 1), detail)
        return response


def _fail(code: int, payload: dict):
    click.echo("error: " + json.dumps(payload, sort_keys=True), err=True)
    sys.exit(code)


def _print_json(data) -> None:
    click.echo(json.dumps(data, sort_keys=True, indent=2))


@click.group(epilog="Exit codes: 0 ok, 2 unreachable, 3 validation, 4 stage-gate, 5 not found, 6 conflict.")
@click.option(
    "--gateway",
    default=lambda: os.environ.get("HEARTHGATE_URL", DEFAULT_GATEWAY),
    show_default=DEFAULT_GATEWAY,
    help="Gateway base URL.",
)
@click.option(
    "--admin-token",
    default=lambda: os.environ.get("HEARTHGATE_ADMIN_TOKEN"),
    help="Admin token for stage changes.",
)
@click.pass_context
def main(ctx, gateway: str, admin_token: str | None):
    """Operate a hearthgate home-network privacy gateway."""
    ctx.obj = Client(gateway, admin_token)


# -- serve -------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--db", "db_path", default=None)
@click.option("--fixtures", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--static-dir", type=click.Path(exists=True), default=None)
@click.option("--stage", "initial_stage", type=click.IntRange(1, 3), default=None)
def serve(config_path, host, port, db_path, fixture_path, static_dir, initial_stage):
    """Run the gateway API (and dashboard, if assets are configured)."""
    import uvicorn

    from .api import create_app
    from .config import load_config
    from .core import GatewayCore

    config = load_config(config_path)
    for attr, value in (
        ("host", host),
        ("port", port),
        ("db_path", db_path),
        ("fixture_path", fixture_path),
        ("static_dir", static_dir),
        ("initial_stage", initial_stage),
    ):
        if value is not None:
            setattr(config, attr, value)
    core = GatewayCore(config)
    app = create_app(core)
    click.echo(f"serving on http://{config.host}:{config.port} (stage {core.stage.stage})")
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


# -- replay -------------------------------------------------------------------


@main.command()
@click.argument("pcap", type=click.Path(exists=True))
@click.option("--device-map", "device_map_path", type=click.Path(exists=True), default=None)
@click.option("--coalesce-ms", type=int, default=None)
@click.option("--speed", type=float, default=0.0, help="Pace replay at N x capture time.")
@click.option("--as-fast-as-possible", is_flag=True, help="No pacing (default).")
@click.pass_obj
def replay(client: Client, pcap, device_map_path, coalesce_ms, speed, as_fast_as_possible):
    """Replay a pcap/pcapng capture through the gateway."""
    if as_fast_as_possible:
        speed = 0.0
    if device_map_path:
        from .flowcap.models import parse_device_map

        with open(device_map_path, "r", encoding="utf-8") as fh:
            mapping = parse_device_map(fh.read())
        client.request("POST", "/v1/devices/map", json={"devices": mapping})
    params = {"speed": speed}
    if coalesce_ms:
        params["coalesce_window_ms"] = coalesce_ms
    with open(pcap, "rb") as fh:
        data = fh.read()
    summary = client.request(
        "POST",
        "/v1/ingest/pcap",
        params=params,
        data=data,
        headers={"Content-Type": "application/octet-stream"},
    ).json()
    click.echo(
        f"{summary['flows']} flows ingested "
        f"({summary['packets']} packets, {summary['bytes']} bytes, "
        f"{summary['packets_skipped']} skipped)"
    )


# -- devices ------------------------------------------------------------------


@main.group()
def devices():
    """List or rename devices."""


@devices.command("list")
@click.pass_obj
def devices_list(client: Client):
    data = client.request("GET", "/v1/devices").json()
    if not data["devices"]:
        click.echo("no devices registered")
        return
    for d in data["devices"]:
        click.echo(
            f"{d['device_id']}  {d['friendly_name']}  "
            f"first={d['first_seen_ms']} last={d['last_seen_ms']}"
        )


@devices.command("name")
@click.argument("device_id")
@click.argument("name")
@click.pass_obj
def devices_name(client: Client, device_id, name):
    d = client.request(
        "POST", f"/v1/devices/{device_id}/name", json={"name": name}
    ).json()
    click.echo(f"{d['device_id']}  {d['friendly_name']}")


# -- stage ---------------------------------------------------------------------


@main.group()
def stage():
    """Inspect or advance the deployment stage."""


@stage.command("get")
@click.pass_obj
def stage_get(client: Client):
    click.echo(client.request("GET", "/v1/stage").json()["stage"])


@stage.command("set")
@click.argument("value", type=click.IntRange(1, 3))
@click.option("--override", is_flag=True, help="Allow moving backwards.")
@click.pass_obj
def stage_set(client: Client, value, override):
    data = client.request(
        "POST", "/v1/stage", json={"stage": value, "override": override}
    ).json()
    click.echo(f"stage {data['stage']} (features: {', '.join(data['features'])})")


# -- fixtures ----------------------------------------------------------------------


@main.group()
def fixtures():
    """Manage the destination-enrichment fixture set."""


@fixtures.command("load")
@click.argument("path", type=click.Path(exists=True))
@click.pass_obj
def fixtures_load(client: Client, path):
    with open(path, "rb") as fh:
        data = fh.read()
    result = client.request(
        "POST", "/v1/fixtures", data=data, headers={"Content-Type": "text/plain"}
    ).json()
    click.echo(f"{result['entries']} entries loaded")


# -- report ---------------------------------------------------------------------------


@main.command()
@click.option("--window", nargs=2, type=int, default=None, help="START_MS END_MS")
@click.option("--top-n", type=int, default=3, show_default=True)
@click.option("--home-region", default=None, help='Region name ("EU") or CSV of country codes.')
@click.option("--json", "as_json", is_flag=True, help="Print the raw JSON payload.")
@click.pass_obj
def report(client: Client, window, top_n, home_region, as_json):
    """Exposure statistics over a window (default: everything so far)."""
    params: dict = {"top_n": top_n}
    if window:
        params["start"], params["end"] = window
    if home_region:
        params["home_region"] = home_region
    data = client.request("GET", "/v1/report", params=params).json()
    if as_json:
        _print_json(data)
        return
    top_share = data["top_n_share"] * 100
    out_share = data["out_of_region_share"] * 100
    region_label = home_region or "EU"
    rows = [
        ("window", f"{data['window'][0]} .. {data['window'][1]}"),
        ("total bytes", str(data["total_bytes"])),
        ("total packets", str(data["total_packets"])),
        ("devices", str(data["distinct_devices"])),
        ("companies", str(data["distinct_companies"])),
        ("jurisdictions", str(data["distinct_jurisdictions"])),
        ("destinations", str(data["distinct_destinations"])),
        (f"top-{data['top_n']} share", f"{top_share:.1f}%"),
        ("out-of-region", f"{out_share:.1f}% (home region: {region_label})"),
    ]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        click.echo(f"{key:<{width}}  {value}")


# -- export -----------------------------------------------------------------------------


@main.group()
def export():
    """Export stored data."""


@export.command("flows")
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def export_flows(client: Client, output):
    text = client.request("GET", "/v1/export/flows").text
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
        click.echo(f"wrote {output}")
    else:
        click.echo(text, nl=False)


@export.command("directives")
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def export_directives(client: Client, output):
    data = client.request("GET", "/v1/directives/export").json()
    text = json.dumps(data, sort_keys=True, indent=2)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        click.echo(f"wrote {output}")
    else:
        click.echo(text)


# -- redact -------------------------------------------------------------------------------


@main.group()
def redact():
    """Redact stored data by device, company, or time range."""


def _do_redact(client: Client, kind: str, value: str):
    data = client.request(
        "POST", "/v1/redactions", json={"scope_kind": kind, "scope_value": value}
    ).json()
    click.echo(f"redacted {kind}={value}: {data['rows_removed']} rows removed")


@redact.command("device")
@click.argument("device_id")
@click.pass_obj
def redact_device(client: Client, device_id):
    _do_redact(client, "device", device_id)


@redact.command("company")
@click.argument("name")
@click.pass_obj
def redact_company(client: Client, name):
    _do_redact(client, "company", name)


@redact.command("range")
@click.argument("start_ms", type=int)
@click.argument("end_ms", type=int)
@click.pass_obj
def redact_range(client: Client, start_ms, end_ms):
    _do_redact(client, "range", f"{start_ms}..{end_ms}")


if __name__ == "__main__":
    main()
