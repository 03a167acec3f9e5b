"""
HTTP surface: every read and mutation the dashboard and CLI use, under
/v1/, plus the server-sent-event stream.

Every mutating route checks the stage gate and returns a structured
`stage_gate` error while the feature is locked, so clients can render a
"locked" state instead of a generic failure. Read routes return exactly
the owning module's result after canonical serialization; no route
recomputes analytics on its own.
"""

from __future__ import annotations

import io
from typing import Iterator

import anyio

from fastapi import Body, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel, Field

from .core import GatewayCore, _company_dict
from .flowcap.pcapio import IngestError
from .exposure import resolve_home_region
from .guard import (
    ALL_DEVICES,
    BlocklistSource,
    CompanyScope,
    DirectiveValidationError,
    ScopeKind,
)
from .resolver import FixtureError
from .stage import Feature, StageGateError, StageTransitionError
from .store import RedactionPendingError, StoreError
from .tutor import NotDueError, RenderError

API_PREFIX = "/v1"


class DirectiveScopeBody(BaseModel):
    kind: ScopeKind
    value: str


class CreateDirectiveBody(BaseModel):
    device_scope: str = Field(description=f"'{ALL_DEVICES}' or a device id")
    company_scope: DirectiveScopeBody


class StageBody(BaseModel):
    stage: int
    override: bool = False


class RedactionBody(BaseModel):
    scope_kind: str = Field(pattern="^(device|company|range)$")
    scope_value: str


class DeviceMapBody(BaseModel):
    devices: dict[str, str]


class DeviceNameBody(BaseModel):
    name: str


class BlocklistBody(BaseModel):
    id: str
    name: str
    text: str
    enabled: bool = True


class UnauthorizedError(Exception):
    pass


def _device_dict(device) -> dict:
    return {
        "device_id": device.device_id,
        "friendly_name": device.friendly_name,
        "first_seen_ms": device.first_seen_ms,
        "last_seen_ms": device.last_seen_ms,
    }


def create_app(core: GatewayCore) -> FastAPI:
    app = FastAPI(title="hearthgate", version="0.1.0", docs_url=None, redoc_url=None)

    # -- error envelope ------------------------------------------------------

    @app.exception_handler(StageGateError)
    def stage_gate_handler(request: Request, exc: StageGateError):
        return JSONResponse(
            status_code=403,
            content={
                "error": "stage_gate",
                "feature": exc.feature.value,
                "current_stage": exc.current_stage,
                "required_stage": exc.required_stage,
                "detail": str(exc),
            },
        )

    @app.exception_handler(UnauthorizedError)
    def unauthorized_handler(request: Request, exc: UnauthorizedError):
        return JSONResponse(
            status_code=401, content={"error": "unauthorized", "detail": str(exc)}
        )

    @app.exception_handler(KeyError)
    def not_found_handler(request: Request, exc: KeyError):
        return JSONResponse(
            status_code=404, content={"error": "not_found", "detail": str(exc.args[0])}
        )

    @app.exception_handler(NotDueError)
    @app.exception_handler(StageTransitionError)
    @app.exception_handler(RedactionPendingError)
    def conflict_handler(request: Request, exc: Exception):
        return JSONResponse(
            status_code=409, content={"error": "conflict", "detail": str(exc)}
        )

    @app.exception_handler(DirectiveValidationError)
    @app.exception_handler(IngestError)
    @app.exception_handler(FixtureError)
    @app.exception_handler(RenderError)
    @app.exception_handler(StoreError)
    @app.exception_handler(ValueError)
    def validation_handler(request: Request, exc: Exception):
        return JSONResponse(
            status_code=422, content={"error": "validation", "detail": str(exc)}
        )

    def require_admin(token: str | None) -> None:
        expected = core.config.admin_token
        if expected and token != expected:
            raise UnauthorizedError("admin token missing or wrong")

    def window_or_default(start: int | None, end: int | None) -> tuple[int, int]:
        return (start or 0, end if end is not None else core.now_ms())

    # -- health / stage ---------------------------------------------------------

    @app.get(API_PREFIX + "/health")
    def health():
        return {"status": "ok", "stage": core.stage.stage}

    @app.get(API_PREFIX + "/stage")
    def get_stage():
        return core.stage.to_dict()

    @app.post(API_PREFIX + "/stage")
    def set_stage(body: StageBody, x_admin_token: str | None = Header(default=None)):
        require_admin(x_admin_token)
        return core.set_stage(body.stage, override=body.override).to_dict()

    # -- ingest / devices ----------------------------------------------------------

    @app.post(API_PREFIX + "/ingest/pcap")
    async def ingest_pcap(
        request: Request,
        coalesce_window_ms: int | None = Query(default=None, gt=0),
        speed: float = Query(default=0.0, ge=0.0),
    ):
        data = await request.body()
        return await anyio.to_thread.run_sync(
            lambda: core.ingest_pcap_bytes(
                data, coalesce_window_ms=coalesce_window_ms, speed=speed
            )
        )

    @app.post(API_PREFIX + "/devices/map")
    def register_devices(body: DeviceMapBody):
        devices = core.register_device_map(body.devices)
        return {"devices": [_device_dict(d) for d in devices]}

    @app.get(API_PREFIX + "/devices")
    def list_devices():
        return {"devices": [_device_dict(d) for d in core.store.list_devices()]}

    @app.post(API_PREFIX + "/devices/{device_id}/name")
    def rename_device(device_id: str, body: DeviceNameBody):
        device = core.store.rename_device(device_id, body.name)
        core.registry.preload([device])
        core.registry.rename(device_id, body.name)
        return _device_dict(device)

    # -- exposure reads ---------------------------------------------------------------

    @app.get(API_PREFIX + "/timeseries")
    def timeseries(
        start: int | None = None,
        end: int | None = None,
        bucket_width_ms: int | None = Query(default=None, gt=0),
        device: str | None = None,
        company: str | None = None,
    ):
        # default to the trailing hour: a full-history series at storage
        # width would be mostly gap points
        if end is None:
            end = core.now_ms()
        if start is None:
            start = end - 3_600_000
        window = (start, end)
        points = core.exposure.timeseries(
            window, bucket_width_ms=bucket_width_ms, device_id=device, company=company
        )
        return {
            "window": list(window),
            "bucket_width_ms": bucket_width_ms or core.exposure.bucket_width_ms,
            "device_id": device,
            "company": company,
            "points": [[p, b] for p, b in points],
        }

    @app.get(API_PREFIX + "/profile")
    def profile(
        start: int | None = None,
        end: int | None = None,
        format: str = Query(default="json", pattern="^(json|csv)$"),
    ):
        result = core.exposure.profile(window_or_default(start, end))
        if format == "csv":
            return PlainTextResponse(result.to_csv(), media_type="text/csv")
        return {
            "window": list(result.window),
            "rows": [
                {
                    "device_id": r.device_id,
                    "company": r.company,
                    "jurisdiction": r.jurisdiction,
                    "byte_count": r.byte_count,
                    "packet_count": r.packet_count,
                    "share": r.share,
                }
                for r in result.rows
            ],
        }

    @app.get(API_PREFIX + "/report")
    def report(
        start: int | None = None,
        end: int | None = None,
        top_n: int = Query(default=3, ge=1),
        home_region: str | None = None,
        format: str = Query(default="json", pattern="^(json|csv)$"),
    ):
        window = window_or_default(start, end)
        region = (
            resolve_home_region(home_region) if home_region else core.home_region
        )
        stats = core.exposure.stats_report(window, top_n=top_n, home_region=region)
        if format == "csv":
            return PlainTextResponse(stats.to_csv(), media_type="text/csv")
        return {"window": list(window), **stats.to_dict()}

    @app.get(API_PREFIX + "/compare")
    def compare(
        start_a: int,
        end_a: int,
        start_b: int,
        end_b: int,
        device: str | None = None,
        company: str | None = None,
    ):
        result = core.exposure.compare_periods(
            (start_a, end_a), (start_b, end_b), device_id=device, company=company
        )
        return {
            "window_a": [start_a, end_a],
            "window_b": [start_b, end_b],
            **result.to_dict(),
        }

    @app.get(API_PREFIX + "/companies")
    def companies():
        return {"companies": [_company_dict(c) for c in core.store.list_companies()]}

    # -- fixtures --------------------------------------------------------------------

    @app.get(API_PREFIX + "/fixtures")
    def fixtures():
        index = core.resolver.fixtures
        return {
            "entries": len(index),
            "companies": sorted(index.companies()),
        }

    @app.post(API_PREFIX + "/fixtures")
    async def load_fixtures(request: Request):
        text = (await request.body()).decode("utf-8")
        count = core.load_fixture_text(text)
        return {"entries": count}

    # -- guard -----------------------------------------------------------------------

    @app.get(API_PREFIX + "/directives")
    def list_directives():
        return {"directives": [d.to_dict() for d in core.guard.list_directives()]}

    @app.post(API_PREFIX + "/directives")
    def create_directive(body: CreateDirectiveBody):
        directive = core.guard.create_directive(
            device_scope=body.device_scope,
            company_scope=CompanyScope(body.company_scope.kind, body.company_scope.value),
            stage=core.stage,
            now_ms=core.now_ms(),
        )
        core.refresh_ruleset()
        return directive.to_dict()

    @app.post(API_PREFIX + "/directives/{directive_id}/enable")
    def enable_directive(directive_id: str):
        core.stage.require(Feature.CONTROLS)
        directive = core.guard.enable(directive_id)
        core.refresh_ruleset()
        return directive.to_dict()

    @app.post(API_PREFIX + "/directives/{directive_id}/disable")
    def disable_directive(directive_id: str):
        core.stage.require(Feature.CONTROLS)
        directive = core.guard.disable(directive_id)
        core.refresh_ruleset()
        return directive.to_dict()

    @app.get(API_PREFIX + "/directives/export")
    def export_directives():
        return core.guard.export_directives()

    @app.post(API_PREFIX + "/directives/import")
    def import_directives(data: dict = Body()):
        core.stage.require(Feature.CONTROLS)
        count = core.guard.import_directives(data)
        core.refresh_ruleset()
        return {"imported": count}

    @app.get(API_PREFIX + "/directives/{directive_id}")
    def get_directive(directive_id: str):
        return core.guard.get_directive(directive_id).to_dict()

    @app.get(API_PREFIX + "/directives/{directive_id}/preview")
    def preview_directive(
        directive_id: str, start: int | None = None, end: int | None = None
    ):
        core.stage.require(Feature.CONTROLS)
        directive = core.guard.get_directive(directive_id)
        preview = core.guard.preview_impact(directive, window_or_default(start, end))
        return preview.to_dict()

    @app.get(API_PREFIX + "/directives/{directive_id}/suggestions")
    def directive_suggestions(directive_id: str, lookback_ms: int | None = Query(default=None, gt=0)):
        directive = core.guard.get_directive(directive_id)
        kwargs = {"lookback_ms": lookback_ms} if lookback_ms else {}
        suggestions = core.guard.suggest_similar(directive, core.now_ms(), **kwargs)
        return {"suggestions": [s.to_dict() for s in suggestions]}

    @app.get(API_PREFIX + "/ruleset")
    def ruleset():
        return core.guard.current_ruleset.to_dict()

    @app.get(API_PREFIX + "/blocklists")
    def blocklists():
        return {"blocklists": [b.to_dict() for b in core.guard.blocklists()]}

    @app.post(API_PREFIX + "/blocklists")
    def save_blocklist(body: BlocklistBody):
        core.stage.require(Feature.CONTROLS)
        blocklist = core.guard.save_blocklist(
            body.id, body.name, body.text, BlocklistSource.USER, body.enabled
        )
        core.refresh_ruleset()
        return blocklist.to_dict()

    # -- curriculum -------------------------------------------------------------------

    @app.get(API_PREFIX + "/curriculum/modules")
    def curriculum_modules():
        completions = core.store.curriculum_completions()
        return {
            "modules": [
                {
                    "id": m.id,
                    "title": m.title,
                    "offset_days": m.stage_offset_days,
                    "completed_at_ms": completions.get(m.id),
                }
                for m in core.tutor.list_modules()
            ]
        }

    @app.get(API_PREFIX + "/curriculum/due")
    def curriculum_due():
        return {"due": core.tutor.schedule(core.stage, core.now_ms())}

    @app.get(API_PREFIX + "/curriculum/{module_id}/rendered")
    def curriculum_rendered(
        module_id: str, start: int | None = None, end: int | None = None
    ):
        rendered = core.tutor.render(module_id, window_or_default(start, end))
        return rendered.to_dict()

    @app.post(API_PREFIX + "/curriculum/{module_id}/complete")
    def curriculum_complete(module_id: str):
        core.stage.require(Feature.CURRICULUM)
        completed_at = core.tutor.mark_complete(module_id, core.stage, core.now_ms())
        core.check_curriculum_due()
        return {"module_id": module_id, "completed_at_ms": completed_at}

    # -- redaction ----------------------------------------------------------------------

    @app.post(API_PREFIX + "/redactions")
    def submit_redaction(body: RedactionBody):
        # Redaction is a privacy right, available at every stage.
        executed = core.redact(body.scope_kind, body.scope_value)
        return {
            "id": executed.id,
            "scope_kind": executed.scope_kind,
            "scope_value": executed.scope_value,
            "requested_at_ms": executed.requested_at_ms,
            "executed_at_ms": executed.executed_at_ms,
            "rows_removed": executed.rows_removed,
        }

    @app.get(API_PREFIX + "/redactions")
    def redaction_audit():
        return {
            "redactions": [
                {
                    "id": r.id,
                    "scope_kind": r.scope_kind,
                    "scope_value": r.scope_value,
                    "requested_at_ms": r.requested_at_ms,
                    "executed_at_ms": r.executed_at_ms,
                    "rows_removed": r.rows_removed,
                }
                for r in core.store.redaction_audit()
            ]
        }

    # -- export ------------------------------------------------------------------------

    @app.get(API_PREFIX + "/export/flows")
    def export_flows():
        buf = io.StringIO()
        core.store.export_flows(buf)
        return PlainTextResponse(buf.getvalue(), media_type="application/x-ndjson")

    @app.post(API_PREFIX + "/import/flows")
    async def import_flows(request: Request):
        text = (await request.body()).decode("utf-8")
        count = core.store.import_flows(text.splitlines())
        return {"imported": count}

    # -- stream -------------------------------------------------------------------------

    @app.get(API_PREFIX + "/stream")
    def stream(
        request: Request,
        since: int | None = Query(default=None, ge=0),
        limit: int | None = Query(default=None, gt=0),
        heartbeat_s: float = Query(default=15.0, gt=0.0),
    ):
        if since is None:
            last_event_id = request.headers.get("last-event-id")
            if last_event_id and last_event_id.isdigit():
                since = int(last_event_id)

        def generate() -> Iterator[str]:
            with core.events.subscribe(since) as sub:
                sent = 0
                while limit is None or sent < limit:
                    event = sub.get(timeout=heartbeat_s)
                    if event is None:
                        yield ": keep-alive\n\n"
                        continue
                    yield event.to_sse()
                    sent += 1

        return StreamingResponse(generate(), media_type="text/event-stream")

    # -- static dashboard ---------------------------------------------------------------

    if core.config.static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=core.config.static_dir, html=True))

    return app
