"""
Gateway core: wires capture, enrichment, exposure, guard, tutor, store,
stage gating, and the event stream into one object the API and CLI share.

Ingest is the single writer; everything it learns is pushed onto the event
bus (bucket updates, newly resolved companies, rule-set versions,
curriculum-due notices) for live clients.
"""

from __future__ import annotations

import os
import tempfile
import time
from typing import Callable

from .config import AppConfig
from .events import EventBus
from .exposure import ExposureModel, resolve_home_region
from .flowcap.ingest import FlowCoalescer
from .flowcap.models import Device, DeviceRegistry, Locality, parse_device_map
from .flowcap.pcapio import ReaderStats, iter_raw_headers
from .guard import GuardEngine, SimulatedAdapter
from .resolver import Resolver
from .stage import StageConfig, StageManager
from .store import RedactionRequest, Store
from .tutor import Tutor


def _wall_clock_ms() -> int:
    return int(time.time() * 1000)


class GatewayCore:
    def __init__(self, config: AppConfig, clock: Callable[[], int] = _wall_clock_ms):
        self.config = config
        self.clock = clock
        self.store = Store(config.db_path, bucket_width_ms=config.bucket_width_ms)
        self.resolver = Resolver()
        if config.fixture_path:
            self.resolver.load_fixtures(config.fixture_path)
        self.registry = DeviceRegistry(config.require_salt())
        self.registry.preload(self.store.list_devices())
        self.exposure = ExposureModel(self.store, include_inbound=config.include_inbound)
        self.guard = GuardEngine(self.store, self.resolver)
        self.guard.install_sample_blocklists()
        self.tutor = Tutor(self.store, self.exposure)
        self.stages = StageManager(
            self.store, initial_stage=config.initial_stage, now_ms=clock()
        )
        self.events = EventBus()
        self.adapter = SimulatedAdapter()
        self.home_region = resolve_home_region(config.home_region)
        self._known_companies: set[str] = {c.name for c in self.store.list_companies()}
        self._last_due: set[str] = set()

    def now_ms(self) -> int:
        return self.clock()

    @property
    def stage(self) -> StageConfig:
        return self.stages.get()

    # -- ingest ------------------------------------------------------------

    def ingest_pcap_file(
        self,
        path: str,
        device_map: dict[str, str] | None = None,
        coalesce_window_ms: int | None = None,
        speed: float = 0.0,
    ) -> dict:
        """
        Replay a capture into the store. speed=0 runs as fast as possible;
        speed=N paces the replay at N x capture time (for live-view demos).
        """
        coalesce = coalesce_window_ms or self.config.coalesce_window_ms
        coalescer = FlowCoalescer(self.registry, coalesce)
        if device_map:
            coalescer.prime(device_map, self.now_ms())
        stats = ReaderStats()
        flows = 0
        first_ts: int | None = None
        wall_start = time.monotonic()
        for tup in iter_raw_headers(path, stats):
            if speed > 0:
                if first_ts is None:
                    first_ts = tup[0]
                lag = (tup[0] - first_ts) / 1000 / speed - (time.monotonic() - wall_start)
                if lag > 0:
                    time.sleep(lag)
            for record in coalescer.push(*tup):
                self._consume_flow(record)
                flows += 1
        for record in coalescer.finish():
            self._consume_flow(record)
            flows += 1
        self._sync_devices()
        self.check_curriculum_due()
        return {
            "flows": flows,
            "packets": stats.packets_ip,
            "packets_skipped": stats.packets_skipped,
            "bytes": stats.bytes_ip,
        }

    def ingest_pcap_bytes(self, data: bytes, **kwargs) -> dict:
        fd, path = tempfile.mkstemp(suffix=".pcap")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            return self.ingest_pcap_file(path, **kwargs)
        finally:
            os.unlink(path)

    def _consume_flow(self, record) -> None:
        now = self.now_ms()
        if record.locality is Locality.EXTERNAL:
            company = self.resolver.resolve(record.dst_ip, now)
            self.store.persist_flow(
                record, company=company.name, jurisdiction=company.jurisdiction,
                now_ms=now,
            )
            if company.name not in self._known_companies:
                self._known_companies.add(company.name)
                self.store.upsert_company(company)
                self.events.emit("company", _company_dict(company))
            bucket = self.exposure.add_flow(record, company)
            if bucket is not None:
                self.events.emit(
                    "bucket",
                    {
                        "bucket_start_ms": bucket.bucket_start_ms,
                        "bucket_width_ms": bucket.bucket_width_ms,
                        "device_id": bucket.device_id,
                        "company": bucket.company,
                        "jurisdiction": bucket.jurisdiction,
                        "byte_count": bucket.byte_count,
                        "packet_count": bucket.packet_count,
                    },
                )
        else:
            self.store.persist_flow(record, now_ms=now)

    def _sync_devices(self) -> None:
        for device in self.registry.all():
            self.store.upsert_device(device)

    def register_device_map(self, device_map: dict[str, str]) -> list[Device]:
        devices = []
        for mac, name in device_map.items():
            device = self.registry.register(mac, name, self.now_ms())
            self.store.upsert_device(device)
            devices.append(device)
        return devices

    def register_device_map_text(self, text: str) -> list[Device]:
        return self.register_device_map(parse_device_map(text))

    # -- control plane -------------------------------------------------------

    def set_stage(self, stage: int, override: bool = False) -> StageConfig:
        config = self.stages.set_stage(stage, self.now_ms(), override=override)
        self.events.emit("stage", config.to_dict())
        self.check_curriculum_due()
        return config

    def load_fixture_text(self, text: str) -> int:
        count = self.resolver.load_fixture_text(text)
        self.refresh_ruleset()
        return count

    def refresh_ruleset(self) -> None:
        """Recompile and re-apply; company->IP bindings follow resolver data."""
        ruleset = self.guard.recompile(self.now_ms())
        status = self.guard.apply(ruleset, self.adapter)
        self.events.emit(
            "ruleset",
            {
                "version": ruleset.version,
                "entries": len(ruleset.entries),
                "inert_directive_ids": list(ruleset.inert_directive_ids),
                "applied": status.ok,
                "version_in_force": status.version_in_force,
            },
        )

    def redact(self, scope_kind: str, scope_value: str) -> RedactionRequest:
        now = self.now_ms()
        executed = self.store.redact(
            RedactionRequest(
                scope_kind=scope_kind, scope_value=scope_value, requested_at_ms=now
            ),
            now_ms=now,
        )
        self.events.emit(
            "redaction",
            {
                "id": executed.id,
                "scope_kind": executed.scope_kind,
                "scope_value": executed.scope_value,
                "rows_removed": executed.rows_removed,
            },
        )
        return executed

    def check_curriculum_due(self) -> list[str]:
        due = self.tutor.schedule(self.stage, self.now_ms())
        newly = [m for m in due if m not in self._last_due]
        for module_id in newly:
            self.events.emit("curriculum_due", {"module_id": module_id})
        self._last_due = set(due)
        return due


def _company_dict(company) -> dict:
    return {
        "name": company.name,
        "parent": company.parent,
        "jurisdiction": company.jurisdiction,
        "threat": company.threat.value,
        "source": company.source.value,
        "resolved_at_ms": company.resolved_at_ms,
        "ttl_ms": company.ttl_ms,
    }
