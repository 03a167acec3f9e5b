"""
Durable persistence: flows, devices, companies, exposure buckets,
directives, blocklists, curriculum state, and the redaction audit log.

Single-node embedded sqlite, file-backed (or :memory: for tests); the
deployment target is one appliance, not a fleet. One writer pipeline and
many readers share a single connection behind a lock; redaction takes the
same lock as its short exclusive section.

The bucket ledger records exactly which flow ids have been folded into
exposure buckets. Redaction rebuilds affected buckets from that ledger,
so the rebuild reproduces whatever bucketing policy produced them.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from dataclasses import dataclass
from typing import IO, Iterable

from .flowcap.models import Device, Direction, Encryption, FlowRecord, Locality, Transport
from .resolver import CompanyRecord, Source, Threat

FLOW_EXPORT_SCHEMA = 1
DEFAULT_BUCKET_WIDTH_MS = 60_000
DEFAULT_REDACTION_GRACE_MS = 300_000


class StoreError(Exception):
    pass


class DuplicateFlowError(StoreError):
    pass


class RedactionPendingError(StoreError):
    """Write rejected: its scope was redacted within the grace period."""


@dataclass
class StoredFlow:
    """A flow row as persisted: the record plus its enrichment at ingest."""

    record: FlowRecord
    company: str | None = None
    jurisdiction: str | None = None


@dataclass
class RedactionRequest:
    scope_kind: str  # device | company | range
    scope_value: str
    requested_at_ms: int
    executed_at_ms: int | None = None
    rows_removed: int = 0
    id: int | None = None


_SCHEMA = """
CREATE TABLE IF NOT EXISTS flows (
    id TEXT PRIMARY KEY,
    device_id TEXT NOT NULL,
    dst_ip TEXT NOT NULL,
    dst_port INTEGER NOT NULL,
    transport TEXT NOT NULL,
    window_start_ms INTEGER NOT NULL,
    byte_count INTEGER NOT NULL,
    packet_count INTEGER NOT NULL,
    direction TEXT NOT NULL,
    locality TEXT NOT NULL,
    encryption TEXT NOT NULL,
    company TEXT,
    jurisdiction TEXT
);
CREATE INDEX IF NOT EXISTS flows_window ON flows(window_start_ms);
CREATE INDEX IF NOT EXISTS flows_device ON flows(device_id);
CREATE INDEX IF NOT EXISTS flows_company ON flows(company);

CREATE TABLE IF NOT EXISTS devices (
    device_id TEXT PRIMARY KEY,
    friendly_name TEXT NOT NULL,
    first_seen_ms INTEGER NOT NULL DEFAULT 0,
    last_seen_ms INTEGER NOT NULL DEFAULT 0
);

CREATE TABLE IF NOT EXISTS companies (
    name TEXT PRIMARY KEY,
    parent TEXT,
    jurisdiction TEXT NOT NULL,
    threat TEXT NOT NULL,
    source TEXT NOT NULL,
    resolved_at_ms INTEGER NOT NULL,
    ttl_ms INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS buckets (
    bucket_start_ms INTEGER NOT NULL,
    device_id TEXT NOT NULL,
    company TEXT NOT NULL,
    jurisdiction TEXT NOT NULL,
    byte_count INTEGER NOT NULL,
    packet_count INTEGER NOT NULL,
    PRIMARY KEY (bucket_start_ms, device_id, company)
);

CREATE TABLE IF NOT EXISTS bucket_ledger (flow_id TEXT PRIMARY KEY);

CREATE TABLE IF NOT EXISTS directives (
    id TEXT PRIMARY KEY,
    device_scope TEXT NOT NULL,
    company_scope_kind TEXT NOT NULL,
    company_scope TEXT NOT NULL,
    state TEXT NOT NULL,
    created_at_ms INTEGER NOT NULL,
    label TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS blocklists (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    source TEXT NOT NULL,
    enabled INTEGER NOT NULL,
    entries TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS curriculum (
    module_id TEXT PRIMARY KEY,
    completed_at_ms INTEGER
);

CREATE TABLE IF NOT EXISTS redactions (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    scope_kind TEXT NOT NULL,
    scope_value TEXT NOT NULL,
    requested_at_ms INTEGER NOT NULL,
    executed_at_ms INTEGER,
    rows_removed INTEGER NOT NULL DEFAULT 0
);

CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
"""

_FLOW_COLUMNS = (
    "id, device_id, dst_ip, dst_port, transport, window_start_ms, byte_count, "
    "packet_count, direction, locality, encryption, company, jurisdiction"
)


def _row_to_flow(row: sqlite3.Row | tuple) -> StoredFlow:
    return StoredFlow(
        record=FlowRecord(
            id=row[0],
            device_id=row[1],
            dst_ip=row[2],
            dst_port=row[3],
            transport=Transport(row[4]),
            window_start_ms=row[5],
            byte_count=row[6],
            packet_count=row[7],
            direction=Direction(row[8]),
            locality=Locality(row[9]),
            encryption=Encryption(row[10]),
        ),
        company=row[11],
        jurisdiction=row[12],
    )


class Store:
    """Embedded store. All public methods are thread-safe."""

    def __init__(
        self,
        path: str = ":memory:",
        bucket_width_ms: int = DEFAULT_BUCKET_WIDTH_MS,
        redaction_grace_ms: int = DEFAULT_REDACTION_GRACE_MS,
    ):
        if bucket_width_ms <= 0:
            raise ValueError("bucket width must be positive")
        self.path = path
        self.bucket_width_ms = bucket_width_ms
        self.redaction_grace_ms = redaction_grace_ms
        self._lock = threading.RLock()
        # autocommit mode; multi-statement sections use explicit BEGIN
        self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        # (scope_kind, scope_value_parsed, until_ms) guards against late writes
        self._redaction_guards: list[tuple[str, object, int]] = []

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- flows ---------------------------------------------------------------

    def persist_flow(
        self,
        record: FlowRecord,
        company: str | None = None,
        jurisdiction: str | None = None,
        now_ms: int | None = None,
    ) -> str:
        with self._lock:
            self._check_guards(record, company, now_ms)
            try:
                self._conn.execute(
                    f"INSERT INTO flows ({_FLOW_COLUMNS}) "
                    "VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?)",
                    (
                        record.id,
                        record.device_id,
                        record.dst_ip,
                        record.dst_port,
                        record.transport.value,
                        record.window_start_ms,
                        record.byte_count,
                        record.packet_count,
                        record.direction.value,
                        record.locality.value,
                        record.encryption.value,
                        company,
                        jurisdiction,
                    ),
                )
            except sqlite3.IntegrityError as exc:
                raise DuplicateFlowError(f"flow {record.id} already stored") from exc
            except sqlite3.OperationalError as exc:
                # e.g. disk full: surface so ingest pauses instead of dropping
                raise StoreError(f"flow write failed: {exc}") from exc
            self._conn.commit()
            return record.id

    def _check_guards(
        self, record: FlowRecord, company: str | None, now_ms: int | None
    ) -> None:
        if not self._redaction_guards:
            return
        now = now_ms if now_ms is not None else 0
        live: list[tuple[str, object, int]] = []
        hit = None
        for kind, value, until in self._redaction_guards:
            if now_ms is not None and now >= until:
                continue  # expired
            live.append((kind, value, until))
            if kind == "device" and record.device_id == value:
                hit = (kind, value)
            elif kind == "company" and company == value:
                hit = (kind, value)
            elif kind == "range":
                start, end = value  # type: ignore[misc]
                if start <= record.window_start_ms < end:
                    hit = (kind, value)
        self._redaction_guards = live
        if hit is not None:
            raise RedactionPendingError(
                f"write rejected: {hit[0]} scope was redacted (grace period active)"
            )

    def get_flow(self, flow_id: str) -> StoredFlow | None:
        with self._lock:
            row = self._conn.execute(
                f"SELECT {_FLOW_COLUMNS} FROM flows WHERE id = ?", (flow_id,)
            ).fetchone()
        return _row_to_flow(row) if row else None

    def query_flows(
        self,
        device_id: str | None = None,
        company: str | None = None,
        window: tuple[int, int] | None = None,
        locality: Locality | None = None,
        direction: Direction | None = None,
        limit: int | None = None,
    ) -> list[StoredFlow]:
        clauses, params = [], []
        if device_id is not None:
            clauses.append("device_id = ?")
            params.append(device_id)
        if company is not None:
            clauses.append("company = ?")
            params.append(company)
        if window is not None:
            clauses.append("window_start_ms >= ? AND window_start_ms < ?")
            params.extend(window)
        if locality is not None:
            clauses.append("locality = ?")
            params.append(locality.value)
        if direction is not None:
            clauses.append("direction = ?")
            params.append(direction.value)
        sql = f"SELECT {_FLOW_COLUMNS} FROM flows"
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY window_start_ms, id"
        if limit is not None:
            sql += f" LIMIT {int(limit)}"
        with self._lock:
            rows = self._conn.execute(sql, params).fetchall()
        return [_row_to_flow(r) for r in rows]

    def count_flows(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM flows").fetchone()[0]

    def count_distinct_destinations(self, window: tuple[int, int] | None = None) -> int:
        """Distinct external endpoints among bucketed flows."""
        sql = (
            "SELECT COUNT(DISTINCT f.dst_ip) FROM flows f "
            "JOIN bucket_ledger l ON l.flow_id = f.id"
        )
        params: list = []
        if window is not None:
            sql += " WHERE f.window_start_ms >= ? AND f.window_start_ms < ?"
            params.extend(window)
        with self._lock:
            return self._conn.execute(sql, params).fetchone()[0]

    # -- devices ---------------------------------------------------------------

    def upsert_device(self, device: Device) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO devices (device_id, friendly_name, first_seen_ms, last_seen_ms) "
                "VALUES (?,?,?,?) ON CONFLICT(device_id) DO UPDATE SET "
                "friendly_name = excluded.friendly_name, "
                "first_seen_ms = CASE WHEN devices.first_seen_ms = 0 THEN excluded.first_seen_ms "
                "  ELSE MIN(devices.first_seen_ms, excluded.first_seen_ms) END, "
                "last_seen_ms = MAX(devices.last_seen_ms, excluded.last_seen_ms)",
                (device.device_id, device.friendly_name, device.first_seen_ms, device.last_seen_ms),
            )
            self._conn.commit()

    def get_device(self, device_id: str) -> Device | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT device_id, friendly_name, first_seen_ms, last_seen_ms "
                "FROM devices WHERE device_id = ?",
                (device_id,),
            ).fetchone()
        return Device(*row) if row else None

    def list_devices(self) -> list[Device]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT device_id, friendly_name, first_seen_ms, last_seen_ms "
                "FROM devices ORDER BY device_id"
            ).fetchall()
        return [Device(*r) for r in rows]

    def rename_device(self, device_id: str, name: str) -> Device:
        with self._lock:
            cur = self._conn.execute(
                "UPDATE devices SET friendly_name = ? WHERE device_id = ?",
                (name, device_id),
            )
            self._conn.commit()
            if cur.rowcount == 0:
                raise StoreError(f"unknown device: {device_id}")
        return self.get_device(device_id)  # type: ignore[return-value]

    # -- companies -------------------------------------------------------------

    def upsert_company(self, record: CompanyRecord) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO companies (name, parent, jurisdiction, threat, source, "
                "resolved_at_ms, ttl_ms) VALUES (?,?,?,?,?,?,?) "
                "ON CONFLICT(name) DO UPDATE SET parent = excluded.parent, "
                "jurisdiction = excluded.jurisdiction, threat = excluded.threat, "
                "source = excluded.source, resolved_at_ms = excluded.resolved_at_ms, "
                "ttl_ms = excluded.ttl_ms",
                (
                    record.name,
                    record.parent,
                    record.jurisdiction,
                    record.threat.value,
                    record.source.value,
                    record.resolved_at_ms,
                    record.ttl_ms,
                ),
            )
            self._conn.commit()

    def list_companies(self) -> list[CompanyRecord]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT name, parent, jurisdiction, threat, source, resolved_at_ms, "
                "ttl_ms FROM companies ORDER BY name"
            ).fetchall()
        return [
            CompanyRecord(
                name=r[0], parent=r[1], jurisdiction=r[2], threat=Threat(r[3]),
                source=Source(r[4]), resolved_at_ms=r[5], ttl_ms=r[6],
            )
            for r in rows
        ]

    # -- exposure buckets --------------------------------------------------------

    def claim_flow_for_bucket(self, flow_id: str) -> bool:
        """True exactly once per flow id; the add-flow idempotence latch."""
        with self._lock:
            cur = self._conn.execute(
                "INSERT OR IGNORE INTO bucket_ledger (flow_id) VALUES (?)", (flow_id,)
            )
            self._conn.commit()
            return cur.rowcount == 1

    def increment_bucket(
        self,
        bucket_start_ms: int,
        device_id: str,
        company: str,
        jurisdiction: str,
        byte_delta: int,
        packet_delta: int,
    ) -> tuple[int, int]:
        """Apply a delta; returns the bucket's new (bytes, packets)."""
        with self._lock:
            self._conn.execute(
                "INSERT INTO buckets (bucket_start_ms, device_id, company, jurisdiction, "
                "byte_count, packet_count) VALUES (?,?,?,?,?,?) "
                "ON CONFLICT(bucket_start_ms, device_id, company) DO UPDATE SET "
                "byte_count = buckets.byte_count + excluded.byte_count, "
                "packet_count = buckets.packet_count + excluded.packet_count, "
                "jurisdiction = excluded.jurisdiction",
                (bucket_start_ms, device_id, company, jurisdiction, byte_delta, packet_delta),
            )
            self._conn.commit()
            row = self._conn.execute(
                "SELECT byte_count, packet_count FROM buckets "
                "WHERE bucket_start_ms = ? AND device_id = ? AND company = ?",
                (bucket_start_ms, device_id, company),
            ).fetchone()
        return (row[0], row[1])

    def query_buckets(
        self,
        window: tuple[int, int] | None = None,
        device_id: str | None = None,
        company: str | None = None,
    ) -> list[tuple[int, str, str, str, int, int]]:
        """Rows of (bucket_start_ms, device_id, company, jurisdiction, bytes, packets)."""
        clauses, params = [], []
        if window is not None:
            clauses.append("bucket_start_ms >= ? AND bucket_start_ms < ?")
            params.extend(window)
        if device_id is not None:
            clauses.append("device_id = ?")
            params.append(device_id)
        if company is not None:
            clauses.append("company = ?")
            params.append(company)
        sql = (
            "SELECT bucket_start_ms, device_id, company, jurisdiction, byte_count, "
            "packet_count FROM buckets"
        )
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY bucket_start_ms, device_id, company"
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    # -- directives / blocklists --------------------------------------------------

    def save_directive(self, row: tuple) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO directives (id, device_scope, company_scope_kind, "
                "company_scope, state, created_at_ms, label) VALUES (?,?,?,?,?,?,?) "
                "ON CONFLICT(id) DO UPDATE SET state = excluded.state, "
                "label = excluded.label",
                row,
            )
            self._conn.commit()

    def list_directive_rows(self) -> list[tuple]:
        with self._lock:
            return self._conn.execute(
                "SELECT id, device_scope, company_scope_kind, company_scope, state, "
                "created_at_ms, label FROM directives ORDER BY created_at_ms, id"
            ).fetchall()

    def delete_directive(self, directive_id: str) -> bool:
        with self._lock:
            cur = self._conn.execute(
                "DELETE FROM directives WHERE id = ?", (directive_id,)
            )
            self._conn.commit()
            return cur.rowcount == 1

    def save_blocklist(self, row: tuple) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO blocklists (id, name, source, enabled, entries) "
                "VALUES (?,?,?,?,?) ON CONFLICT(id) DO UPDATE SET "
                "name = excluded.name, source = excluded.source, "
                "enabled = excluded.enabled, entries = excluded.entries",
                row,
            )
            self._conn.commit()

    def list_blocklist_rows(self) -> list[tuple]:
        with self._lock:
            return self._conn.execute(
                "SELECT id, name, source, enabled, entries FROM blocklists ORDER BY id"
            ).fetchall()

    # -- curriculum ----------------------------------------------------------------

    def curriculum_completion(self, module_id: str) -> int | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT completed_at_ms FROM curriculum WHERE module_id = ?",
                (module_id,),
            ).fetchone()
        return row[0] if row else None

    def mark_curriculum_complete(self, module_id: str, now_ms: int) -> int:
        """Idempotent: the first completion timestamp is kept."""
        with self._lock:
            existing = self.curriculum_completion(module_id)
            if existing is not None:
                return existing
            self._conn.execute(
                "INSERT INTO curriculum (module_id, completed_at_ms) VALUES (?,?)",
                (module_id, now_ms),
            )
            self._conn.commit()
            return now_ms

    def curriculum_completions(self) -> dict[str, int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT module_id, completed_at_ms FROM curriculum "
                "WHERE completed_at_ms IS NOT NULL"
            ).fetchall()
        return {r[0]: r[1] for r in rows}

    # -- meta ------------------------------------------------------------------------

    def get_meta(self, key: str) -> str | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT value FROM meta WHERE key = ?", (key,)
            ).fetchone()
        return row[0] if row else None

    def set_meta(self, key: str, value: str) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO meta (key, value) VALUES (?,?) "
                "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
                (key, value),
            )
            self._conn.commit()

    # -- redaction ---------------------------------------------------------------------

    def redact(self, request: RedactionRequest, now_ms: int) -> RedactionRequest:
        """
        Remove everything in scope: flows, their ledger entries, and the
        affected buckets (rebuilt from surviving ledgered flows). The audit
        entry records the scope, never the data.
        """
        kind, value = request.scope_kind, request.scope_value
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                if kind == "device":
                    removed = self._redact_simple("device_id", value)
                    guard_value: object = value
                elif kind == "company":
                    removed = self._redact_simple("company", value)
                    guard_value = value
                elif kind == "range":
                    start, end = _parse_range(value)
                    removed = self._redact_range(start, end)
                    guard_value = (start, end)
                else:
                    raise StoreError(f"unknown redaction scope: {kind}")
                cur = self._conn.execute(
                    "INSERT INTO redactions (scope_kind, scope_value, requested_at_ms, "
                    "executed_at_ms, rows_removed) VALUES (?,?,?,?,?)",
                    (kind, value, request.requested_at_ms, now_ms, removed),
                )
                self._conn.commit()
            except BaseException:
                self._conn.rollback()
                raise
            self._redaction_guards.append(
                (kind, guard_value, now_ms + self.redaction_grace_ms)
            )
        return RedactionRequest(
            scope_kind=kind,
            scope_value=value,
            requested_at_ms=request.requested_at_ms,
            executed_at_ms=now_ms,
            rows_removed=removed,
            id=cur.lastrowid,
        )

    def _redact_simple(self, column: str, value: str) -> int:
        conn = self._conn
        conn.execute(
            f"DELETE FROM bucket_ledger WHERE flow_id IN "
            f"(SELECT id FROM flows WHERE {column} = ?)",
            (value,),
        )
        removed = conn.execute(
            f"DELETE FROM flows WHERE {column} = ?", (value,)
        ).rowcount
        bucket_col = "device_id" if column == "device_id" else "company"
        removed += conn.execute(
            f"DELETE FROM buckets WHERE {bucket_col} = ?", (value,)
        ).rowcount
        return removed

    def _redact_range(self, start: int, end: int) -> int:
        conn = self._conn
        width = self.bucket_width_ms
        conn.execute(
            "DELETE FROM bucket_ledger WHERE flow_id IN "
            "(SELECT id FROM flows WHERE window_start_ms >= ? AND window_start_ms < ?)",
            (start, end),
        )
        removed = conn.execute(
            "DELETE FROM flows WHERE window_start_ms >= ? AND window_start_ms < ?",
            (start, end),
        ).rowcount
        # Rebuild every bucket the range touches from surviving ledgered flows.
        lo = start - start % width
        hi = end + (-end) % width
        removed += conn.execute(
            "DELETE FROM buckets WHERE bucket_start_ms >= ? AND bucket_start_ms < ?",
            (lo, hi),
        ).rowcount
        conn.execute(
            "INSERT INTO buckets (bucket_start_ms, device_id, company, jurisdiction, "
            "byte_count, packet_count) "
            "SELECT (f.window_start_ms / ?) * ?, f.device_id, f.company, "
            "COALESCE(f.jurisdiction, '??'), SUM(f.byte_count), SUM(f.packet_count) "
            "FROM flows f JOIN bucket_ledger l ON l.flow_id = f.id "
            "WHERE f.window_start_ms >= ? AND f.window_start_ms < ? AND f.company IS NOT NULL "
            "GROUP BY (f.window_start_ms / ?) * ?, f.device_id, f.company",
            (width, width, lo, hi, width, width),
        )
        return removed

    def redaction_audit(self) -> list[RedactionRequest]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT id, scope_kind, scope_value, requested_at_ms, executed_at_ms, "
                "rows_removed FROM redactions ORDER BY id"
            ).fetchall()
        return [
            RedactionRequest(
                id=r[0], scope_kind=r[1], scope_value=r[2], requested_at_ms=r[3],
                executed_at_ms=r[4], rows_removed=r[5],
            )
            for r in rows
        ]

    # -- retention -----------------------------------------------------------------------

    def retention_sweep(self, max_age_ms: int, now_ms: int) -> int:
        """
        Drop raw flows older than the policy. Buckets are kept: aggregates
        survive raw expiry (documented as lossy for later range redaction).
        """
        if max_age_ms <= 0:
            raise ValueError("retention age must be positive")
        cutoff = now_ms - max_age_ms
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                self._conn.execute(
                    "DELETE FROM bucket_ledger WHERE flow_id IN "
                    "(SELECT id FROM flows WHERE window_start_ms < ?)",
                    (cutoff,),
                )
                removed = self._conn.execute(
                    "DELETE FROM flows WHERE window_start_ms < ?", (cutoff,)
                ).rowcount
                self._conn.commit()
            except BaseException:
                self._conn.rollback()
                raise
        return removed

    # -- export / import -------------------------------------------------------------------

    def export_flows(self, fh: IO[str]) -> int:
        """JSON-lines dump with a schema header; bit-exact round trip."""
        fh.write(
            json.dumps(
                {"schema": FLOW_EXPORT_SCHEMA, "kind": "flow-export"},
                sort_keys=True,
                separators=(",", ":"),
            )
            + "\n"
        )
        count = 0
        for stored in self.query_flows():
            fh.write(json.dumps(flow_to_dict(stored), sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
        return count

    def import_flows(self, lines: Iterable[str]) -> int:
        it = iter(lines)
        try:
            header = json.loads(next(it))
        except StopIteration:
            raise StoreError("empty flow export")
        if header.get("schema") != FLOW_EXPORT_SCHEMA or header.get("kind") != "flow-export":
            raise StoreError(f"unsupported flow export header: {header}")
        count = 0
        for line in it:
            line = line.strip()
            if not line:
                continue
            stored = flow_from_dict(json.loads(line))
            self.persist_flow(stored.record, stored.company, stored.jurisdiction)
            count += 1
        return count


def flow_to_dict(stored: StoredFlow) -> dict:
    r = stored.record
    return {
        "id": r.id,
        "device_id": r.device_id,
        "dst_ip": r.dst_ip,
        "dst_port": r.dst_port,
        "transport": r.transport.value,
        "window_start_ms": r.window_start_ms,
        "byte_count": r.byte_count,
        "packet_count": r.packet_count,
        "direction": r.direction.value,
        "locality": r.locality.value,
        "encryption": r.encryption.value,
        "company": stored.company,
        "jurisdiction": stored.jurisdiction,
    }


def flow_from_dict(data: dict) -> StoredFlow:
    return StoredFlow(
        record=FlowRecord(
            id=data["id"],
            device_id=data["device_id"],
            dst_ip=data["dst_ip"],
            dst_port=data["dst_port"],
            transport=Transport(data["transport"]),
            window_start_ms=data["window_start_ms"],
            byte_count=data["byte_count"],
            packet_count=data["packet_count"],
            direction=Direction(data["direction"]),
            locality=Locality(data["locality"]),
            encryption=Encryption(data["encryption"]),
        ),
        company=data.get("company"),
        jurisdiction=data.get("jurisdiction"),
    )


def _parse_range(value: str) -> tuple[int, int]:
    try:
        start_s, end_s = value.split("..", 1)
        start, end = int(start_s), int(end_s)
    except ValueError as exc:
        raise StoreError(f"bad time range {value!r}, expected START..END") from exc
    if start >= end:
        raise StoreError(f"empty time range: {value}")
    return start, end
