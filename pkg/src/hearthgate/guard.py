"""
Human-level firewall: directives over device and company scopes, compiled
down to IP match sets.

A directive means "block this company" (or corporate group, or curated
list), not "block these addresses": compilation re-derives the address
sets from current resolver data, so newly learned prefixes join the rules
on the next recompile. Directives are created DISABLED and armed in a
second explicit step; preview the historical impact first.

Semantics are block-only and default-allow. The compiled match set for a
company is exactly the set of IPs whose longest-prefix owner is that
company, so packet-level decisions always agree with per-IP resolution,
including nested carve-outs.
"""

from __future__ import annotations

import ipaddress
import json
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol

from .flowcap.models import FlowRecord
from .resolver import GroupCycleError, Resolver
from .stage import Feature, StageConfig
from .store import Store

ALL_DEVICES = "ALL"

DIRECTIVE_EXPORT_SCHEMA = 1


class ScopeKind(str, Enum):
    COMPANY = "company"
    GROUP = "group"
    BLOCKLIST = "blocklist"


class DirectiveState(str, Enum):
    ENABLED = "ENABLED"
    DISABLED = "DISABLED"


class Verdict(str, Enum):
    ALLOW = "ALLOW"
    BLOCK = "BLOCK"


class BlocklistSource(str, Enum):
    CURATED = "CURATED"
    USER = "USER"


class DirectiveValidationError(ValueError):
    pass


class AdapterError(Exception):
    pass


@dataclass(frozen=True)
class CompanyScope:
    kind: ScopeKind
    value: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}


@dataclass(frozen=True)
class FirewallDirective:
    id: str
    device_scope: str  # ALL_DEVICES or a device_id
    company_scope: CompanyScope
    state: DirectiveState
    created_at_ms: int
    label: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "device_scope": self.device_scope,
            "company_scope": self.company_scope.to_dict(),
            "state": self.state.value,
            "created_at_ms": self.created_at_ms,
            "label": self.label,
        }


@dataclass(frozen=True)
class Blocklist:
    id: str
    name: str
    companies: tuple[str, ...]
    prefixes: tuple[str, ...]
    source: BlocklistSource
    enabled: bool

    def __post_init__(self):
        if self.enabled and not (self.companies or self.prefixes):
            raise ValueError(f"blocklist {self.id!r} is enabled but empty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "companies": list(self.companies),
            "prefixes": list(self.prefixes),
            "source": self.source.value,
            "enabled": self.enabled,
        }


class _PrefixSet:
    """Masked-integer membership over a set of prefixes."""

    __slots__ = ("_tables",)

    def __init__(self, prefixes: Iterable):
        # (version, prefixlen) -> set of network ints
        self._tables: dict[tuple[int, int], set[int]] = {}
        for p in prefixes:
            net = ipaddress.ip_network(p) if isinstance(p, str) else p
            self._tables.setdefault((net.version, net.prefixlen), set()).add(
                int(net.network_address)
            )

    def __contains__(self, ip: str) -> bool:
        addr = ipaddress.ip_address(ip)
        ip_int = int(addr)
        max_len = addr.max_prefixlen
        for (version, plen), nets in self._tables.items():
            if version != addr.version:
                continue
            shift = max_len - plen
            if (ip_int >> shift) << shift in nets:
                return True
        return False


@dataclass(frozen=True)
class CompiledEntry:
    directive_id: str
    device_match: str
    prefixes: tuple[str, ...]
    _matcher: _PrefixSet = field(compare=False, repr=False, default=None)  # type: ignore[assignment]

    def matches(self, device_id: str, dst_ip: str) -> bool:
        if self.device_match != ALL_DEVICES and self.device_match != device_id:
            return False
        return dst_ip in self._matcher


@dataclass(frozen=True)
class CompiledRuleSet:
    version: int
    entries: tuple[CompiledEntry, ...]
    generated_at_ms: int
    inert_directive_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "generated_at_ms": self.generated_at_ms,
            "inert_directive_ids": list(self.inert_directive_ids),
            "entries": [
                {
                    "directive_id": e.directive_id,
                    "device_match": e.device_match,
                    "prefixes": list(e.prefixes),
                }
                for e in self.entries
            ],
        }


EMPTY_RULESET = CompiledRuleSet(version=0, entries=(), generated_at_ms=0)


def decide(flow: FlowRecord, ruleset: CompiledRuleSet) -> Verdict:
    """Pure enforcement predicate; callable concurrently at line rate."""
    for entry in ruleset.entries:
        if entry.matches(flow.device_id, flow.dst_ip):
            return Verdict.BLOCK
    return Verdict.ALLOW


@dataclass(frozen=True)
class BlockImpactPreview:
    directive_id: str
    window: tuple[int, int]
    matched_bytes: int
    matched_flows: int
    affected_companies: tuple[str, ...]
    per_device: dict[str, tuple[int, int]]  # device_id -> (bytes, flows)

    def to_dict(self) -> dict:
        return {
            "directive_id": self.directive_id,
            "window": list(self.window),
            "matched_bytes": self.matched_bytes,
            "matched_flows": self.matched_flows,
            "affected_companies": list(self.affected_companies),
            "per_device": {
                d: {"bytes": b, "flows": f} for d, (b, f) in self.per_device.items()
            },
        }


@dataclass(frozen=True)
class Suggestion:
    company: str
    reason: str  # "group-sibling" | "same-jurisdiction"
    byte_count: int

    def to_dict(self) -> dict:
        return {
            "company": self.company,
            "reason": self.reason,
            "byte_count": self.byte_count,
        }


class EnforcementAdapter(Protocol):
    """
    Pluggable enforcement backend. install() must be atomic: on failure the
    previously installed rule set stays in force. Whether matched traffic
    is dropped silently or rejected with errors is adapter-documented.
    """

    def install(self, ruleset: CompiledRuleSet) -> None: ...

    @property
    def version_in_force(self) -> int: ...


class SimulatedAdapter:
    """
    In-process adapter for tests and replay: swaps the rule set atomically
    and drops matched flows silently. `fail_next` injects install failures.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._ruleset = EMPTY_RULESET
        self.fail_next = False
        self.installs = 0

    def install(self, ruleset: CompiledRuleSet) -> None:
        with self._lock:
            if self.fail_next:
                self.fail_next = False
                raise AdapterError("injected adapter failure")
            self._ruleset = ruleset
            self.installs += 1

    @property
    def version_in_force(self) -> int:
        with self._lock:
            return self._ruleset.version

    @property
    def ruleset(self) -> CompiledRuleSet:
        with self._lock:
            return self._ruleset

    def replay(self, flows: Iterable[FlowRecord]) -> list[Verdict]:
        ruleset = self.ruleset
        return [decide(f, ruleset) for f in flows]


@dataclass(frozen=True)
class ApplyStatus:
    ok: bool
    version_in_force: int
    error: str | None = None


def parse_blocklist_text(text: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """One company name or CIDR per line; `#` comments."""
    companies: list[str] = []
    prefixes: list[str] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            prefixes.append(str(ipaddress.ip_network(line)))
        except ValueError:
            companies.append(line)
    return tuple(companies), tuple(prefixes)


# One small curated list ships so the blocklist path is exercised end to
# end; real curated feeds are an integration concern.
SAMPLE_BLOCKLIST_ID = "ads-basic"
SAMPLE_BLOCKLIST_TEXT = """# starter list: common ad/tracking placeholders
AdNexus Media
TrackPoint Analytics
203.0.113.0/24
"""


class GuardEngine:
    """
    Directive lifecycle, compilation, preview, suggestion, enforcement.
    compile/apply serialize with each other; decide() never locks.
    """

    def __init__(self, store: Store, resolver: Resolver):
        self.store = store
        self.resolver = resolver
        self._lock = threading.RLock()
        self._directives: dict[str, FirewallDirective] = {}
        self._blocklists: dict[str, Blocklist] = {}
        self._version = int(store.get_meta("ruleset_version") or 0)
        self._current = EMPTY_RULESET
        self._load()

    def _load(self) -> None:
        for row in self.store.list_directive_rows():
            d = FirewallDirective(
                id=row[0],
                device_scope=row[1],
                company_scope=CompanyScope(ScopeKind(row[2]), row[3]),
                state=DirectiveState(row[4]),
                created_at_ms=row[5],
                label=row[6],
            )
            self._directives[d.id] = d
        for row in self.store.list_blocklist_rows():
            entries = json.loads(row[4])
            bl = Blocklist(
                id=row[0],
                name=row[1],
                companies=tuple(entries.get("companies", ())),
                prefixes=tuple(entries.get("prefixes", ())),
                source=BlocklistSource(row[2]),
                enabled=bool(row[3]),
            )
            self._blocklists[bl.id] = bl

    # -- blocklists -----------------------------------------------------------

    def save_blocklist(
        self,
        blocklist_id: str,
        name: str,
        text: str,
        source: BlocklistSource = BlocklistSource.USER,
        enabled: bool = True,
    ) -> Blocklist:
        companies, prefixes = parse_blocklist_text(text)
        bl = Blocklist(
            id=blocklist_id,
            name=name,
            companies=companies,
            prefixes=prefixes,
            source=source,
            enabled=enabled,
        )
        with self._lock:
            self._blocklists[bl.id] = bl
            self.store.save_blocklist(
                (
                    bl.id,
                    bl.name,
                    bl.source.value,
                    int(bl.enabled),
                    json.dumps({"companies": list(companies), "prefixes": list(prefixes)}),
                )
            )
        return bl

    def install_sample_blocklists(self) -> None:
        if SAMPLE_BLOCKLIST_ID not in self._blocklists:
            self.save_blocklist(
                SAMPLE_BLOCKLIST_ID,
                "Basic ad & tracker starter list",
                SAMPLE_BLOCKLIST_TEXT,
                source=BlocklistSource.CURATED,
            )

    def blocklists(self) -> list[Blocklist]:
        with self._lock:
            return sorted(self._blocklists.values(), key=lambda b: b.id)

    # -- directives --------------------------------------------------------------

    def _device_label(self, device_scope: str) -> str:
        if device_scope == ALL_DEVICES:
            return "all devices"
        device = self.store.get_device(device_scope)
        return device.friendly_name if device else device_scope

    def _company_label(self, scope: CompanyScope) -> str:
        if scope.kind is ScopeKind.COMPANY:
            return scope.value
        if scope.kind is ScopeKind.GROUP:
            return f"companies owned by {scope.value}"
        bl = self._blocklists.get(scope.value)
        return f"blocklist: {bl.name if bl else scope.value}"

    def render_label(self, device_scope: str, scope: CompanyScope) -> str:
        return (
            f"block all traffic between <{self._device_label(device_scope)}> "
            f"and <{self._company_label(scope)}>"
        )

    def create_directive(
        self,
        device_scope: str,
        company_scope: CompanyScope,
        stage: StageConfig,
        now_ms: int,
    ) -> FirewallDirective:
        """Create a directive, DISABLED until explicitly armed."""
        stage.require(Feature.CONTROLS)
        if device_scope != ALL_DEVICES and self.store.get_device(device_scope) is None:
            raise DirectiveValidationError(f"unknown device: {device_scope}")
        self._validate_company_scope(company_scope)
        directive = FirewallDirective(
            id=uuid.uuid4().hex[:12],
            device_scope=device_scope,
            company_scope=company_scope,
            state=DirectiveState.DISABLED,
            created_at_ms=now_ms,
            label=self.render_label(device_scope, company_scope),
        )
        with self._lock:
            self._directives[directive.id] = directive
            self._persist(directive)
        return directive

    def _validate_company_scope(self, scope: CompanyScope) -> None:
        if scope.kind is ScopeKind.BLOCKLIST:
            if scope.value not in self._blocklists:
                raise DirectiveValidationError(f"unknown blocklist: {scope.value}")
            return
        known = self.resolver.known_company(scope.value) or any(
            c.name == scope.value for c in self.store.list_companies()
        )
        if not known:
            raise DirectiveValidationError(f"unknown company: {scope.value}")

    def _persist(self, d: FirewallDirective) -> None:
        self.store.save_directive(
            (
                d.id,
                d.device_scope,
                d.company_scope.kind.value,
                d.company_scope.value,
                d.state.value,
                d.created_at_ms,
                d.label,
            )
        )

    def get_directive(self, directive_id: str) -> FirewallDirective:
        with self._lock:
            d = self._directives.get(directive_id)
        if d is None:
            raise KeyError(f"unknown directive: {directive_id}")
        return d

    def list_directives(self) -> list[FirewallDirective]:
        with self._lock:
            return sorted(
                self._directives.values(), key=lambda d: (d.created_at_ms, d.id)
            )

    def set_state(self, directive_id: str, state: DirectiveState) -> FirewallDirective:
        with self._lock:
            d = self.get_directive(directive_id)
            if d.state is not state:
                d = FirewallDirective(
                    id=d.id,
                    device_scope=d.device_scope,
                    company_scope=d.company_scope,
                    state=state,
                    created_at_ms=d.created_at_ms,
                    label=d.label,
                )
                self._directives[d.id] = d
                self._persist(d)
        return d

    def enable(self, directive_id: str) -> FirewallDirective:
        return self.set_state(directive_id, DirectiveState.ENABLED)

    def disable(self, directive_id: str) -> FirewallDirective:
        return self.set_state(directive_id, DirectiveState.DISABLED)

    # -- compilation ----------------------------------------------------------------

    def _scope_companies(self, scope: CompanyScope) -> tuple[set[str], list[str]]:
        """Resolve a company scope to (company names, literal prefixes)."""
        if scope.kind is ScopeKind.COMPANY:
            return {scope.value}, []
        if scope.kind is ScopeKind.GROUP:
            try:
                root = self.resolver.corporate_group(scope.value)
            except GroupCycleError:
                return set(), []
            members = set(self.resolver.group_members(root))
            members.add(scope.value)
            return members, []
        bl = self._blocklists.get(scope.value)
        if bl is None or not bl.enabled:
            return set(), []
        return set(bl.companies), list(bl.prefixes)

    def compile(
        self,
        directives: Iterable[FirewallDirective] | None = None,
        now_ms: int = 0,
    ) -> CompiledRuleSet:
        """
        Deterministically lower ENABLED directives to IP match entries.
        Directives whose scope yields no addresses are flagged inert, not
        dropped. Every call produces a strictly larger version.
        """
        with self._lock:
            if directives is None:
                directives = self.list_directives()
            entries: list[CompiledEntry] = []
            inert: list[str] = []
            for d in sorted(directives, key=lambda d: d.id):
                if d.state is not DirectiveState.ENABLED:
                    continue
                companies, literal = self._scope_companies(d.company_scope)
                prefixes = [str(p) for p in self.resolver.match_prefixes(companies)]
                prefixes.extend(literal)
                prefixes = sorted(set(prefixes))
                if not prefixes:
                    inert.append(d.id)
                    continue
                entries.append(
                    CompiledEntry(
                        directive_id=d.id,
                        device_match=d.device_scope,
                        prefixes=tuple(prefixes),
                        _matcher=_PrefixSet(prefixes),
                    )
                )
            self._version += 1
            self.store.set_meta("ruleset_version", str(self._version))
            ruleset = CompiledRuleSet(
                version=self._version,
                entries=tuple(sorted(entries, key=lambda e: (e.device_match, e.directive_id))),
                generated_at_ms=now_ms,
                inert_directive_ids=tuple(sorted(inert)),
            )
            self._current = ruleset
            return ruleset

    @property
    def current_ruleset(self) -> CompiledRuleSet:
        return self._current

    def recompile(self, now_ms: int = 0) -> CompiledRuleSet:
        return self.compile(now_ms=now_ms)

    # -- preview / suggestions ----------------------------------------------------------

    def preview_impact(
        self, directive: FirewallDirective, window: tuple[int, int]
    ) -> BlockImpactPreview:
        """
        What decide() would have blocked over stored history, had this
        directive been enabled. Uses a throwaway single-directive rule set
        so DISABLED directives can be previewed before arming.
        """
        armed = FirewallDirective(
            id=directive.id,
            device_scope=directive.device_scope,
            company_scope=directive.company_scope,
            state=DirectiveState.ENABLED,
            created_at_ms=directive.created_at_ms,
            label=directive.label,
        )
        with self._lock:
            version = self._version  # do not publish preview compilations
            companies, literal = self._scope_companies(armed.company_scope)
            prefixes = [str(p) for p in self.resolver.match_prefixes(companies)]
            prefixes.extend(literal)
            prefixes = sorted(set(prefixes))
        entries = ()
        if prefixes:
            entries = (
                CompiledEntry(
                    directive_id=armed.id,
                    device_match=armed.device_scope,
                    prefixes=tuple(prefixes),
                    _matcher=_PrefixSet(prefixes),
                ),
            )
        ruleset = CompiledRuleSet(version=version, entries=entries, generated_at_ms=0)
        matched_bytes = 0
        matched_flows = 0
        companies_hit: set[str] = set()
        per_device: dict[str, tuple[int, int]] = {}
        for stored in self.store.query_flows(window=window):
            flow = stored.record
            if decide(flow, ruleset) is Verdict.BLOCK:
                matched_bytes += flow.byte_count
                matched_flows += 1
                companies_hit.add(stored.company or "Unknown")
                b, f = per_device.get(flow.device_id, (0, 0))
                per_device[flow.device_id] = (b + flow.byte_count, f + 1)
        return BlockImpactPreview(
            directive_id=directive.id,
            window=window,
            matched_bytes=matched_bytes,
            matched_flows=matched_flows,
            affected_companies=tuple(sorted(companies_hit)),
            per_device=per_device,
        )

    def _blocked_companies(self) -> set[str]:
        blocked: set[str] = set()
        for d in self.list_directives():
            if d.state is DirectiveState.ENABLED:
                companies, _ = self._scope_companies(d.company_scope)
                blocked |= companies
        return blocked

    def suggest_similar(
        self,
        directive: FirewallDirective,
        now_ms: int,
        lookback_ms: int = 7 * 24 * 3600 * 1000,
    ) -> list[Suggestion]:
        """
        Companions to one block: corporate-group siblings first, then
        companies in the same jurisdiction seen from the same device(s) in
        the lookback window, by byte volume. Already-blocked companies are
        never suggested.
        """
        if directive.company_scope.kind is not ScopeKind.COMPANY:
            raise DirectiveValidationError(
                "suggestions are defined for single-company directives"
            )
        target = directive.company_scope.value
        blocked = self._blocked_companies() | {target}
        window = (now_ms - lookback_ms, now_ms)
        device = (
            None if directive.device_scope == ALL_DEVICES else directive.device_scope
        )
        volumes: dict[str, int] = {}
        for _start, _dev, company, _jur, byte_count, _p in self.store.query_buckets(
            window=window, device_id=device
        ):
            volumes[company] = volumes.get(company, 0) + byte_count

        suggestions: list[Suggestion] = []
        try:
            root = self.resolver.corporate_group(target)
            siblings = [m for m in self.resolver.group_members(root) if m not in blocked]
        except GroupCycleError:
            siblings = []
        for name in sorted(siblings, key=lambda n: (-volumes.get(n, 0), n)):
            suggestions.append(
                Suggestion(company=name, reason="group-sibling", byte_count=volumes.get(name, 0))
            )

        jurisdiction = None
        record = self.resolver.companies().get(target)
        if record is not None:
            jurisdiction = record.jurisdiction
        if jurisdiction and jurisdiction != "??":
            taken = blocked | {s.company for s in suggestions}
            candidates = []
            for name, byte_count in volumes.items():
                if name in taken or byte_count <= 0:
                    continue
                rec = self.resolver.companies().get(name)
                if rec is not None and rec.jurisdiction == jurisdiction:
                    candidates.append((name, byte_count))
            for name, byte_count in sorted(candidates, key=lambda c: (-c[1], c[0])):
                suggestions.append(
                    Suggestion(company=name, reason="same-jurisdiction", byte_count=byte_count)
                )
        return suggestions

    # -- enforcement ------------------------------------------------------------------------

    def apply(self, ruleset: CompiledRuleSet, adapter: EnforcementAdapter) -> ApplyStatus:
        """Install atomically; on failure the previous version stays live."""
        with self._lock:
            try:
                adapter.install(ruleset)
            except Exception as exc:
                return ApplyStatus(
                    ok=False, version_in_force=adapter.version_in_force, error=str(exc)
                )
            return ApplyStatus(ok=True, version_in_force=adapter.version_in_force)

    # -- import/export -------------------------------------------------------------------------

    def export_directives(self) -> dict:
        return {
            "schema": DIRECTIVE_EXPORT_SCHEMA,
            "kind": "directive-export",
            "directives": [d.to_dict() for d in self.list_directives()],
        }

    def import_directives(self, data: dict) -> int:
        if data.get("schema") != DIRECTIVE_EXPORT_SCHEMA or data.get("kind") != "directive-export":
            raise DirectiveValidationError(f"unsupported directive export: {data.get('kind')}")
        count = 0
        with self._lock:
            for item in data["directives"]:
                d = FirewallDirective(
                    id=item["id"],
                    device_scope=item["device_scope"],
                    company_scope=CompanyScope(
                        ScopeKind(item["company_scope"]["kind"]),
                        item["company_scope"]["value"],
                    ),
                    state=DirectiveState(item["state"]),
                    created_at_ms=item["created_at_ms"],
                    label=item["label"],
                )
                self._directives[d.id] = d
                self._persist(d)
                count += 1
        return count
