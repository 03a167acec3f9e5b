"""
Destination enrichment: map external IPs to the owning organization, its
corporate parent, jurisdiction, and threat status.

Resolution order: fresh cache entry, then fixture longest-prefix match,
then the pluggable provider, then an Unknown record. With the provider
disabled the whole module is a pure function of (fixtures, ip), which is
what keeps every test offline and deterministic.
"""

from __future__ import annotations

import ipaddress
import re
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Protocol

DEFAULT_TTL_MS = 7 * 24 * 3600 * 1000  # ownership churns slowly
FAILURE_TTL_MS = 3600 * 1000  # unresolved/failed lookups retry soon

_JURISDICTION_RE = re.compile(r"^[A-Z]{2}$")


class Threat(str, Enum):
    NONE = "NONE"
    SUSPICIOUS = "SUSPICIOUS"
    MALICIOUS = "MALICIOUS"
    UNKNOWN = "UNKNOWN"


class Source(str, Enum):
    FIXTURE = "FIXTURE"
    PROVIDER = "PROVIDER"
    MANUAL = "MANUAL"


class FixtureError(ValueError):
    """Fixture file rejected; message lists the offending lines."""


class GroupCycleError(ValueError):
    """Corporate parent links form a cycle."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("corporate parent cycle: " + " -> ".join(cycle + cycle[:1]))


@dataclass(frozen=True)
class CompanyRecord:
    name: str
    parent: str | None = None
    jurisdiction: str = "??"
    threat: Threat = Threat.UNKNOWN
    source: Source = Source.FIXTURE
    resolved_at_ms: int = 0
    ttl_ms: int = DEFAULT_TTL_MS

    def __post_init__(self):
        if not self.name:
            raise ValueError("company name must be nonempty")
        if self.parent == self.name:
            raise ValueError(f"company {self.name!r} cannot be its own parent")
        if self.jurisdiction != "??" and not _JURISDICTION_RE.match(self.jurisdiction):
            raise ValueError(f"bad jurisdiction code: {self.jurisdiction!r}")
        if self.ttl_ms <= 0:
            raise ValueError("ttl_ms must be positive")

    def fresh(self, now_ms: int) -> bool:
        return now_ms < self.resolved_at_ms + self.ttl_ms


@dataclass(frozen=True)
class FixtureEntry:
    cidr: ipaddress.IPv4Network | ipaddress.IPv6Network
    company: CompanyRecord
    line: int = 0


def unknown_record(now_ms: int, source: Source = Source.FIXTURE) -> CompanyRecord:
    return CompanyRecord(
        name="Unknown",
        parent=None,
        jurisdiction="??",
        threat=Threat.UNKNOWN,
        source=source,
        resolved_at_ms=now_ms,
        ttl_ms=FAILURE_TTL_MS,
    )


class CompanyProvider(Protocol):
    """
    Third-party enrichment contract: one call, ip in, company out.

    Implementations may do network I/O. Return None for "no data"; raise
    for transport failures. Neither outcome may ever block ingest.
    """

    def lookup(self, ip: str) -> CompanyRecord | None: ...


class StubProvider:
    """Recorded-response provider for tests. Counts every lookup."""

    def __init__(self, responses: dict[str, CompanyRecord] | None = None,
                 fail: bool = False):
        self.responses = dict(responses or {})
        self.fail = fail
        self.calls = 0

    def lookup(self, ip: str) -> CompanyRecord | None:
        self.calls += 1
        if self.fail:
            raise ConnectionError("stub provider failure")
        return self.responses.get(ip)


# ---------------------------------------------------------------------------
# Fixture parsing and longest-prefix index
# ---------------------------------------------------------------------------


def parse_fixture_line(raw: str, lineno: int) -> FixtureEntry | None:
    line = raw.split("#", 1)[0].rstrip()
    if not line.strip():
        return None
    parts = line.split("\t")
    if len(parts) != 5:
        raise FixtureError(
            f"line {lineno}: expected CIDR<TAB>name<TAB>parent<TAB>jurisdiction<TAB>threat"
        )
    cidr_s, name, parent_s, jurisdiction, threat_s = (p.strip() for p in parts)
    try:
        cidr = ipaddress.ip_network(cidr_s)
    except ValueError as exc:
        raise FixtureError(f"line {lineno}: bad CIDR {cidr_s!r}: {exc}") from exc
    parent = None if parent_s in ("-", "") else parent_s
    threat = Threat.NONE if threat_s in ("-", "") else Threat(threat_s.upper())
    try:
        company = CompanyRecord(
            name=name, parent=parent, jurisdiction=jurisdiction, threat=threat,
            source=Source.FIXTURE,
        )
    except ValueError as exc:
        raise FixtureError(f"line {lineno}: {exc}") from exc
    return FixtureEntry(cidr=cidr, company=company, line=lineno)


class FixtureIndex:
    """Immutable longest-prefix-match index over fixture entries."""

    def __init__(self, entries: Iterable[FixtureEntry]):
        self.entries: list[FixtureEntry] = []
        # (ip_version, prefixlen) -> {network_address_int: FixtureEntry}
        self._tables: dict[tuple[int, int], dict[int, FixtureEntry]] = {}
        seen: dict[tuple[int, int, int], FixtureEntry] = {}
        companies: dict[str, FixtureEntry] = {}
        for entry in entries:
            net = entry.cidr
            key = (net.version, net.prefixlen, int(net.network_address))
            prior = seen.get(key)
            if prior is not None:
                if prior.company.name != entry.company.name:
                    raise FixtureError(
                        f"overlapping {net} maps to both {prior.company.name!r} "
                        f"(line {prior.line}) and {entry.company.name!r} (line {entry.line})"
                    )
                continue  # exact duplicate, keep first
            prior_co = companies.get(entry.company.name)
            if prior_co is not None and prior_co.company != entry.company:
                raise FixtureError(
                    f"company {entry.company.name!r} has conflicting metadata "
                    f"on lines {prior_co.line} and {entry.line}"
                )
            seen[key] = entry
            companies.setdefault(entry.company.name, entry)
            self.entries.append(entry)
            self._tables.setdefault((net.version, net.prefixlen), {})[
                int(net.network_address)
            ] = entry
        self._plens = {
            4: sorted((p for v, p in self._tables if v == 4), reverse=True),
            6: sorted((p for v, p in self._tables if v == 6), reverse=True),
        }
        self._companies = {e.company.name: e.company for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, ip: str | ipaddress.IPv4Address | ipaddress.IPv6Address
               ) -> FixtureEntry | None:
        addr = ipaddress.ip_address(ip)
        ip_int = int(addr)
        max_len = addr.max_prefixlen
        for plen in self._plens[addr.version]:
            net_int = (ip_int >> (max_len - plen)) << (max_len - plen)
            entry = self._tables[(addr.version, plen)].get(net_int)
            if entry is not None:
                return entry
        return None

    def companies(self) -> dict[str, CompanyRecord]:
        """Company name -> template record (first fixture occurrence)."""
        return dict(self._companies)

    def prefixes_for(self, names: Iterable[str]) -> list:
        """All fixture prefixes owned by the given companies, as declared."""
        wanted = set(names)
        return [e.cidr for e in self.entries if e.company.name in wanted]

    def match_prefixes(self, names: Iterable[str]) -> list:
        """
        The exact IP set whose longest-prefix owner is one of `names`,
        expressed as a prefix list: each owned fixture prefix minus any
        longer fixture prefixes nested inside it (which belong to their
        own owners). This is what makes compiled rules agree with
        per-IP resolution everywhere, including carve-outs.
        """
        wanted = set(names)
        out = []
        for entry in self.entries:
            if entry.company.name not in wanted:
                continue
            nested = [
                e.cidr
                for e in self.entries
                if e.cidr.version == entry.cidr.version
                and e.cidr.prefixlen > entry.cidr.prefixlen
                and e.cidr.subnet_of(entry.cidr)
            ]
            # only maximal nested prefixes need excluding
            nested.sort(key=lambda n: n.prefixlen)
            maximal = []
            for net in nested:
                if not any(net.subnet_of(m) for m in maximal):
                    maximal.append(net)
            remaining = [entry.cidr]
            for child in maximal:
                split: list = []
                for piece in remaining:
                    if child.subnet_of(piece):
                        split.extend(piece.address_exclude(child))
                    else:
                        split.append(piece)
                remaining = split
            out.extend(remaining)
        return sorted(out, key=lambda n: (n.version, int(n.network_address), n.prefixlen))


def load_fixture_text(text: str) -> tuple[FixtureIndex, int]:
    entries = []
    count = 0
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            entry = parse_fixture_line(raw, lineno)
        except FixtureError as exc:
            errors.append(str(exc))
            continue
        if entry is not None:
            entries.append(entry)
            count += 1
    if errors:
        raise FixtureError("; ".join(errors))
    return FixtureIndex(entries), count


# ---------------------------------------------------------------------------
# Resolver
# ---------------------------------------------------------------------------


class Resolver:
    """
    Cached enrichment front-end. Safe to call from the ingest consumer and
    API readers concurrently; the lock also guarantees at most one provider
    call per IP per TTL.
    """

    def __init__(
        self,
        fixtures: FixtureIndex | None = None,
        provider: CompanyProvider | None = None,
        ttl_ms: int = DEFAULT_TTL_MS,
        failure_ttl_ms: int = FAILURE_TTL_MS,
    ):
        self._fixtures = fixtures or FixtureIndex([])
        self.provider = provider
        self.ttl_ms = ttl_ms
        self.failure_ttl_ms = failure_ttl_ms
        self._cache: dict[str, CompanyRecord] = {}
        self._manual_parents: dict[str, str | None] = {}
        self._lock = threading.RLock()

    # -- fixtures ----------------------------------------------------------

    def load_fixtures(self, path: str) -> int:
        """Replace the fixture set atomically. Returns entries loaded."""
        with open(path, "r", encoding="utf-8") as fh:
            return self.load_fixture_text(fh.read())

    def load_fixture_text(self, text: str) -> int:
        index, count = load_fixture_text(text)
        with self._lock:
            self._fixtures = index
            self._cache.clear()  # stale records must not mask the new set
        return count

    @property
    def fixtures(self) -> FixtureIndex:
        return self._fixtures

    # -- resolution --------------------------------------------------------

    def resolve(self, ip: str, now_ms: int) -> CompanyRecord:
        with self._lock:
            cached = self._cache.get(ip)
            if cached is not None and cached.fresh(now_ms):
                return cached
            entry = self._fixtures.lookup(ip)
            if entry is not None:
                record = replace(
                    entry.company, resolved_at_ms=now_ms, ttl_ms=self.ttl_ms
                )
            elif self.provider is not None:
                record = self._provider_lookup(ip, now_ms)
            else:
                record = unknown_record(now_ms)
                record = replace(record, ttl_ms=self.failure_ttl_ms)
            self._cache[ip] = record
            return record

    def _provider_lookup(self, ip: str, now_ms: int) -> CompanyRecord:
        try:
            found = self.provider.lookup(ip)
        except Exception:
            # Enrichment failures must never block ingest; retry later.
            return replace(
                unknown_record(now_ms, Source.PROVIDER), ttl_ms=self.failure_ttl_ms
            )
        if found is None:
            return replace(
                unknown_record(now_ms, Source.PROVIDER), ttl_ms=self.failure_ttl_ms
            )
        return replace(
            found, source=Source.PROVIDER, resolved_at_ms=now_ms, ttl_ms=self.ttl_ms
        )

    def pin(self, ip: str, record: CompanyRecord, now_ms: int) -> CompanyRecord:
        """Manually override the record for one IP (source=MANUAL)."""
        pinned = replace(
            record, source=Source.MANUAL, resolved_at_ms=now_ms, ttl_ms=self.ttl_ms
        )
        with self._lock:
            self._cache[ip] = pinned
            self._manual_parents[pinned.name] = pinned.parent
        return pinned

    # -- corporate groups ----------------------------------------------------

    def _parent_of(self, name: str) -> str | None:
        company = self._fixtures.companies().get(name)
        if company is not None:
            return company.parent
        return self._manual_parents.get(name)

    def known_company(self, name: str) -> bool:
        companies = self._fixtures.companies()
        if name in companies or name in self._manual_parents:
            return True
        # names that only ever appear as a parent still exist in the data
        return any(c.parent == name for c in companies.values())

    def corporate_group(self, name: str) -> str:
        """
        Follow parent links to the group root. Companies with no parent are
        their own root; unknown companies come back unchanged (check
        known_company to distinguish).
        """
        path = [name]
        seen = {name}
        current = name
        while True:
            parent = self._parent_of(current)
            if parent is None:
                return current
            if parent in seen:
                raise GroupCycleError(path[path.index(parent):])
            seen.add(parent)
            path.append(parent)
            current = parent

    def group_members(self, root: str) -> list[str]:
        """Every known company whose group root is `root` (including it)."""
        members = []
        for name in self.companies():
            try:
                if self.corporate_group(name) == root:
                    members.append(name)
            except GroupCycleError:
                continue
        return sorted(members)

    def companies(self) -> dict[str, CompanyRecord]:
        merged = self._fixtures.companies()
        with self._lock:
            for record in self._cache.values():
                merged.setdefault(record.name, record)
        return merged

    def match_prefixes(self, names: Iterable[str]) -> list:
        return self._fixtures.match_prefixes(names)

    def prefixes_for(self, names: Iterable[str]) -> list:
        return self._fixtures.prefixes_for(names)
