"""
Exposure accounting over (device x company x time).

Storage granularity is one fixed-width bucket (60 s by default); both the
live timeline and long-window aggregates are derived from the same bucket
rows, so the two views can never disagree. Byte volume is the primary
magnitude throughout; packet counts ride along.

Shares are computed in exact rational arithmetic and only converted to
float at the serialization edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .flowcap.models import Direction, FlowRecord, Locality
from .resolver import CompanyRecord
from .store import DuplicateFlowError, Store

# A timeseries answer is one point per display bucket; refuse windows that
# would materialize an absurd number of points (callers re-bucket instead).
MAX_TIMESERIES_POINTS = 100_000

# EU member states; the default home region for out-of-region statistics.
EU_MEMBERS = frozenset(
    {
        "AT", "BE", "BG", "HR", "CY", "CZ", "DK", "EE", "FI", "FR",
        "DE", "GR", "HU", "IE", "IT", "LV", "LT", "LU", "MT", "NL",
        "PL", "PT", "RO", "SK", "SI", "ES", "SE",
    }
)

HOME_REGIONS = {"EU": EU_MEMBERS}


def resolve_home_region(spec: str | Iterable[str]) -> frozenset[str]:
    """Accept a named region ("EU") or an explicit country-code list."""
    if isinstance(spec, str):
        name = spec.strip()
        if name.upper() in HOME_REGIONS:
            return HOME_REGIONS[name.upper()]
        parts = [p.strip().upper() for p in name.split(",") if p.strip()]
        return frozenset(parts)
    return frozenset(c.upper() for c in spec)


@dataclass(frozen=True)
class ExposureBucket:
    bucket_start_ms: int
    bucket_width_ms: int
    device_id: str
    company: str
    jurisdiction: str
    byte_count: int
    packet_count: int

    def __post_init__(self):
        if self.bucket_start_ms % self.bucket_width_ms != 0:
            raise ValueError("bucket start must be aligned to the bucket width")
        if self.byte_count < 0 or self.packet_count < 0:
            raise ValueError("bucket counts must be nonnegative")


@dataclass(frozen=True)
class ProfileRow:
    device_id: str
    company: str
    jurisdiction: str
    byte_count: int
    packet_count: int
    share: float


@dataclass(frozen=True)
class ExposureProfile:
    window: tuple[int, int]
    rows: tuple[ProfileRow, ...]

    def to_csv(self) -> str:
        lines = ["device,company,jurisdiction,bytes,packets,share"]
        for r in self.rows:
            lines.append(
                f"{r.device_id},{r.company},{r.jurisdiction},"
                f"{r.byte_count},{r.packet_count},{r.share}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class StatsReport:
    total_packets: int
    total_bytes: int
    distinct_devices: int
    distinct_companies: int
    distinct_jurisdictions: int
    distinct_destinations: int
    top_n: int
    top_n_share: Fraction
    out_of_region_share: Fraction
    home_region: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "total_packets": self.total_packets,
            "total_bytes": self.total_bytes,
            "distinct_devices": self.distinct_devices,
            "distinct_companies": self.distinct_companies,
            "distinct_jurisdictions": self.distinct_jurisdictions,
            "distinct_destinations": self.distinct_destinations,
            "top_n": self.top_n,
            "top_n_share": float(self.top_n_share),
            "out_of_region_share": float(self.out_of_region_share),
            "home_region": sorted(self.home_region),
        }

    def to_csv(self) -> str:
        data = self.to_dict()
        data["home_region"] = ";".join(data["home_region"])
        keys = list(data)
        return (
            ",".join(keys) + "\n" + ",".join(str(data[k]) for k in keys) + "\n"
        )


@dataclass(frozen=True)
class PeriodComparison:
    """Relative change in average daily bytes between two windows."""

    change: Fraction | None  # None exactly when `new` is set
    new: bool
    avg_daily_a: Fraction
    avg_daily_b: Fraction

    def to_dict(self) -> dict:
        return {
            "change": None if self.change is None else float(self.change),
            "new": self.new,
            "avg_daily_bytes_a": float(self.avg_daily_a),
            "avg_daily_bytes_b": float(self.avg_daily_b),
        }


class ExposureModel:
    """
    The write/read surface over exposure buckets. One writer (the ingest
    consumer), many readers; every read is a consistent store snapshot.
    """

    def __init__(self, store: Store, include_inbound: bool = False):
        self.store = store
        self.include_inbound = include_inbound

    @property
    def bucket_width_ms(self) -> int:
        return self.store.bucket_width_ms

    # -- writes ---------------------------------------------------------------

    def add_flow(
        self, record: FlowRecord, company: CompanyRecord
    ) -> ExposureBucket | None:
        """
        Fold one resolved flow into its bucket. Local flows are a contract
        violation (they are stored, never bucketed); inbound flows are
        skipped unless the model was configured to include them. Re-adding
        a record id is rejected without mutation.
        """
        if record.locality is not Locality.EXTERNAL:
            raise ValueError("only EXTERNAL flows contribute to exposure")
        if record.direction is Direction.INBOUND and not self.include_inbound:
            return None
        if not self.store.claim_flow_for_bucket(record.id):
            raise DuplicateFlowError(f"flow {record.id} already bucketed")
        width = self.bucket_width_ms
        start = record.window_start_ms - record.window_start_ms % width
        byte_count, packet_count = self.store.increment_bucket(
            start,
            record.device_id,
            company.name,
            company.jurisdiction,
            record.byte_count,
            record.packet_count,
        )
        return ExposureBucket(
            bucket_start_ms=start,
            bucket_width_ms=width,
            device_id=record.device_id,
            company=company.name,
            jurisdiction=company.jurisdiction,
            byte_count=byte_count,
            packet_count=packet_count,
        )

    # -- reads ----------------------------------------------------------------

    def timeseries(
        self,
        window: tuple[int, int],
        bucket_width_ms: int | None = None,
        device_id: str | None = None,
        company: str | None = None,
    ) -> list[tuple[int, int]]:
        """
        Byte series over the window at the requested display width. Gaps
        are zero; re-bucketing sums storage buckets exactly, never
        interpolates.
        """
        start, end = window
        if start >= end:
            raise ValueError("window start must precede end")
        width = bucket_width_ms or self.bucket_width_ms
        if width <= 0 or width % self.bucket_width_ms != 0:
            raise ValueError(
                f"display width {width} must be a positive multiple of the "
                f"storage width {self.bucket_width_ms}"
            )
        if (end - start) / width > MAX_TIMESERIES_POINTS:
            raise ValueError(
                f"window would produce more than {MAX_TIMESERIES_POINTS} points; "
                "query a narrower window or a wider bucket width"
            )
        rows = self.store.query_buckets(
            window=window, device_id=device_id, company=company
        )
        sums: dict[int, int] = {}
        for bucket_start, _dev, _co, _jur, byte_count, _packets in rows:
            display = bucket_start - bucket_start % width
            sums[display] = sums.get(display, 0) + byte_count
        first = start - start % width
        series = []
        point = first
        while point < end:
            series.append((point, sums.get(point, 0)))
            point += width
        return series

    def profile(self, window: tuple[int, int]) -> ExposureProfile:
        """Aggregate exposure rows, largest byte volume first."""
        rows = self.store.query_buckets(window=window)
        grouped: dict[tuple[str, str], list] = {}
        for bucket_start, device_id, company, jurisdiction, byte_count, packets in rows:
            entry = grouped.get((device_id, company))
            if entry is None:
                grouped[(device_id, company)] = [byte_count, packets, jurisdiction, bucket_start]
            else:
                entry[0] += byte_count
                entry[1] += packets
                if bucket_start >= entry[3]:  # most recent jurisdiction wins
                    entry[2], entry[3] = jurisdiction, bucket_start
        total = sum(e[0] for e in grouped.values())
        ordered = sorted(
            grouped.items(), key=lambda kv: (-kv[1][0], kv[0][1], kv[0][0])
        )
        profile_rows = tuple(
            ProfileRow(
                device_id=device_id,
                company=company,
                jurisdiction=entry[2],
                byte_count=entry[0],
                packet_count=entry[1],
                share=float(Fraction(entry[0], total)) if total else 0.0,
            )
            for (device_id, company), entry in ordered
        )
        return ExposureProfile(window=window, rows=profile_rows)

    def stats_report(
        self,
        window: tuple[int, int],
        top_n: int = 3,
        home_region: Iterable[str] | str = EU_MEMBERS,
    ) -> StatsReport:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        region = resolve_home_region(home_region)
        rows = self.store.query_buckets(window=window)
        total_bytes = 0
        total_packets = 0
        devices: set[str] = set()
        by_company: dict[str, int] = {}
        company_jurisdiction: dict[str, tuple[int, str]] = {}
        for bucket_start, device_id, company, jurisdiction, byte_count, packets in rows:
            total_bytes += byte_count
            total_packets += packets
            devices.add(device_id)
            by_company[company] = by_company.get(company, 0) + byte_count
            prior = company_jurisdiction.get(company)
            if prior is None or bucket_start >= prior[0]:
                company_jurisdiction[company] = (bucket_start, jurisdiction)
        jurisdictions = {j for _, j in company_jurisdiction.values()}
        ranked = sorted(by_company.items(), key=lambda kv: (-kv[1], kv[0]))
        top_bytes = sum(b for _, b in ranked[:top_n])
        out_bytes = sum(
            b
            for name, b in by_company.items()
            if company_jurisdiction[name][1] not in region
        )
        zero = Fraction(0)
        return StatsReport(
            total_packets=total_packets,
            total_bytes=total_bytes,
            distinct_devices=len(devices),
            distinct_companies=len(by_company),
            distinct_jurisdictions=len(jurisdictions),
            distinct_destinations=self.store.count_distinct_destinations(window),
            top_n=top_n,
            top_n_share=Fraction(top_bytes, total_bytes) if total_bytes else zero,
            out_of_region_share=Fraction(out_bytes, total_bytes) if total_bytes else zero,
            home_region=region,
        )

    def compare_periods(
        self,
        window_a: tuple[int, int],
        window_b: tuple[int, int],
        device_id: str | None = None,
        company: str | None = None,
    ) -> PeriodComparison:
        avg_a = self._avg_daily_bytes(window_a, device_id, company)
        avg_b = self._avg_daily_bytes(window_b, device_id, company)
        if avg_a == 0:
            if avg_b == 0:
                return PeriodComparison(Fraction(0), False, avg_a, avg_b)
            return PeriodComparison(None, True, avg_a, avg_b)
        return PeriodComparison((avg_b - avg_a) / avg_a, False, avg_a, avg_b)

    def _avg_daily_bytes(
        self, window: tuple[int, int], device_id: str | None, company: str | None
    ) -> Fraction:
        start, end = window
        if start >= end:
            raise ValueError("window must have positive duration")
        total = sum(
            r[4]
            for r in self.store.query_buckets(
                window=window, device_id=device_id, company=company
            )
        )
        return Fraction(total) / (Fraction(end - start) / Fraction(86_400_000))
