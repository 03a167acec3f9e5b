"""Firewall directives: lifecycle, compilation, verdicts, preview."""

from __future__ import annotations

import ipaddress
import random
import threading

import pytest

from hearthgate.flowcap.models import Device
from hearthgate.guard import (
    ALL_DEVICES,
    CompanyScope,
    DirectiveState,
    DirectiveValidationError,
    EMPTY_RULESET,
    GuardEngine,
    ScopeKind,
    SimulatedAdapter,
    Verdict,
    decide,
    parse_blocklist_text,
)
from hearthgate.resolver import Resolver
from hearthgate.stage import StageConfig, StageGateError
from hearthgate.store import Store

from .conftest import make_flow
from .firewall_trials import run_equivalence_trial
from .oracles import oracle_group_root

STAGE1 = StageConfig(stage=1, stage_started_ms={1: 0})
STAGE3 = StageConfig(stage=3, stage_started_ms={1: 0, 2: 0, 3: 0})

FIXTURES = (
    "198.51.100.0/24\tInstagram\tFacebook, Inc\tUS\tNONE\n"
    "198.51.101.0/24\tWhatsApp\tFacebook, Inc\tUS\tNONE\n"
    "198.51.102.0/24\tFacebook, Inc\t-\tUS\tNONE\n"
    "203.0.0.0/24\tA\t-\tUS\tNONE\n"
    "203.0.1.0/24\tB\t-\tUS\tNONE\n"
)


@pytest.fixture
def engine():
    store = Store(":memory:")
    resolver = Resolver()
    resolver.load_fixture_text(FIXTURES)
    store.upsert_device(Device("dev-iphone", "sams-iphone", 1, 2))
    store.upsert_device(Device("dev-tv", "living-room-tv", 1, 2))
    return GuardEngine(store, resolver)


# ---------------------------------------------------------------------------
# create_directive
# ---------------------------------------------------------------------------


def test_label_renders_verbatim(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "Facebook, Inc"), STAGE3, 1
    )
    assert directive.label == "block all traffic between <sams-iphone> and <Facebook, Inc>"


def test_created_disabled_two_step_arming(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    assert directive.state is DirectiveState.DISABLED
    assert engine.compile().entries == ()  # still inert until armed
    engine.enable(directive.id)
    assert len(engine.compile().entries) == 1


def test_stage_gate_blocks_creation(engine):
    with pytest.raises(StageGateError) as exc:
        engine.create_directive(
            "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE1, 1
        )
    assert exc.value.current_stage == 1
    assert exc.value.required_stage == 3


def test_unknown_device_and_company_rejected(engine):
    with pytest.raises(DirectiveValidationError, match="device"):
        engine.create_directive(
            "ghost", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
        )
    with pytest.raises(DirectiveValidationError, match="company"):
        engine.create_directive(
            "dev-iphone", CompanyScope(ScopeKind.COMPANY, "NoSuchCo"), STAGE3, 1
        )


def test_all_devices_blocklist_scope(engine):
    engine.install_sample_blocklists()
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.BLOCKLIST, "ads-basic"), STAGE3, 1
    )
    engine.enable(directive.id)
    ruleset = engine.compile()
    [entry] = ruleset.entries
    assert entry.device_match == ALL_DEVICES
    # every device is covered
    for device in ("dev-iphone", "dev-tv", "anything"):
        flow = make_flow("f", device_id=device, dst_ip="203.0.113.50")
        assert decide(flow, ruleset) is Verdict.BLOCK


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------


def test_compile_empty_set(engine):
    assert engine.compile().entries == ()


def test_compile_single_company_exact_prefix(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    engine.enable(directive.id)
    [entry] = engine.compile().entries
    assert entry.prefixes == ("203.0.0.0/24",)


def test_compile_group_union_of_member_prefixes(engine):
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.GROUP, "Facebook, Inc"), STAGE3, 1
    )
    engine.enable(directive.id)
    [entry] = engine.compile().entries
    # oracle: union of the prefixes of every company whose group root is
    # Facebook, Inc, computed by independent parent-walk over the fixture
    entries = [
        (ipaddress.ip_network(c), n)
        for c, n in [
            ("198.51.100.0/24", "Instagram"),
            ("198.51.101.0/24", "WhatsApp"),
            ("198.51.102.0/24", "Facebook, Inc"),
            ("203.0.0.0/24", "A"),
            ("203.0.1.0/24", "B"),
        ]
    ]
    parents = {"Instagram": "Facebook, Inc", "WhatsApp": "Facebook, Inc"}
    expected = sorted(
        str(net)
        for net, name in entries
        if oracle_group_root(name, parents) == "Facebook, Inc"
    )
    assert sorted(entry.prefixes) == expected


def test_compile_inert_directive_flagged(engine):
    # parent-only company: known via parent links but owns no prefixes
    resolver = engine.resolver
    resolver.load_fixture_text("198.51.100.0/24\tInstagram\tMetaHold\tUS\tNONE\n")
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "MetaHold"), STAGE3, 1
    )
    engine.enable(directive.id)
    ruleset = engine.compile()
    assert directive.id in ruleset.inert_directive_ids
    assert ruleset.entries == ()


def test_compile_version_strictly_increases(engine):
    versions = [engine.compile().version for _ in range(3)]
    assert versions == sorted(versions)
    assert len(set(versions)) == 3


def test_compile_deterministic_output(engine):
    d1 = engine.create_directive(ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1)
    d2 = engine.create_directive("dev-tv", CompanyScope(ScopeKind.COMPANY, "B"), STAGE3, 2)
    engine.enable(d1.id)
    engine.enable(d2.id)
    a = engine.compile()
    b = engine.compile()
    strip = lambda rs: [(e.directive_id, e.device_match, e.prefixes) for e in rs.entries]
    assert strip(a) == strip(b)


# ---------------------------------------------------------------------------
# decide
# ---------------------------------------------------------------------------


def test_decide_empty_ruleset_allows(engine):
    assert decide(make_flow("f"), EMPTY_RULESET) is Verdict.ALLOW


def test_decide_matches_device_and_prefix(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    engine.enable(directive.id)
    ruleset = engine.compile()
    blocked = make_flow("f1", device_id="dev-iphone", dst_ip="203.0.0.8")
    other_device = make_flow("f2", device_id="dev-tv", dst_ip="203.0.0.8")
    assert decide(blocked, ruleset) is Verdict.BLOCK
    assert decide(other_device, ruleset) is Verdict.ALLOW


def test_disabled_directive_is_inert(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    ruleset = engine.compile()
    flow = make_flow("f1", device_id="dev-iphone", dst_ip="203.0.0.8")
    assert decide(flow, ruleset) is Verdict.ALLOW
    engine.enable(directive.id)
    assert decide(flow, engine.compile()) is Verdict.BLOCK
    engine.disable(directive.id)
    assert decide(flow, engine.compile()) is Verdict.ALLOW


def test_adding_directive_never_unblocks(engine):
    d1 = engine.create_directive(ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1)
    engine.enable(d1.id)
    before = engine.compile()
    d2 = engine.create_directive("dev-tv", CompanyScope(ScopeKind.COMPANY, "B"), STAGE3, 2)
    engine.enable(d2.id)
    after = engine.compile()
    rng = random.Random(42)
    for i in range(300):
        flow = make_flow(
            f"f{i}",
            device_id=rng.choice(("dev-iphone", "dev-tv", "x")),
            dst_ip=f"203.0.{rng.randrange(3)}.{rng.randrange(1, 255)}",
        )
        if decide(flow, before) is Verdict.BLOCK:
            assert decide(flow, after) is Verdict.BLOCK


# ---------------------------------------------------------------------------
# preview
# ---------------------------------------------------------------------------


def _store_history(engine):
    rows = [
        ("h1", "dev-iphone", "203.0.0.5", 40_000, "A"),
        ("h2", "dev-iphone", "203.0.1.5", 7_000, "B"),
        ("h3", "dev-tv", "203.0.0.9", 2_000, "A"),
    ]
    for flow_id, device, ip, size, company in rows:
        engine.store.persist_flow(
            make_flow(flow_id, device_id=device, dst_ip=ip, byte_count=size),
            company=company,
            jurisdiction="US",
        )


def test_preview_nothing_matches(engine):
    _store_history(engine)
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "Instagram"), STAGE3, 1
    )
    preview = engine.preview_impact(directive, (0, 10**15))
    assert preview.matched_bytes == 0
    assert preview.matched_flows == 0
    assert preview.affected_companies == ()


def test_preview_counts_match_brute_force(engine):
    _store_history(engine)
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    preview = engine.preview_impact(directive, (0, 10**15))
    assert preview.matched_bytes == 42_000
    assert preview.matched_flows == 2
    assert preview.affected_companies == ("A",)
    assert preview.per_device == {"dev-iphone": (40_000, 1), "dev-tv": (2_000, 1)}


def test_preview_all_devices_superset(engine):
    _store_history(engine)
    scoped = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    broad = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    window = (0, 10**15)
    assert (
        engine.preview_impact(broad, window).matched_bytes
        >= engine.preview_impact(scoped, window).matched_bytes
    )


def test_preview_equals_posthoc_decide_count(engine):
    _store_history(engine)
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.GROUP, "Facebook, Inc"), STAGE3, 1
    )
    engine.enable(directive.id)
    ruleset = engine.compile()
    window = (0, 10**15)
    preview = engine.preview_impact(directive, window)
    replayed_bytes = sum(
        s.record.byte_count
        for s in engine.store.query_flows(window=window)
        if decide(s.record, ruleset) is Verdict.BLOCK
    )
    assert preview.matched_bytes == replayed_bytes


# ---------------------------------------------------------------------------
# suggestions
# ---------------------------------------------------------------------------


def test_suggest_group_sibling_first():
    store = Store(":memory:")
    resolver = Resolver()
    # parent has no fixture line of its own: siblings only
    resolver.load_fixture_text(
        "198.51.100.0/24\tInstagram\tFacebook\tUS\tNONE\n"
        "198.51.101.0/24\tWhatsApp\tFacebook\tUS\tNONE\n"
    )
    store.upsert_device(Device("dev1", "phone", 1, 2))
    engine = GuardEngine(store, resolver)
    directive = engine.create_directive(
        "dev1", CompanyScope(ScopeKind.COMPANY, "Instagram"), STAGE3, 1
    )
    suggestions = engine.suggest_similar(directive, now_ms=10_000_000)
    assert suggestions[0].company == "WhatsApp"
    assert suggestions[0].reason == "group-sibling"


def test_suggest_groupless_no_cotraffic_empty(engine):
    directive = engine.create_directive(
        "dev-iphone", CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    assert engine.suggest_similar(directive, now_ms=10_000_000) == []


def test_suggest_ranked_by_bytes():
    store = Store(":memory:")
    resolver = Resolver()
    resolver.load_fixture_text(
        "203.0.0.0/24\tTarget\t-\tUS\tNONE\n"
        "203.0.1.0/24\tBig\t-\tUS\tNONE\n"
        "203.0.2.0/24\tSmall\t-\tUS\tNONE\n"
    )
    store.upsert_device(Device("dev1", "phone", 1, 2))
    engine = GuardEngine(store, resolver)
    now = 10_000_000
    exposure_rows = [("Big", 500), ("Small", 300), ("Target", 100)]
    for name, size in exposure_rows:
        store.increment_bucket(now - now % 60_000, "dev1", name, "US", size, 1)
    directive = engine.create_directive(
        "dev1", CompanyScope(ScopeKind.COMPANY, "Target"), STAGE3, 1
    )
    suggestions = engine.suggest_similar(directive, now_ms=now)
    # ranking oracle: plain sort by byte volume descending
    expected = [name for name, _ in sorted(exposure_rows[:2], key=lambda r: -r[1])]
    assert [s.company for s in suggestions] == expected
    assert [s.byte_count for s in suggestions] == [500, 300]


def test_suggest_never_suggests_blocked():
    store = Store(":memory:")
    resolver = Resolver()
    resolver.load_fixture_text(
        "198.51.100.0/24\tInstagram\tFacebook\tUS\tNONE\n"
        "198.51.101.0/24\tWhatsApp\tFacebook\tUS\tNONE\n"
    )
    store.upsert_device(Device("dev1", "phone", 1, 2))
    engine = GuardEngine(store, resolver)
    blocker = engine.create_directive(
        "dev1", CompanyScope(ScopeKind.COMPANY, "WhatsApp"), STAGE3, 1
    )
    engine.enable(blocker.id)
    directive = engine.create_directive(
        "dev1", CompanyScope(ScopeKind.COMPANY, "Instagram"), STAGE3, 2
    )
    assert engine.suggest_similar(directive, now_ms=10_000_000) == []


# ---------------------------------------------------------------------------
# apply / adapters
# ---------------------------------------------------------------------------


def test_apply_empty_blocks_nothing(engine):
    adapter = SimulatedAdapter()
    engine.apply(engine.compile(), adapter)
    flows = [make_flow(f"f{i}", dst_ip="203.0.0.5") for i in range(5)]
    assert adapter.replay(flows) == [Verdict.ALLOW] * 5


def test_apply_replay_matches_decide(engine):
    directive = engine.create_directive(
        ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1
    )
    engine.enable(directive.id)
    ruleset = engine.compile()
    adapter = SimulatedAdapter()
    assert engine.apply(ruleset, adapter).ok
    rng = random.Random(7)
    flows = [
        make_flow(f"f{i}", device_id=rng.choice(("dev-iphone", "x")),
                  dst_ip=f"203.0.{rng.randrange(3)}.{rng.randrange(1, 255)}")
        for i in range(200)
    ]
    assert adapter.replay(flows) == [decide(f, ruleset) for f in flows]


def test_apply_failure_keeps_previous_version(engine):
    adapter = SimulatedAdapter()
    first = engine.compile()
    assert engine.apply(first, adapter).ok
    adapter.fail_next = True
    status = engine.apply(engine.compile(), adapter)
    assert not status.ok
    assert status.version_in_force == first.version
    assert adapter.version_in_force == first.version


def test_apply_swap_is_atomic(engine):
    d = engine.create_directive(ALL_DEVICES, CompanyScope(ScopeKind.COMPANY, "A"), STAGE3, 1)
    engine.enable(d.id)
    rs_a = engine.compile()
    rs_b = engine.compile()
    adapter = SimulatedAdapter()
    adapter.install(rs_a)
    seen = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            ruleset = adapter.ruleset
            seen.append(ruleset is rs_a or ruleset is rs_b)

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for _ in range(200):
        adapter.install(rs_b)
        adapter.install(rs_a)
    stop.set()
    for t in threads:
        t.join()
    assert all(seen)  # only whole published rulesets, never a mix


# ---------------------------------------------------------------------------
# blocklist parsing
# ---------------------------------------------------------------------------


def test_parse_blocklist_text():
    companies, prefixes = parse_blocklist_text(
        "# ads\nAdCo One\n203.0.113.0/24\n\nTrackCo  # inline\n"
    )
    assert companies == ("AdCo One", "TrackCo")
    assert prefixes == ("203.0.113.0/24",)


def test_enabled_blocklist_must_be_nonempty():
    with pytest.raises(ValueError):
        from hearthgate.guard import Blocklist, BlocklistSource

        Blocklist("x", "empty", (), (), BlocklistSource.USER, enabled=True)


# ---------------------------------------------------------------------------
# randomized compile/decide equivalence
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_equivalence_randomized(seed):
    rng = random.Random(20_000 + seed)
    agreements, total = run_equivalence_trial(rng, max_directives=20, max_flows=300)
    assert agreements == total
