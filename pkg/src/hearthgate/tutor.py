"""
Curriculum delivery: small educational modules released on a cadence
across stage 2, each rendered with context generated from the household's
own stored traffic rather than canned examples.

Module files are plain text: a short front-matter (id, title, offset_days)
above a `---` line, then a body template with `{{slot_name}}` context
slots. Every built-in slot has a defined empty-data fallback sentence, so
rendering never fails for lack of traffic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable

from .exposure import ExposureModel
from .flowcap.models import Encryption, Locality
from .stage import Feature, StageConfig
from .store import Store

DAY_MS = 24 * 3600 * 1000

# release cadence across stage 2's two weeks: one module every other day
DEFAULT_OFFSETS_DAYS = (0, 2, 4, 6, 8, 10)

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")


class RenderError(ValueError):
    """Template references a slot with no registered generator."""


class NotDueError(ValueError):
    """Completion attempted for a module that is not yet due."""


@dataclass(frozen=True)
class CurriculumModule:
    id: str
    title: str
    body_template: str
    stage_offset_days: int

    def slots(self) -> list[str]:
        return _SLOT_RE.findall(self.body_template)


@dataclass(frozen=True)
class ContextExample:
    slot: str
    rendered: str
    window: tuple[int, int]
    source_query: str

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "rendered": self.rendered,
            "window": list(self.window),
            "source_query": self.source_query,
        }


@dataclass(frozen=True)
class RenderedModule:
    module_id: str
    title: str
    body: str
    examples: tuple[ContextExample, ...]
    completed_at_ms: int | None

    def to_dict(self) -> dict:
        return {
            "module_id": self.module_id,
            "title": self.title,
            "body": self.body,
            "examples": [e.to_dict() for e in self.examples],
            "completed_at_ms": self.completed_at_ms,
        }


def parse_module_text(text: str) -> CurriculumModule:
    if "---" not in text:
        raise ValueError("module file needs a --- separator after front-matter")
    head, body = text.split("---", 1)
    meta: dict[str, str] = {}
    for line in head.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    missing = {"id", "title", "offset_days"} - meta.keys()
    if missing:
        raise ValueError(f"module front-matter missing {sorted(missing)}")
    offset = int(meta["offset_days"])
    if offset < 0:
        raise ValueError("offset_days must be >= 0")
    return CurriculumModule(
        id=meta["id"],
        title=meta["title"],
        body_template=body.strip(),
        stage_offset_days=offset,
    )


def load_builtin_modules() -> list[CurriculumModule]:
    modules = []
    package = resources.files("hearthgate") / "curriculum"
    for entry in sorted(package.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".md"):
            modules.append(parse_module_text(entry.read_text(encoding="utf-8")))
    return sorted(modules, key=lambda m: (m.stage_offset_days, m.id))


# ---------------------------------------------------------------------------
# Context slot generators
# ---------------------------------------------------------------------------

SlotGenerator = Callable[[Store, ExposureModel, tuple[int, int]], ContextExample]


def _device_names(store: Store, device_ids: list[str]) -> list[str]:
    names = []
    for device_id in device_ids:
        device = store.get_device(device_id)
        names.append(device.friendly_name if device else device_id)
    return sorted(names)


def _gen_encrypted_vs_plaintext(
    store: Store, exposure: ExposureModel, window: tuple[int, int]
) -> ContextExample:
    query = (
        "partition devices with external flows in the window by whether any "
        "flow was classified PLAINTEXT"
    )
    flows = store.query_flows(window=window, locality=Locality.EXTERNAL)
    plaintext_devices: set[str] = set()
    all_devices: set[str] = set()
    for stored in flows:
        all_devices.add(stored.record.device_id)
        if stored.record.encryption is Encryption.PLAINTEXT:
            plaintext_devices.add(stored.record.device_id)
    if not all_devices:
        return ContextExample(
            slot="encrypted_vs_plaintext_devices",
            rendered="No device traffic was observed in this period.",
            window=window,
            source_query=query,
        )
    encrypted_only = _device_names(store, sorted(all_devices - plaintext_devices))
    plaintext = _device_names(store, sorted(plaintext_devices))
    parts = []
    if encrypted_only:
        parts.append(
            "Devices that sent no unencrypted data: " + ", ".join(encrypted_only) + "."
        )
    if plaintext:
        parts.append(
            "Devices that sent some data unencrypted: " + ", ".join(plaintext) + "."
        )
    return ContextExample(
        slot="encrypted_vs_plaintext_devices",
        rendered=" ".join(parts),
        window=window,
        source_query=query,
    )


def _gen_top_companies(
    store: Store, exposure: ExposureModel, window: tuple[int, int], n: int = 3
) -> ContextExample:
    query = f"top {n} companies by byte volume over the window"
    by_company: dict[str, int] = {}
    for _s, _d, company, _j, byte_count, _p in store.query_buckets(window=window):
        by_company[company] = by_company.get(company, 0) + byte_count
    if not by_company:
        return ContextExample(
            slot="top_companies",
            rendered="No external destinations were observed in this period.",
            window=window,
            source_query=query,
        )
    ranked = sorted(by_company.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return ContextExample(
        slot="top_companies",
        rendered=", ".join(name for name, _ in ranked),
        window=window,
        source_query=query,
    )


def _gen_jurisdiction_count(
    store: Store, exposure: ExposureModel, window: tuple[int, int]
) -> ContextExample:
    query = "count distinct jurisdictions among bucketed exposure in the window"
    jurisdictions = {
        row[3] for row in store.query_buckets(window=window)
    }
    if not jurisdictions:
        return ContextExample(
            slot="jurisdiction_count",
            rendered="no jurisdictions yet",
            window=window,
            source_query=query,
        )
    return ContextExample(
        slot="jurisdiction_count",
        rendered=str(len(jurisdictions)),
        window=window,
        source_query=query,
    )


BUILTIN_GENERATORS: dict[str, SlotGenerator] = {
    "encrypted_vs_plaintext_devices": _gen_encrypted_vs_plaintext,
    "top_companies": _gen_top_companies,
    "jurisdiction_count": _gen_jurisdiction_count,
}


# ---------------------------------------------------------------------------
# Scheduling and rendering
# ---------------------------------------------------------------------------


class Tutor:
    def __init__(
        self,
        store: Store,
        exposure: ExposureModel,
        modules: list[CurriculumModule] | None = None,
        generators: dict[str, SlotGenerator] | None = None,
    ):
        self.store = store
        self.exposure = exposure
        self.modules = {m.id: m for m in (modules if modules is not None else load_builtin_modules())}
        self.generators = dict(BUILTIN_GENERATORS)
        if generators:
            self.generators.update(generators)
        for module in self.modules.values():
            unknown = [s for s in module.slots() if s not in self.generators]
            if unknown:
                raise RenderError(
                    f"module {module.id!r} uses unregistered slots: {unknown}"
                )

    def list_modules(self) -> list[CurriculumModule]:
        return sorted(self.modules.values(), key=lambda m: (m.stage_offset_days, m.id))

    def schedule(self, stage: StageConfig, now_ms: int) -> list[str]:
        """Due module ids in offset order. Empty in stage 1, always."""
        if not stage.allows(Feature.CURRICULUM):
            return []
        start = stage.feature_started_ms(Feature.CURRICULUM)
        completed = self.store.curriculum_completions()
        due = [
            m
            for m in self.list_modules()
            if m.id not in completed
            and start + m.stage_offset_days * DAY_MS <= now_ms
        ]
        return [m.id for m in due]

    def render(self, module_id: str, window: tuple[int, int]) -> RenderedModule:
        module = self.modules.get(module_id)
        if module is None:
            raise KeyError(f"unknown curriculum module: {module_id}")
        examples: list[ContextExample] = []
        rendered_by_slot: dict[str, str] = {}
        for slot in module.slots():
            if slot in rendered_by_slot:
                continue
            generator = self.generators.get(slot)
            if generator is None:
                raise RenderError(f"no generator registered for slot {slot!r}")
            example = generator(self.store, self.exposure, window)
            examples.append(example)
            rendered_by_slot[slot] = example.rendered
        body = _SLOT_RE.sub(lambda m: rendered_by_slot[m.group(1)], module.body_template)
        return RenderedModule(
            module_id=module.id,
            title=module.title,
            body=body,
            examples=tuple(examples),
            completed_at_ms=self.store.curriculum_completion(module.id),
        )

    def mark_complete(self, module_id: str, stage: StageConfig, now_ms: int) -> int:
        """Complete a due module. Idempotent: first timestamp wins."""
        if module_id not in self.modules:
            raise KeyError(f"unknown curriculum module: {module_id}")
        if self.store.curriculum_completion(module_id) is not None:
            return self.store.curriculum_completion(module_id)  # type: ignore[return-value]
        if module_id not in self.schedule(stage, now_ms):
            raise NotDueError(f"module {module_id!r} is not due yet")
        return self.store.mark_curriculum_complete(module_id, now_ms)
