/**
 * Dashboard bootstrap: always-on kiosk with two screens (live timeline /
 * aggregate exposure), the rule builder, and the curriculum panel. All
 * data flows in from the /v1/ API and the event stream; pushing the
 * stage forward or redacting data re-renders automatically.
 */

import {
  GatewayClient,
  stageGateOf,
  type CompanyPayload,
  type DevicePayload,
  type DirectivePayload,
  type PreviewPayload,
  type ProfilePayload,
  type RenderedModulePayload,
  type StagePayload,
  type TimeseriesPayload,
} from "./api.js";
import { buildAggregate, renderAggregate } from "./aggregate.js";
import { buildCurriculum, renderCurriculum } from "./curriculum.js";
import { buildRuleBuilder, applyStageGate, renderRuleBuilder, type RuleBuilderVM } from "./rules.js";
import { EventStream } from "./sse.js";
import { buildTimeline, renderTimeline } from "./timeline.js";

const client = new GatewayClient("");

const TIMELINE_SPAN_MS = 60 * 60 * 1000; // trailing hour

interface State {
  stage: StagePayload;
  devices: DevicePayload[];
  companies: CompanyPayload[];
  profile: ProfilePayload;
  series: Map<string, TimeseriesPayload>;
  directives: DirectivePayload[];
  due: string[];
  moduleTitles: Map<string, string>;
  openModule: RenderedModulePayload | null;
  preview: PreviewPayload | null;
  pendingDirective: DirectivePayload | null;
  screen: "timeline" | "aggregate";
  gateError: RuleBuilderVM | null;
}

const state: State = {
  stage: { stage: 1, stage_started_ms: {}, features: ["display"] },
  devices: [],
  companies: [],
  profile: { window: [0, 0], rows: [] },
  series: new Map(),
  directives: [],
  due: [],
  moduleTitles: new Map(),
  openModule: null,
  preview: null,
  pendingDirective: null,
  screen: "timeline",
  gateError: null,
};

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

// -- data refresh -------------------------------------------------------------

async function refreshExposure(): Promise<void> {
  const now = Date.now();
  state.profile = await client.getProfile(0, now);
  const start = now - TIMELINE_SPAN_MS;
  const companies = [...new Set(state.profile.rows.map((r) => r.company))];
  const series = new Map<string, TimeseriesPayload>();
  await Promise.all(
    companies.map(async (company) => {
      series.set(company, await client.getTimeseries(start, now, { company }));
    }),
  );
  state.series = series;
  renderScreens();
}

async function refreshStage(): Promise<void> {
  state.stage = await client.getStage();
  el("stage-pill").textContent = `stage ${state.stage.stage}`;
  renderRules();
  await refreshCurriculum();
}

async function refreshMeta(): Promise<void> {
  const [devices, companies, directives] = await Promise.all([
    client.getDevices(),
    client.getCompanies(),
    client.getDirectives(),
  ]);
  state.devices = devices.devices;
  state.companies = companies.companies;
  state.directives = directives.directives;
  renderRules();
  renderScreens();
}

async function refreshCurriculum(): Promise<void> {
  if (!state.stage.features.includes("curriculum")) {
    state.due = [];
    state.openModule = null;
    renderCurriculumPanel();
    return;
  }
  const [due, modules] = await Promise.all([
    client.curriculumDue(),
    client.curriculumModules(),
  ]);
  state.due = due.due;
  state.moduleTitles = new Map(modules.modules.map((m) => [m.id, m.title]));
  renderCurriculumPanel();
}

async function refreshAll(): Promise<void> {
  await refreshStage();
  await refreshMeta();
  await refreshExposure();
}

// -- rendering ----------------------------------------------------------------

function renderScreens(): void {
  const timeline = buildTimeline(state.profile, state.series);
  el("screen-timeline").innerHTML = renderTimeline(timeline);
  const deviceNames = new Map(state.devices.map((d) => [d.device_id, d.friendly_name]));
  const aggregate = buildAggregate(state.profile, state.companies, deviceNames);
  el("screen-aggregate").innerHTML = renderAggregate(aggregate);
  el("screen-timeline").classList.toggle("hidden", state.screen !== "timeline");
  el("screen-aggregate").classList.toggle("hidden", state.screen !== "aggregate");
  el("toggle-screen").textContent =
    state.screen === "timeline" ? "Show totals" : "Show timeline";
}

function renderRules(): void {
  let vm = buildRuleBuilder(
    state.stage,
    state.devices,
    [...new Set(state.companies.map((c) => c.name))].sort(),
    state.directives,
  );
  if (state.gateError) vm = { ...vm, ...state.gateError };
  el("rule-builder").innerHTML = renderRuleBuilder(vm, state.preview);
}

function renderCurriculumPanel(): void {
  const vm = buildCurriculum(state.stage, state.due, state.moduleTitles, state.openModule);
  el("curriculum").innerHTML = renderCurriculum(vm);
  el("curriculum-section").classList.toggle("hidden", !vm.visible);
}

// -- interactions -------------------------------------------------------------

async function previewSelection(): Promise<void> {
  const device = (el("rule-device") as HTMLSelectElement).value;
  const company = (el("rule-company") as HTMLSelectElement).value;
  try {
    state.pendingDirective = await client.createDirective(device, {
      kind: "company",
      value: company,
    });
    state.preview = await client.previewDirective(state.pendingDirective.id);
    state.gateError = null;
  } catch (error) {
    const gate = stageGateOf(error);
    if (gate) {
      state.gateError = applyStageGate(
        buildRuleBuilder(state.stage, state.devices, [], state.directives),
        gate,
      );
    } else {
      throw error;
    }
  }
  await refreshDirectivesOnly();
}

async function refreshDirectivesOnly(): Promise<void> {
  state.directives = (await client.getDirectives()).directives;
  renderRules();
}

async function armPending(): Promise<void> {
  if (!state.pendingDirective) return;
  await client.enableDirective(state.pendingDirective.id);
  state.pendingDirective = null;
  state.preview = null;
  await refreshDirectivesOnly();
}

document.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  if (target.id === "toggle-screen") {
    state.screen = state.screen === "timeline" ? "aggregate" : "timeline";
    renderScreens();
  } else if (target.id === "preview-directive") {
    void previewSelection();
  } else if (target.id === "arm-directive") {
    void armPending();
  } else if (target.dataset.enable) {
    void client.enableDirective(target.dataset.enable).then(refreshDirectivesOnly);
  } else if (target.dataset.disable) {
    void client.disableDirective(target.dataset.disable).then(refreshDirectivesOnly);
  } else if (target.dataset.module) {
    void client
      .curriculumRendered(target.dataset.module, 0, Date.now())
      .then((rendered) => {
        state.openModule = rendered;
        renderCurriculumPanel();
      });
  } else if (target.dataset.complete) {
    void client.completeModule(target.dataset.complete).then(() => {
      state.openModule = null;
      void refreshCurriculum();
    });
  }
});

// -- live stream ----------------------------------------------------------------

let exposureTimer: number | undefined;

function scheduleExposureRefresh(): void {
  if (exposureTimer !== undefined) return;
  exposureTimer = window.setTimeout(() => {
    exposureTimer = undefined;
    void refreshExposure();
  }, 400);
}

const stream = new EventStream(
  "/v1/stream",
  (event) => {
    if (event.type === "bucket") scheduleExposureRefresh();
    else if (event.type === "company") void refreshMeta();
    else if (event.type === "ruleset") void refreshDirectivesOnly();
    else if (event.type === "stage") void refreshStage().then(scheduleExposureRefresh);
    else if (event.type === "curriculum_due") void refreshCurriculum();
    else if (event.type === "redaction") void refreshAll();
  },
  (status) => {
    const banner = el("stream-status");
    banner.textContent = status === "live" ? "" : status;
    banner.classList.toggle("hidden", status === "live");
  },
);

// auto-advance the timeline even when traffic is quiet
window.setInterval(() => void refreshExposure(), 60_000);
window.setInterval(() => {
  el("clock").textContent = new Date().toLocaleTimeString();
}, 1_000);

void refreshAll().then(() => stream.start());
