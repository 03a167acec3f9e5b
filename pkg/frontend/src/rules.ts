/**
 * Rule builder: device and company drop-downs over live data, an impact
 * preview, and a separate explicit "arm" step (directives are created
 * disabled). Below stage 3 the panel renders a locked state derived from
 * the StageConfig payload or a stage_gate error body, never from
 * hardcoded stage knowledge.
 */

import type {
  DevicePayload,
  DirectivePayload,
  PreviewPayload,
  StageGatePayload,
  StagePayload,
} from "./api.js";
import { escapeHtml, fmtBytes } from "./format.js";

export interface RuleBuilderVM {
  locked: boolean;
  currentStage: number;
  requiredStage: number | null;
  lockMessage: string | null;
  devices: DevicePayload[];
  companies: string[];
  directives: DirectivePayload[];
}

export function buildRuleBuilder(
  stage: StagePayload,
  devices: DevicePayload[],
  companies: string[],
  directives: DirectivePayload[],
): RuleBuilderVM {
  const locked = !stage.features.includes("controls");
  return {
    locked,
    currentStage: stage.stage,
    requiredStage: locked ? null : null, // filled precisely by a gate error
    lockMessage: locked
      ? `Blocking controls are locked at stage ${stage.stage}.`
      : null,
    devices,
    companies,
    directives,
  };
}

/** Refine the lock state from an actual stage_gate refusal. */
export function applyStageGate(vm: RuleBuilderVM, gate: StageGatePayload): RuleBuilderVM {
  return {
    ...vm,
    locked: true,
    currentStage: gate.current_stage,
    requiredStage: gate.required_stage,
    lockMessage: `Locked: ${gate.feature} unlocks at stage ${gate.required_stage} (currently stage ${gate.current_stage}).`,
  };
}

export function renderRuleBuilder(vm: RuleBuilderVM, preview: PreviewPayload | null): string {
  if (vm.locked) {
    return (
      '<div class="locked-state" data-state="locked">' +
      `<span class="lock-icon">&#128274;</span> ${escapeHtml(vm.lockMessage ?? "Locked.")}` +
      "</div>"
    );
  }
  const deviceOptions =
    '<option value="ALL">all devices</option>' +
    vm.devices
      .map(
        (d) =>
          `<option value="${escapeHtml(d.device_id)}">${escapeHtml(d.friendly_name)}</option>`,
      )
      .join("");
  const companyOptions = vm.companies
    .map((c) => `<option value="${escapeHtml(c)}">${escapeHtml(c)}</option>`)
    .join("");

  const previewHtml = preview
    ? '<div class="preview" data-state="preview">' +
      `<p>Would have blocked <b data-field="matched_bytes">${fmtBytes(preview.matched_bytes)}</b> ` +
      `across <b data-field="matched_flows">${preview.matched_flows}</b> flows ` +
      `(${preview.affected_companies.map(escapeHtml).join(", ") || "no companies"}).</p>` +
      '<button id="arm-directive" class="danger">Arm this block</button>' +
      "</div>"
    : '<p class="hint">Preview the impact before arming; new blocks start disabled.</p>';

  const directiveList = vm.directives.length
    ? "<ul class='directive-list'>" +
      vm.directives
        .map(
          (d) =>
            `<li data-directive="${d.id}"><code>${escapeHtml(d.label)}</code> ` +
            `<span class="badge ${d.state === "ENABLED" ? "on" : "off"}">${d.state}</span>` +
            (d.state === "ENABLED"
              ? ` <button data-disable="${d.id}">disable</button>`
              : ` <button data-enable="${d.id}">enable</button>`) +
            "</li>",
        )
        .join("") +
      "</ul>"
    : '<p class="hint">No blocks defined yet.</p>';

  return (
    '<div data-state="unlocked">' +
    '<div class="builder-row">block all traffic between ' +
    `<select id="rule-device">${deviceOptions}</select> and ` +
    `<select id="rule-company">${companyOptions}</select> ` +
    '<button id="preview-directive">Preview impact</button></div>' +
    previewHtml +
    "<h3>Existing blocks</h3>" +
    directiveList +
    "</div>"
  );
}
