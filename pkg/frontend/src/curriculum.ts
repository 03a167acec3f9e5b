/**
 * Curriculum panel: due modules with contextual content rendered by the
 * gateway. Hidden entirely while the curriculum feature is locked (the
 * feature list comes from the StageConfig payload).
 */

import type { RenderedModulePayload, StagePayload } from "./api.js";
import { escapeHtml } from "./format.js";

export interface CurriculumVM {
  visible: boolean;
  due: string[];
  titles: Map<string, string>;
  open: RenderedModulePayload | null;
}

export function buildCurriculum(
  stage: StagePayload,
  due: string[],
  titles: Map<string, string>,
  open: RenderedModulePayload | null,
): CurriculumVM {
  return {
    visible: stage.features.includes("curriculum"),
    due,
    titles,
    open,
  };
}

export function renderCurriculum(vm: CurriculumVM): string {
  if (!vm.visible) return "";
  if (vm.due.length === 0 && !vm.open) {
    return '<p class="hint">No lessons due right now.</p>';
  }
  const list =
    "<ul class='module-list'>" +
    vm.due
      .map(
        (id) =>
          `<li><button data-module="${escapeHtml(id)}">` +
          `${escapeHtml(vm.titles.get(id) ?? id)}</button></li>`,
      )
      .join("") +
    "</ul>";
  const openHtml = vm.open
    ? '<article class="module-body">' +
      `<h3>${escapeHtml(vm.open.title)}</h3>` +
      vm.open.body
        .split("\n\n")
        .map((p) => `<p>${escapeHtml(p)}</p>`)
        .join("") +
      `<button data-complete="${escapeHtml(vm.open.module_id)}">Mark as read</button>` +
      "</article>"
    : "";
  return list + openHtml;
}
