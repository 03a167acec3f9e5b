/**
 * Aggregate exposure view: the profile table with jurisdiction badges and
 * threat flags. Rows render in exactly the API payload's order; byte and
 * packet counts are displayed verbatim and the share is the payload's own
 * share field rendered as a percentage.
 */

import type { CompanyPayload, ProfilePayload } from "./api.js";
import { escapeHtml, fmtBytes, fmtShare } from "./format.js";

export interface AggregateVM {
  window: [number, number];
  rows: ProfilePayload["rows"];
  threatByCompany: Map<string, CompanyPayload["threat"]>;
  deviceNames: Map<string, string>;
}

export function buildAggregate(
  profile: ProfilePayload,
  companies: CompanyPayload[],
  deviceNames: Map<string, string>,
): AggregateVM {
  return {
    window: profile.window,
    rows: profile.rows, // payload order; the client never re-sorts
    threatByCompany: new Map(companies.map((c) => [c.name, c.threat])),
    deviceNames,
  };
}

function threatBadge(threat: CompanyPayload["threat"] | undefined): string {
  if (!threat || threat === "NONE") return "";
  const cls = threat === "MALICIOUS" ? "threat-malicious" : "threat-warn";
  return ` <span class="badge ${cls}">${threat}</span>`;
}

export function renderAggregate(vm: AggregateVM): string {
  if (vm.rows.length === 0) {
    return '<div class="empty-state">No exposure recorded in this window.</div>';
  }
  const body = vm.rows
    .map((row) => {
      const device = vm.deviceNames.get(row.device_id) ?? row.device_id;
      return (
        "<tr>" +
        `<td>${escapeHtml(device)}</td>` +
        `<td>${escapeHtml(row.company)}${threatBadge(vm.threatByCompany.get(row.company))}</td>` +
        `<td><span class="badge jurisdiction">${escapeHtml(row.jurisdiction)}</span></td>` +
        `<td class="num" data-field="byte_count">${fmtBytes(row.byte_count)}</td>` +
        `<td class="num" data-field="packet_count">${row.packet_count}</td>` +
        `<td class="num" data-field="share">${fmtShare(row.share)}</td>` +
        "</tr>"
      );
    })
    .join("");
  return (
    '<table class="aggregate-table"><thead><tr>' +
    "<th>Device</th><th>Company</th><th>Where</th><th>Bytes</th><th>Packets</th><th>Share</th>" +
    `</tr></thead><tbody>${body}</tbody></table>`
  );
}
