/**
 * Live timeline: per-company stacked byte bars over time.
 *
 * Band values come from one /v1/timeseries call per company (filtered
 * server-side), and companies appear in the API profile's order, so the
 * view introduces no ordering or aggregation of its own. Bar geometry is
 * proportional scaling of payload values, nothing more.
 */

import type { ProfilePayload, TimeseriesPayload } from "./api.js";
import { bandColor, escapeHtml } from "./format.js";

export interface CompanyBand {
  company: string;
  jurisdiction: string;
  color: string;
  /** [bucket_start_ms, byte_count] straight from the company's series */
  points: [number, number][];
}

export interface TimelineVM {
  window: [number, number];
  bucketWidthMs: number;
  bands: CompanyBand[];
  empty: boolean;
}

export function buildTimeline(
  profile: ProfilePayload,
  seriesByCompany: Map<string, TimeseriesPayload>,
): TimelineVM {
  const seen = new Set<string>();
  const bands: CompanyBand[] = [];
  let bucketWidthMs = 60_000;
  for (const row of profile.rows) {
    if (seen.has(row.company)) continue; // profile rows are per device x company
    seen.add(row.company);
    const series = seriesByCompany.get(row.company);
    if (!series) continue;
    bucketWidthMs = series.bucket_width_ms;
    bands.push({
      company: row.company,
      jurisdiction: row.jurisdiction,
      color: bandColor(bands.length),
      points: series.points,
    });
  }
  const empty = bands.every((b) => b.points.every(([, v]) => v === 0));
  return { window: profile.window, bucketWidthMs, bands, empty };
}

/** Sum of a band's payload points; used by tests as the area oracle. */
export function bandTotal(band: CompanyBand): number {
  return band.points.reduce((acc, [, v]) => acc + v, 0);
}

export function renderTimeline(vm: TimelineVM): string {
  if (vm.empty) {
    return '<div class="empty-state">No traffic observed yet. Connect devices or replay a capture.</div>';
  }
  const bucketCount = Math.max(...vm.bands.map((b) => b.points.length), 1);
  const stackTotals: number[] = new Array(bucketCount).fill(0);
  for (const band of vm.bands) {
    band.points.forEach(([, v], i) => {
      stackTotals[i] += v;
    });
  }
  const maxStack = Math.max(...stackTotals, 1);
  const width = 960;
  const height = 300;
  const barWidth = width / bucketCount;

  let svg = `<svg viewBox="0 0 ${width} ${height}" preserveAspectRatio="none" class="timeline-svg">`;
  for (let i = 0; i < bucketCount; i++) {
    let y = height;
    for (const band of vm.bands) {
      const value = band.points[i]?.[1] ?? 0;
      if (value === 0) continue;
      const h = (value / maxStack) * (height - 10);
      y -= h;
      const ts = band.points[i]?.[0] ?? 0;
      svg +=
        `<rect x="${(i * barWidth).toFixed(2)}" y="${y.toFixed(2)}" ` +
        `width="${Math.max(barWidth - 1, 1).toFixed(2)}" height="${h.toFixed(2)}" ` +
        `fill="${band.color}" data-company="${escapeHtml(band.company)}">` +
        `<title>${escapeHtml(band.company)} — ${value} B at ${new Date(ts).toISOString()}</title></rect>`;
    }
  }
  svg += "</svg>";

  const legend = vm.bands
    .map(
      (band) =>
        `<span class="legend-item" data-company="${escapeHtml(band.company)}">` +
        `<i style="background:${band.color}"></i>${escapeHtml(band.company)}</span>`,
    )
    .join("");
  return `${svg}<div class="legend">${legend}</div>`;
}
