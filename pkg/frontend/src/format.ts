/**
 * Presentation helpers. Numbers are shown as the raw payload values
 * (bytes stay bytes); only units and percent rendering are added here,
 * never arithmetic over multiple fields.
 */

export function fmtBytes(byteCount: number): string {
  return `${byteCount} B`;
}

export function fmtShare(share: number): string {
  return `${(share * 100).toFixed(1)}%`;
}

export function fmtClock(ms: number): string {
  return new Date(ms).toLocaleTimeString();
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

const PALETTE = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

export function bandColor(index: number): string {
  return PALETTE[index % PALETTE.length];
}
