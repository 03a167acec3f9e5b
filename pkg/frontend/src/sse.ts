/**
 * Server-sent-event client over fetch streaming, with sequence-number
 * resume: on reconnect the last seen `id:` is passed as ?since=, so the
 * gateway replays the gap and nothing is lost or duplicated.
 *
 * fetch + ReadableStream (rather than EventSource) keeps this usable in
 * both the browser and node-based contract tests.
 */

export interface StreamEvent {
  id: number;
  type: string;
  data: unknown;
}

export type StreamStatus = "connecting" | "live" | "reconnecting" | "stopped";

/** Pull complete events off the front of an SSE text buffer. */
export function parseSseBuffer(buffer: string): { events: StreamEvent[]; rest: string } {
  const events: StreamEvent[] = [];
  let rest = buffer;
  for (;;) {
    const cut = rest.indexOf("\n\n");
    if (cut < 0) break;
    const block = rest.slice(0, cut);
    rest = rest.slice(cut + 2);
    let id = 0;
    let type = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) continue; // keep-alive comment
      if (line.startsWith("id: ")) id = Number(line.slice(4));
      else if (line.startsWith("event: ")) type = line.slice(7);
      else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
    }
    if (dataLines.length > 0) {
      events.push({ id, type, data: JSON.parse(dataLines.join("\n")) });
    }
  }
  return { events, rest };
}

export class EventStream {
  lastId = 0;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private url: string,
    private onEvent: (event: StreamEvent) => void,
    private onStatus: (status: StreamStatus) => void = () => {},
    private retryMs = 2000,
  ) {}

  start(since = 0): void {
    this.lastId = since;
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    this.onStatus("stopped");
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.onStatus(this.lastId ? "reconnecting" : "connecting");
      try {
        this.controller = new AbortController();
        const response = await fetch(`${this.url}?since=${this.lastId}`, {
          headers: { accept: "text/event-stream" },
          signal: this.controller.signal,
        });
        if (!response.ok || !response.body) throw new Error(`stream ${response.status}`);
        this.onStatus("live");
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer += decoder.decode(value, { stream: true });
          const { events, rest } = parseSseBuffer(buffer);
          buffer = rest;
          for (const event of events) {
            if (event.id > this.lastId) this.lastId = event.id;
            this.onEvent(event);
          }
        }
      } catch {
        // fall through to retry
      }
      if (this.stopped) return;
      this.onStatus("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, this.retryMs));
    }
  }
}
