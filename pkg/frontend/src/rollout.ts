/** Websocket wrapper for streamed policy rollouts. */

import { SnapshotSchema, type Snapshot } from "./api.js";

export interface RolloutStep {
  action: { interaction: string; o1: string; o2?: string | null };
  outcome: string;
  violation: string;
  snapshot: Snapshot;
}

export interface RolloutHandlers {
  onStep: (step: RolloutStep) => void;
  onDone: (success: boolean, steps: number) => void;
  onError: (message: string) => void;
}

export class RolloutStream {
  private socket: WebSocket;
  private closedByUser = false;

  constructor(url: string, handlers: RolloutHandlers) {
    this.socket = new WebSocket(url);
    this.socket.onmessage = (ev) => {
      const msg = JSON.parse(ev.data as string);
      if (msg.error) {
        handlers.onError(String(msg.error));
      } else if (msg.done) {
        handlers.onDone(Boolean(msg.success), Number(msg.steps));
      } else {
        handlers.onStep({
          action: msg.action,
          outcome: msg.outcome,
          violation: msg.violation,
          snapshot: SnapshotSchema.parse(msg.snapshot),
        });
      }
    };
    this.socket.onerror = () => {
      if (!this.closedByUser) handlers.onError("rollout stream error");
    };
  }

  /** Cancel: the server freezes session state at the last applied step. */
  cancel(): void {
    this.closedByUser = true;
    this.socket.close();
  }
}
