/**
 * Typed client for the session service (payload schema "api-v1").
 *
 * Every response is validated with zod before use; a payload carrying a
 * different schema tag raises ApiSchemaError so version drift surfaces
 * as an error banner instead of silent misrendering.
 */

import { z } from "zod";

export const API_SCHEMA = "api-v1";

export const ActionSchema = z.object({
  interaction: z.string(),
  o1: z.string(),
  o2: z.string().nullable().optional(),
});
export type ActionRecord = z.infer<typeof ActionSchema>;

export const ObjectSchema = z.object({
  id: z.string(),
  class: z.string(),
  attributes: z.array(z.string()),
  pose: z.array(z.number()).length(4),
  size: z.array(z.number()).length(3),
});
export type ObjectRecord = z.infer<typeof ObjectSchema>;

export const RelationSchema = z.object({
  kind: z.string(),
  src: z.string(),
  dst: z.string(),
});
export type RelationRecord = z.infer<typeof RelationSchema>;

export const StateSchema = z.object({
  schema: z.string(),
  objects: z.array(ObjectSchema),
  relations: z.array(RelationSchema),
  robot: z.object({
    position: z.array(z.number()).length(2),
    level: z.number(),
    grabbed: z.string().nullable(),
  }),
});
export type StateRecord = z.infer<typeof StateSchema>;

export const GoalSchema = z.object({
  text: z.string(),
  constraints: z.array(
    z.object({
      predicate: z.string(),
      args: z.array(z.string()),
      value: z.boolean(),
    }),
  ),
});

export const SnapshotSchema = z.object({
  schema: z.string(),
  session_id: z.string(),
  scene: z.string(),
  goal_name: z.string(),
  goal: GoalSchema,
  state: StateSchema,
  goal_satisfied: z.boolean(),
  legal_actions: z.array(ActionSchema),
  step_count: z.number(),
  grammar: z.record(z.string(), z.number()),
});
export type Snapshot = z.infer<typeof SnapshotSchema>;

export const StepResponseSchema = z.object({
  schema: z.string(),
  event: z.object({
    action: ActionSchema,
    outcome: z.string(),
    violation: z.string(),
  }),
  snapshot: SnapshotSchema,
  goal_satisfied: z.boolean(),
});
export type StepResponse = z.infer<typeof StepResponseSchema>;

export const CatalogSchema = z.object({
  schema: z.string(),
  scenes: z.array(z.string()),
  goals: z.array(z.string()),
  grammar: z.record(z.string(), z.number()),
});
export type Catalog = z.infer<typeof CatalogSchema>;

export const ExportResponseSchema = z.object({
  schema: z.string(),
  demo: z.record(z.string(), z.unknown()),
  complete: z.boolean(),
});
export type ExportResponse = z.infer<typeof ExportResponseSchema>;

export class ApiSchemaError extends Error {
  constructor(got: string) {
    super(`payload schema ${JSON.stringify(got)}; this client speaks ${API_SCHEMA}`);
  }
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
  }
}

function checkSchema<T extends { schema: string }>(payload: T): T {
  if (payload.schema !== API_SCHEMA) throw new ApiSchemaError(payload.schema);
  return payload;
}

export class Client {
  constructor(private baseUrl: string) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const resp = await fetch(this.baseUrl + path, init);
    const body = await resp.json();
    if (!resp.ok) throw new ApiError(resp.status, body.detail ?? body);
    return body;
  }

  private post(path: string, payload: unknown): Promise<unknown> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async catalog(): Promise<Catalog> {
    return checkSchema(CatalogSchema.parse(await this.request("/catalog")));
  }

  async createSession(req: {
    goal: string;
    scene?: string;
    scene_seed?: number;
    teacher?: string;
    stochastic?: boolean;
  }): Promise<Snapshot> {
    return checkSchema(SnapshotSchema.parse(await this.post("/sessions", req)));
  }

  async state(sessionId: string): Promise<Snapshot> {
    return checkSchema(
      SnapshotSchema.parse(await this.request(`/sessions/${sessionId}/state`)),
    );
  }

  async step(sessionId: string, action: ActionRecord): Promise<StepResponse> {
    return checkSchema(
      StepResponseSchema.parse(
        await this.post(`/sessions/${sessionId}/step`, { action }),
      ),
    );
  }

  async exportDemo(
    sessionId: string,
    allowPartial = false,
  ): Promise<ExportResponse> {
    return checkSchema(
      ExportResponseSchema.parse(
        await this.post(`/sessions/${sessionId}/export`, {
          allow_partial: allowPartial,
        }),
      ),
    );
  }

  rolloutUrl(sessionId: string, checkpoint: string): string {
    const ws = this.baseUrl.replace(/^http/, "ws");
    return `${ws}/sessions/${sessionId}/rollout?checkpoint=${encodeURIComponent(checkpoint)}`;
  }
}
