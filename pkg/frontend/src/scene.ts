/**
 * Scene layout model: a pure function from snapshot to drawable glyphs.
 *
 * Top-down schematic view. Objects Inside a container are nested within
 * the container glyph instead of drawn at their own pose; attribute
 * badges (open/on/dirty/grabbed) ride on the glyph. Rendering to canvas
 * lives in render.ts; everything here is testable without a DOM.
 */

import type { Snapshot, StateRecord } from "./api.js";

export const BADGE_ATTRIBUTES = ["open", "on", "dirty", "grabbed"] as const;

export interface Glyph {
  id: string;
  cls: string;
  x: number; // top-left, world meters
  y: number;
  w: number;
  h: number;
  badges: string[];
  insideOf: string | null;
  nested: Glyph[];
}

export interface RelationLine {
  kind: string;
  from: string;
  to: string;
}

export interface SceneModel {
  glyphs: Glyph[]; // top-level only; contained objects are nested
  overlays: RelationLine[]; // filtered by the active toggles
  robot: { x: number; y: number; level: number; holding: string | null };
  goalText: string;
  goalSatisfied: boolean;
}

export interface OverlayToggles {
  OnTop: boolean;
  Near: boolean;
  ConnectedTo: boolean;
}

/** Inside is always rendered as nesting; the rest default off. */
export const DEFAULT_TOGGLES: OverlayToggles = {
  OnTop: false,
  Near: false,
  ConnectedTo: false,
};

function glyphOf(o: StateRecord["objects"][number], grabbed: string | null): Glyph {
  const [x, y] = [o.pose[0]!, o.pose[1]!];
  const [w, h] = [o.size[0]!, o.size[1]!];
  const badges = o.attributes.filter((a) =>
    (BADGE_ATTRIBUTES as readonly string[]).includes(a),
  );
  if (o.id === grabbed && !badges.includes("grabbed")) badges.push("grabbed");
  return {
    id: o.id,
    cls: o.class,
    x: x - w / 2,
    y: y - h / 2,
    w,
    h,
    badges,
    insideOf: null,
    nested: [],
  };
}

export function layoutScene(
  snapshot: Snapshot,
  toggles: OverlayToggles = DEFAULT_TOGGLES,
): SceneModel {
  const state = snapshot.state;
  const byId = new Map<string, Glyph>();
  for (const o of state.objects) {
    if (byId.has(o.id)) throw new Error(`duplicate object id ${o.id}`);
    byId.set(o.id, glyphOf(o, state.robot.grabbed));
  }
  const container = new Map<string, string>();
  for (const r of state.relations) {
    if (r.kind === "Inside") container.set(r.src, r.dst);
  }
  // nest contained glyphs, laid out in reading order inside the parent
  const top: Glyph[] = [];
  for (const g of byId.values()) {
    const parentId = container.get(g.id);
    if (parentId !== undefined && byId.has(parentId)) {
      g.insideOf = parentId;
      byId.get(parentId)!.nested.push(g);
    } else {
      top.push(g);
    }
  }
  for (const g of byId.values()) {
    g.nested.sort((a, b) => a.id.localeCompare(b.id));
    g.nested.forEach((n, i) => {
      n.x = g.x + 0.1 * g.w + (i % 2) * 0.45 * g.w;
      n.y = g.y + 0.1 * g.h + Math.floor(i / 2) * 0.45 * g.h;
      n.w = Math.min(n.w, 0.35 * g.w);
      n.h = Math.min(n.h, 0.35 * g.h);
    });
  }
  const overlays = state.relations
    .filter((r) => r.kind !== "Inside")
    .filter((r) => toggles[r.kind as keyof OverlayToggles] === true)
    .map((r) => ({ kind: r.kind, from: r.src, to: r.dst }));
  return {
    glyphs: top.sort((a, b) => a.id.localeCompare(b.id)),
    overlays,
    robot: {
      x: state.robot.position[0]!,
      y: state.robot.position[1]!,
      level: state.robot.level,
      holding: state.robot.grabbed,
    },
    goalText: snapshot.goal.text,
    goalSatisfied: snapshot.goal_satisfied,
  };
}

/** Every object id, nested or not, exactly once. */
export function allIds(model: SceneModel): string[] {
  const out: string[] = [];
  const walk = (g: Glyph) => {
    out.push(g.id);
    g.nested.forEach(walk);
  };
  model.glyphs.forEach(walk);
  return out.sort();
}
