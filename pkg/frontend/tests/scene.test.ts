import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { SnapshotSchema, type Snapshot } from "../src/api.js";
import { allIds, layoutScene, DEFAULT_TOGGLES } from "../src/scene.js";

const fixture = (name: string): Snapshot =>
  SnapshotSchema.parse(
    JSON.parse(readFileSync(join(__dirname, "fixtures", name), "utf-8")),
  );

const snapshot = fixture("snapshot.json");
const holding = fixture("holding_snapshot.json");

describe("layoutScene", () => {
  it("renders every object exactly once", () => {
    const model = layoutScene(snapshot);
    const ids = allIds(model);
    const expected = snapshot.state.objects.map((o) => o.id).sort();
    expect(ids).toEqual(expected);
    expect(new Set(ids).size).toBe(ids.length);
  });

  it("nests Inside objects within their container glyph", () => {
    const model = layoutScene(snapshot);
    const insidePairs = snapshot.state.relations.filter(
      (r) => r.kind === "Inside",
    );
    for (const rel of insidePairs) {
      const container = model.glyphs.find((g) => g.id === rel.dst);
      expect(container, rel.dst).toBeDefined();
      const nestedIds = container!.nested.map((n) => n.id);
      expect(nestedIds).toContain(rel.src);
      const child = container!.nested.find((n) => n.id === rel.src)!;
      expect(child.x).toBeGreaterThanOrEqual(container!.x);
      expect(child.x + child.w).toBeLessThanOrEqual(
        container!.x + container!.w + 1e-9,
      );
    }
  });

  it("keeps only nesting by default: no overlay lines", () => {
    expect(layoutScene(snapshot, DEFAULT_TOGGLES).overlays).toEqual([]);
  });

  it("emits overlay lines when a relation toggle is on", () => {
    const model = layoutScene(snapshot, {
      OnTop: true,
      Near: true,
      ConnectedTo: true,
    });
    const nonInside = snapshot.state.relations.filter(
      (r) => r.kind !== "Inside",
    );
    expect(model.overlays.length).toBe(nonInside.length);
    expect(model.overlays.every((l) => l.kind !== "Inside")).toBe(true);
  });

  it("marks the held object with a grabbed badge", () => {
    expect(holding.state.robot.grabbed).toBe("milk_0");
    const model = layoutScene(holding);
    const milk = allIds(model).includes("milk_0");
    expect(milk).toBe(true);
    const find = (id: string) => {
      for (const g of model.glyphs) {
        if (g.id === id) return g;
        const n = g.nested.find((x) => x.id === id);
        if (n) return n;
      }
      return null;
    };
    expect(find("milk_0")!.badges).toContain("grabbed");
    expect(model.robot.holding).toBe("milk_0");
  });

  it("reflects goal state and text from the snapshot only", () => {
    const model = layoutScene(snapshot);
    expect(model.goalText).toBe(snapshot.goal.text);
    expect(model.goalSatisfied).toBe(false);
  });

  it("rejects duplicate object ids", () => {
    const bad = structuredClone(snapshot);
    bad.state.objects.push(bad.state.objects[0]!);
    expect(() => layoutScene(bad)).toThrow(/duplicate/);
  });
});
