import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { SnapshotSchema, type ActionRecord } from "../src/api.js";
import { ActionBuilder, EMPTY_SELECTION } from "../src/grammar.js";

const fixture = (name: string) =>
  JSON.parse(readFileSync(join(__dirname, "fixtures", name), "utf-8"));

const snapshot = SnapshotSchema.parse(fixture("snapshot.json"));
const holding = SnapshotSchema.parse(fixture("holding_snapshot.json"));

const key = (a: ActionRecord) => `${a.interaction}|${a.o1}|${a.o2 ?? ""}`;

describe("ActionBuilder", () => {
  it("offers exactly the interactions present in legal_actions", () => {
    const builder = new ActionBuilder(snapshot);
    const expected = [...new Set(snapshot.legal_actions.map((a) => a.interaction))].sort();
    expect(builder.interactions()).toEqual(expected);
  });

  it("hides o2 for arity-1 interactions", () => {
    const builder = new ActionBuilder(snapshot);
    expect(builder.needsO2("MoveTo")).toBe(false);
    expect(builder.o2Options("MoveTo", "milk_0")).toEqual([]);
  });

  it("conditions o2 options on interaction and o1", () => {
    const builder = new ActionBuilder(holding);
    for (const o2 of builder.o2Options("Drop", "milk_0")) {
      expect(
        holding.legal_actions.some(
          (a) => a.interaction === "Drop" && a.o1 === "milk_0" && a.o2 === o2,
        ),
      ).toBe(true);
    }
  });

  it("expresses exactly the legal action set, no more, no fewer", () => {
    for (const snap of [snapshot, holding]) {
      const builder = new ActionBuilder(snap);
      const expressed = new Set(builder.expressible().map(key));
      const legal = new Set(snap.legal_actions.map(key));
      expect(expressed).toEqual(legal);
    }
  });

  it("rejects incomplete or illegal selections", () => {
    const builder = new ActionBuilder(snapshot);
    expect(builder.canSubmit(EMPTY_SELECTION)).toBe(false);
    expect(
      builder.canSubmit({ interaction: "Drop", o1: "milk_0", o2: null }),
    ).toBe(false);
    expect(
      builder.canSubmit({ interaction: "Pick", o1: "fridge_0", o2: null }),
    ).toBe(false);
    expect(() =>
      builder.buildAction({ interaction: "Pick", o1: "fridge_0", o2: null }),
    ).toThrow(/not a legal action/);
  });

  it("builds a submittable record for a legal selection", () => {
    const builder = new ActionBuilder(snapshot);
    const first = snapshot.legal_actions[0]!;
    const action = builder.buildAction({
      interaction: first.interaction,
      o1: first.o1,
      o2: first.o2 ?? null,
    });
    expect(key(action)).toBe(key(first));
  });

  it("errors on interactions missing from the grammar table", () => {
    const builder = new ActionBuilder(snapshot);
    expect(() => builder.arity("Teleport")).toThrow(/unknown interaction/);
  });
});
