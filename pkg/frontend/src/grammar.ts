/**
 * Action builder model: which selections are currently legal.
 *
 * The builder is derived purely from the snapshot's legal_actions list,
 * so it can express exactly the set of server-applicable actions for
 * the current state: an interaction appears only if some legal action
 * uses it, the o1 list is conditioned on the interaction, the o2 list
 * on both, and o2 is hidden entirely for arity-1 interactions.
 */

import type { ActionRecord, Snapshot } from "./api.js";

export interface Selection {
  interaction: string | null;
  o1: string | null;
  o2: string | null;
}

export const EMPTY_SELECTION: Selection = { interaction: null, o1: null, o2: null };

export class ActionBuilder {
  constructor(private snapshot: Snapshot) {}

  private legal(): ActionRecord[] {
    return this.snapshot.legal_actions;
  }

  arity(interaction: string): number {
    const a = this.snapshot.grammar[interaction];
    if (a === undefined) throw new Error(`unknown interaction ${interaction}`);
    return a;
  }

  interactions(): string[] {
    return [...new Set(this.legal().map((a) => a.interaction))].sort();
  }

  o1Options(interaction: string): string[] {
    return [
      ...new Set(
        this.legal()
          .filter((a) => a.interaction === interaction)
          .map((a) => a.o1),
      ),
    ].sort();
  }

  o2Options(interaction: string, o1: string): string[] {
    if (this.arity(interaction) === 1) return [];
    return [
      ...new Set(
        this.legal()
          .filter((a) => a.interaction === interaction && a.o1 === o1)
          .map((a) => a.o2)
          .filter((o): o is string => o != null),
      ),
    ].sort();
  }

  needsO2(interaction: string): boolean {
    return this.arity(interaction) === 2;
  }

  canSubmit(sel: Selection): boolean {
    if (sel.interaction === null || sel.o1 === null) return false;
    const wantO2 = this.needsO2(sel.interaction) ? sel.o2 : null;
    if (this.needsO2(sel.interaction) && wantO2 === null) return false;
    return this.legal().some(
      (a) =>
        a.interaction === sel.interaction &&
        a.o1 === sel.o1 &&
        (a.o2 ?? null) === wantO2,
    );
  }

  buildAction(sel: Selection): ActionRecord {
    if (!this.canSubmit(sel)) {
      throw new Error(`selection is not a legal action: ${JSON.stringify(sel)}`);
    }
    return {
      interaction: sel.interaction!,
      o1: sel.o1!,
      o2: this.needsO2(sel.interaction!) ? sel.o2 : null,
    };
  }

  /** All submittable actions; equals legal_actions as a set. */
  expressible(): ActionRecord[] {
    const out: ActionRecord[] = [];
    for (const interaction of this.interactions()) {
      for (const o1 of this.o1Options(interaction)) {
        if (this.needsO2(interaction)) {
          for (const o2 of this.o2Options(interaction, o1)) {
            out.push({ interaction, o1, o2 });
          }
        } else {
          out.push({ interaction, o1, o2: null });
        }
      }
    }
    return out;
  }
}
