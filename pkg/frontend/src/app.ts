/**
 * Single-page wiring: session controls, scene canvas, action builder,
 * event toasts, export download, and rollout streaming. All state
 * changes originate from server snapshots.
 */

import { ApiError, Client, type Snapshot } from "./api.js";
import { ActionBuilder, type Selection } from "./grammar.js";
import { drawScene } from "./render.js";
import { RolloutStream } from "./rollout.js";
import { DEFAULT_TOGGLES, layoutScene, type OverlayToggles } from "./scene.js";

const client = new Client(window.location.origin);
let snapshot: Snapshot | null = null;
let selection: Selection = { interaction: null, o1: null, o2: null };
let toggles: OverlayToggles = { ...DEFAULT_TOGGLES };
let stream: RolloutStream | null = null;

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

function toast(text: string, kind: "ok" | "bad" | "info"): void {
  const el = document.createElement("div");
  el.className = `toast ${kind}`;
  el.textContent = text;
  $("toasts").appendChild(el);
  setTimeout(() => el.remove(), 4000);
}

function logLine(text: string): void {
  const el = document.createElement("div");
  el.textContent = text;
  $("action-log").appendChild(el);
  $("action-log").scrollTop = $("action-log").scrollHeight;
}

function refresh(snap: Snapshot): void {
  snapshot = snap;
  const canvas = $("scene") as unknown as HTMLCanvasElement;
  drawScene(canvas, layoutScene(snap, toggles));
  $("goal-banner").textContent = snap.goal_satisfied
    ? `goal reached: ${snap.goal.text}`
    : `goal: ${snap.goal.text}`;
  $("goal-banner").className = snap.goal_satisfied ? "goal done" : "goal";
  $("step-count").textContent = `steps: ${snap.step_count}`;
  ($("export-btn") as HTMLButtonElement).disabled = !snap.goal_satisfied;
  rebuildPickers();
}

function fillSelect(el: HTMLSelectElement, options: string[], value: string | null): void {
  el.innerHTML = "";
  const blank = document.createElement("option");
  blank.value = "";
  blank.textContent = "--";
  el.appendChild(blank);
  for (const o of options) {
    const opt = document.createElement("option");
    opt.value = o;
    opt.textContent = o;
    el.appendChild(opt);
  }
  el.value = value && options.includes(value) ? value : "";
}

function rebuildPickers(): void {
  if (!snapshot) return;
  const builder = new ActionBuilder(snapshot);
  const interEl = $("pick-interaction") as HTMLSelectElement;
  const o1El = $("pick-o1") as HTMLSelectElement;
  const o2El = $("pick-o2") as HTMLSelectElement;
  fillSelect(interEl, builder.interactions(), selection.interaction);
  selection.interaction = interEl.value || null;
  const o1s = selection.interaction ? builder.o1Options(selection.interaction) : [];
  fillSelect(o1El, o1s, selection.o1);
  selection.o1 = o1El.value || null;
  const showO2 =
    selection.interaction !== null && builder.needsO2(selection.interaction);
  $("o2-wrap").style.display = showO2 ? "" : "none";
  const o2s =
    showO2 && selection.interaction && selection.o1
      ? builder.o2Options(selection.interaction, selection.o1)
      : [];
  fillSelect(o2El, o2s, selection.o2);
  selection.o2 = o2El.value || null;
  ($("submit-btn") as HTMLButtonElement).disabled = !builder.canSubmit(selection);
}

async function createSession(): Promise<void> {
  const goal = ($("pick-goal") as HTMLSelectElement).value;
  const seed = Number(($("pick-seed") as HTMLInputElement).value || "0");
  try {
    const snap = await client.createSession({ goal, scene_seed: seed });
    $("action-log").innerHTML = "";
    selection = { interaction: null, o1: null, o2: null };
    refresh(snap);
    toast(`session ${snap.session_id}`, "info");
  } catch (e) {
    toast(String(e), "bad");
  }
}

async function submit(): Promise<void> {
  if (!snapshot) return;
  const builder = new ActionBuilder(snapshot);
  try {
    const action = builder.buildAction(selection);
    const resp = await client.step(snapshot.session_id, action);
    const sig = `${action.interaction}(${action.o1}${action.o2 ? ", " + action.o2 : ""})`;
    if (resp.event.outcome === "rejected") {
      toast(`${sig} rejected: ${resp.event.violation}`, "bad");
    } else {
      toast(`${sig} ${resp.event.outcome}`, "ok");
    }
    logLine(`${sig} -> ${resp.event.outcome}`);
    refresh(resp.snapshot);
  } catch (e) {
    // network failures leave local state untouched; retry is manual
    toast(String(e), "bad");
  }
}

async function exportDemo(): Promise<void> {
  if (!snapshot) return;
  try {
    const resp = await client.exportDemo(snapshot.session_id);
    const blob = new Blob([JSON.stringify(resp.demo)], {
      type: "application/json",
    });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = `${snapshot.goal_name}-${snapshot.session_id}.json`;
    a.click();
    toast("demo exported", "ok");
  } catch (e) {
    toast(e instanceof ApiError ? `export: ${e.detail}` : String(e), "bad");
  }
}

function watchRollout(): void {
  if (!snapshot) return;
  const checkpoint = ($("pick-ckpt") as HTMLInputElement).value;
  if (!checkpoint) {
    toast("enter a checkpoint path", "bad");
    return;
  }
  stream?.cancel();
  stream = new RolloutStream(
    client.rolloutUrl(snapshot.session_id, checkpoint),
    {
      onStep: (step) => {
        const sig = `${step.action.interaction}(${step.action.o1}${step.action.o2 ? ", " + step.action.o2 : ""})`;
        logLine(`policy: ${sig} -> ${step.outcome}`);
        refresh(step.snapshot);
      },
      onDone: (success, steps) => {
        toast(success ? `success in ${steps} steps` : `stopped after ${steps} steps`, success ? "ok" : "bad");
        stream = null;
      },
      onError: (message) => {
        logLine(`rollout error: ${message}`);
        stream = null;
      },
    },
  );
}

async function init(): Promise<void> {
  const catalog = await client.catalog();
  fillSelect($("pick-goal") as HTMLSelectElement, catalog.goals, catalog.goals[0] ?? null);
  $("new-session-btn").onclick = () => void createSession();
  $("submit-btn").onclick = () => void submit();
  $("export-btn").onclick = () => void exportDemo();
  $("rollout-btn").onclick = () => watchRollout();
  $("cancel-btn").onclick = () => stream?.cancel();
  for (const kind of ["OnTop", "Near", "ConnectedTo"] as const) {
    const box = $(`toggle-${kind}`) as HTMLInputElement;
    box.checked = toggles[kind];
    box.onchange = () => {
      toggles[kind] = box.checked;
      if (snapshot) refresh(snapshot);
    };
  }
  for (const id of ["pick-interaction", "pick-o1", "pick-o2"]) {
    $(id).onchange = () => {
      const sel = $(id) as HTMLSelectElement;
      if (id === "pick-interaction") selection.interaction = sel.value || null;
      if (id === "pick-o1") selection.o1 = sel.value || null;
      if (id === "pick-o2") selection.o2 = sel.value || null;
      rebuildPickers();
    };
  }
}

void init();
