/** Canvas drawing for a SceneModel. Pure view; no simulation logic. */

import type { Glyph, SceneModel } from "./scene.js";

const ROOM_METERS = 6; // fits the micro-home scenes with margin
const CLASS_COLORS: Record<string, string> = {
  fridge: "#7fb3d5",
  shelf: "#c39bd3",
  tray: "#f7dc6f",
  box: "#e59866",
  basket: "#d7bde2",
  stool: "#aab7b8",
  stick: "#a04000",
  milk: "#fdfefe",
  apple: "#e74c3c",
  banana: "#f4d03f",
  cereal: "#935116",
  toy: "#58d68d",
  light: "#f8f9f9",
  floor: "#f2f3f4",
  wall: "#909497",
};

export function drawScene(canvas: HTMLCanvasElement, model: SceneModel): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const s = canvas.width / ROOM_METERS;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  const drawGlyph = (g: Glyph) => {
    if (g.cls === "floor") return;
    ctx.fillStyle = CLASS_COLORS[g.cls] ?? "#d5dbdb";
    ctx.strokeStyle = "#2c3e50";
    ctx.fillRect(g.x * s, g.y * s, g.w * s, g.h * s);
    ctx.strokeRect(g.x * s, g.y * s, g.w * s, g.h * s);
    ctx.fillStyle = "#17202a";
    ctx.font = `${Math.max(10, 0.14 * s)}px sans-serif`;
    ctx.fillText(g.id, g.x * s + 2, g.y * s + 12, g.w * s - 4);
    g.badges.forEach((b, i) => {
      ctx.fillStyle = "#117a65";
      ctx.fillText(b, g.x * s + 2, g.y * s + 24 + 11 * i, g.w * s - 4);
    });
    g.nested.forEach(drawGlyph);
  };
  model.glyphs.forEach(drawGlyph);

  for (const line of model.overlays) {
    ctx.strokeStyle = line.kind === "OnTop" ? "#884ea0" : "#85929e";
    ctx.setLineDash([4, 3]);
    const a = findGlyph(model, line.from);
    const b = findGlyph(model, line.to);
    if (a && b) {
      ctx.beginPath();
      ctx.moveTo((a.x + a.w / 2) * s, (a.y + a.h / 2) * s);
      ctx.lineTo((b.x + b.w / 2) * s, (b.y + b.h / 2) * s);
      ctx.stroke();
    }
    ctx.setLineDash([]);
  }

  // robot marker; double ring when elevated
  ctx.beginPath();
  ctx.arc(model.robot.x * s, model.robot.y * s, 0.18 * s, 0, 2 * Math.PI);
  ctx.fillStyle = "#1a5276";
  ctx.fill();
  if (model.robot.level > 0) {
    ctx.beginPath();
    ctx.arc(model.robot.x * s, model.robot.y * s, 0.26 * s, 0, 2 * Math.PI);
    ctx.strokeStyle = "#1a5276";
    ctx.stroke();
  }
  if (model.robot.holding) {
    ctx.fillStyle = "#17202a";
    ctx.font = `${Math.max(10, 0.14 * s)}px sans-serif`;
    ctx.fillText(`holding ${model.robot.holding}`, model.robot.x * s + 8, model.robot.y * s - 8);
  }
}

function findGlyph(model: SceneModel, id: string): Glyph | null {
  let found: Glyph | null = null;
  const walk = (g: Glyph) => {
    if (g.id === id) found = g;
    g.nested.forEach(walk);
  };
  model.glyphs.forEach(walk);
  return found;
}
