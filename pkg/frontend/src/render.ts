/**
 * HTML rendering of a ViewModel. String-based so it runs identically in the
 * browser (assign to innerHTML) and under test without a DOM.
 */

import { PolicyBar, TileView, ViewModel } from "./viewmodel.js";

const TILE_GLYPH: Record<TileView["kind"], string> = {
  empty: "·",
  wall: "#",
  object: "o",
  agent: "A",
  opponent: "B",
};

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderGrid(vm: ViewModel): string {
  const rows: string[] = [];
  for (let y = 0; y < vm.gridSize; y += 1) {
    const cells: string[] = [];
    for (let x = 0; x < vm.gridSize; x += 1) {
      const tile = vm.tiles[y * vm.gridSize + x]!;
      const glyph =
        tile.kind === "object"
          ? (tile.objectKind?.charAt(0) ?? "o")
          : TILE_GLYPH[tile.kind];
      cells.push(
        `<td class="tile tile-${tile.kind}" data-x="${x}" data-y="${y}">` +
          `${escapeHtml(glyph)}</td>`,
      );
    }
    rows.push(`<tr>${cells.join("")}</tr>`);
  }
  return `<table class="grid">${rows.join("")}</table>`;
}

function renderBar(bar: PolicyBar): string {
  const classes = ["policy"];
  if (bar.isKStar) classes.push("k-star");
  if (!bar.active) classes.push("inactive");
  const segments = bar.probs
    .map(
      (p, a) =>
        `<span class="prob" data-action="${a}" style="width:${(p * 100).toFixed(2)}%">` +
        `${p.toFixed(4)}</span>`,
    )
    .join("");
  const entropy =
    bar.entropy === null
      ? ""
      : `<span class="entropy">H=${bar.entropy.toFixed(3)}</span>`;
  return (
    `<div class="${classes.join(" ")}" data-policy="${escapeHtml(bar.label)}">` +
    `<span class="label">${escapeHtml(bar.label)}</span>${entropy}` +
    `<div class="bars">${segments}</div></div>`
  );
}

function renderControls(vm: ViewModel): string {
  const methods = ["MP", "PP", "ET", "EW"]
    .map(
      (m) =>
        `<option value="${m}"${m === vm.controls.method ? " selected" : ""}>${m}</option>`,
    )
    .join("");
  const toggles = vm.controls.active
    .map(
      (on, k) =>
        `<label><input type="checkbox" data-sub="${k}"${on ? " checked" : ""}>` +
        `sub-${k}</label>`,
    )
    .join("");
  return (
    `<div class="controls">` +
    `<select class="method">${methods}</select>` +
    `<input class="epsilon" type="number" step="0.01" value="${vm.controls.epsilon}">` +
    `<span class="subs">${toggles}</span>` +
    `<button class="run">run</button><button class="pause">pause</button>` +
    `<button class="reset">reset</button>` +
    `</div>`
  );
}

/** Render the complete playground view for one snapshot's view model. */
export function renderHtml(vm: ViewModel): string {
  const status =
    `<div class="status">session ${escapeHtml(vm.session)} ` +
    `step ${vm.step}${vm.done ? " (done)" : ""}` +
    (vm.lastAction === null ? "" : ` action=${vm.lastAction}`) +
    `</div>`;
  const policies = [...vm.policies, vm.fused].map(renderBar).join("");
  return (
    `<div class="playground">${status}${renderGrid(vm)}` +
    `<div class="policies">${policies}</div>${renderControls(vm)}</div>`
  );
}
