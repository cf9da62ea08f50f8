import { ApiClient } from "./api";
import { ReportController } from "./controller";
import { ReportViewState, badgeFor, finalizeEnabled } from "./state";
import { DetectionDto, RegionDto, ScanDto } from "./types";

// Page wiring.  All review state lives in the controller; this file only
// renders it and forwards DOM events.

const api = new ApiClient("");
let zoom = 6;
let drawMode: "lesion" | "explain" | null = null;
let dragStart: { x: number; y: number } | null = null;
let dragRect: RegionDto | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

async function pickScan(): Promise<string | null> {
  const fromQuery = new URLSearchParams(window.location.search).get("scan");
  if (fromQuery) return fromQuery;
  const resp = await fetch("/scans");
  const body = (await resp.json()) as { scans: ScanDto[] };
  if (!body.scans.length) return null;
  return body.scans[body.scans.length - 1].scan_id;
}

function renderBox(
  controller: ReportController,
  state: ReportViewState,
  det: DetectionDto,
): HTMLElement {
  const box = el("div", `box ${badgeFor(det.status)}`);
  box.style.left = `${det.region.x * zoom}px`;
  box.style.top = `${det.region.y * zoom}px`;
  box.style.width = `${det.region.w * zoom}px`;
  box.style.height = `${det.region.h * zoom}px`;

  const controls = el("div", "box-controls");
  const busy = state.inflight.has(det.id) || (state.scan?.finalized ?? false);
  const confirm = el("button", "confirm", "✓");
  confirm.title = "confirm lesion";
  confirm.disabled = busy;
  confirm.onclick = () => void controller.act(det.id, "confirm");
  const reject = el("button", "reject", "✗");
  reject.title = "reject detection";
  reject.disabled = busy;
  reject.onclick = () => void controller.act(det.id, "reject");
  const explain = el("button", "explain", "i");
  explain.title = "show explanation";
  explain.onclick = () => void controller.explain({ detectionId: det.id });
  controls.append(confirm, reject, explain);
  box.appendChild(controls);

  const badge = el("span", `badge ${badgeFor(det.status)}`, det.status);
  box.appendChild(badge);
  return box;
}

function renderOverlayCanvas(state: ReportViewState): HTMLElement | null {
  const overlay = state.overlay;
  if (!overlay) return null;
  const canvas = el("canvas", "heat-overlay");
  canvas.width = overlay.image.width * zoom;
  canvas.height = overlay.image.height * zoom;
  canvas.style.left = `${overlay.region.x * zoom}px`;
  canvas.style.top = `${overlay.region.y * zoom}px`;
  const source = document.createElement("canvas");
  source.width = overlay.image.width;
  source.height = overlay.image.height;
  const sctx = source.getContext("2d");
  const ctx = canvas.getContext("2d");
  if (sctx && ctx) {
    sctx.putImageData(
      new ImageData(overlay.image.data, overlay.image.width, overlay.image.height),
      0,
      0,
    );
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(source, 0, 0, canvas.width, canvas.height);
  }
  return canvas;
}

function renderLegend(controller: ReportController, state: ReportViewState): HTMLElement {
  const panel = el("div", "legend");
  const overlay = state.overlay;
  if (!overlay) {
    panel.appendChild(el("p", "hint",
      "Click a detection's “i” button or draw a region to see an explanation."));
    return panel;
  }
  panel.appendChild(el("h3", undefined, `Explanation ${overlay.explanationId}`));
  panel.appendChild(el("p", undefined,
    `score ${overlay.prediction.toFixed(4)}, baseline φ₀ ${overlay.phi0.toFixed(4)}`));
  panel.appendChild(el("p", undefined,
    `color scale: ±${overlay.scale.toExponential(2)} (red = supports detection, blue = detracts)`));
  if (overlay.note) panel.appendChild(el("p", "note", overlay.note));
  const list = el("ul");
  overlay.topPatches.forEach((p) => {
    list.appendChild(el("li", undefined, `patch ${p.feature}: φ = ${p.phi.toExponential(3)}`));
  });
  panel.appendChild(el("h4", undefined, "Top patches"));
  panel.appendChild(list);
  const clear = el("button", undefined, "Hide overlay");
  clear.onclick = () => controller.clearOverlay();
  panel.appendChild(clear);
  return panel;
}

function wrapperRegion(event: MouseEvent, wrapper: HTMLElement): { x: number; y: number } {
  const rect = wrapper.getBoundingClientRect();
  return {
    x: Math.max(0, Math.floor((event.clientX - rect.left) / zoom)),
    y: Math.max(0, Math.floor((event.clientY - rect.top) / zoom)),
  };
}

function render(controller: ReportController, root: HTMLElement): void {
  const state = controller.state;
  root.replaceChildren();

  const header = el("div", "header");
  header.appendChild(el("h2", undefined,
    state.scan ? `Scan ${state.scan.scan_id} (${state.scan.patient_label || "unlabeled"})`
               : "Loading scan…"));
  if (state.error) {
    const banner = el("div", "error-banner", `Service error — ${state.error}`);
    const retry = el("button", undefined, "Retry");
    retry.onclick = () => void controller.load();
    banner.appendChild(retry);
    header.appendChild(banner);
  }
  root.appendChild(header);

  if (!state.scan) return;
  const scan = state.scan;

  const toolbar = el("div", "toolbar");
  const drawLesion = el("button", drawMode === "lesion" ? "active" : undefined,
    "Draw new lesion");
  drawLesion.onclick = () => {
    drawMode = drawMode === "lesion" ? null : "lesion";
    render(controller, root);
  };
  const drawExplain = el("button", drawMode === "explain" ? "active" : undefined,
    "Draw region to explain");
  drawExplain.onclick = () => {
    drawMode = drawMode === "explain" ? null : "explain";
    render(controller, root);
  };
  const finalize = el("button", "finalize",
    scan.finalized ? "Finalized" : "Finalize review");
  finalize.disabled = !finalizeEnabled(state);
  finalize.onclick = () => void controller.finalize();
  toolbar.append(drawLesion, drawExplain, finalize);
  toolbar.appendChild(el("span", "counts",
    `${scan.detections.filter((d) => d.status === "confirmed").length} confirmed / ` +
    `${scan.detections.filter((d) => d.status === "rejected").length} rejected / ` +
    `${scan.detections.filter((d) => d.status === "pending").length} pending`));
  root.appendChild(toolbar);

  const stage = el("div", "stage");
  const wrapper = el("div", "image-wrapper");
  const img = el("img");
  img.src = api.imageUrl(scan.scan_id);
  img.onload = () => {
    const fitted = Math.max(1, Math.floor(640 / Math.max(img.naturalWidth, 1)));
    if (fitted !== zoom) {
      zoom = fitted;
      render(controller, root);
    }
  };
  img.style.width = "100%";
  wrapper.appendChild(img);

  scan.detections.forEach((det) => wrapper.appendChild(renderBox(controller, state, det)));
  const overlayCanvas = renderOverlayCanvas(state);
  if (overlayCanvas) wrapper.appendChild(overlayCanvas);

  if (dragRect) {
    const marquee = el("div", "marquee");
    marquee.style.left = `${dragRect.x * zoom}px`;
    marquee.style.top = `${dragRect.y * zoom}px`;
    marquee.style.width = `${dragRect.w * zoom}px`;
    marquee.style.height = `${dragRect.h * zoom}px`;
    wrapper.appendChild(marquee);
  }

  if (drawMode) wrapper.classList.add("drawing");
  wrapper.onmousedown = (event) => {
    if (!drawMode) return;
    dragStart = wrapperRegion(event, wrapper);
    event.preventDefault();
  };
  wrapper.onmousemove = (event) => {
    if (!drawMode || !dragStart) return;
    const now = wrapperRegion(event, wrapper);
    dragRect = {
      x: Math.min(dragStart.x, now.x),
      y: Math.min(dragStart.y, now.y),
      w: Math.abs(now.x - dragStart.x) + 1,
      h: Math.abs(now.y - dragStart.y) + 1,
    };
    render(controller, root);
  };
  wrapper.onmouseup = () => {
    if (!drawMode || !dragRect) {
      dragStart = null;
      return;
    }
    const region = dragRect;
    const mode = drawMode;
    dragStart = null;
    dragRect = null;
    drawMode = null;
    if (mode === "lesion") {
      void controller.addRegion(region);
    } else {
      void controller.explain({ region });
    }
  };
  stage.appendChild(wrapper);
  stage.appendChild(renderLegend(controller, state));
  root.appendChild(stage);

  if (!scan.detections.length) {
    root.appendChild(el("p", "empty-state",
      "No detections on this scan. Draw a region to add a lesion or request an explanation."));
  }
}

async function start(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const scanId = await pickScan();
  if (!scanId) {
    root.appendChild(el("p", "empty-state",
      "No scans available. Upload one through POST /scans and reload."));
    return;
  }
  const controller = new ReportController(api, scanId, () => render(controller, root));
  await controller.load();
}

void start();
