import { DetectionDto, DetectionStatus, ScanDto } from "./types";
import { OverlayImage } from "./overlay";

// View state for one scan's report.  The server is the source of truth:
// every mutation here mirrors a service response, never an optimistic guess.

export interface OverlayState {
  explanationId: string;
  image: OverlayImage;
  region: { x: number; y: number; w: number; h: number };
  phi0: number;
  prediction: number;
  scale: number;
  topPatches: { feature: number; phi: number }[];
  note: string | null;
}

export interface ReportViewState {
  scan: ScanDto | null;
  selectedDetection: string | null;
  overlay: OverlayState | null;
  inflight: ReadonlySet<string>;
  error: string | null;
}

export function initialState(): ReportViewState {
  return { scan: null, selectedDetection: null, overlay: null, inflight: new Set(), error: null };
}

export function applyScan(state: ReportViewState, scan: ScanDto): ReportViewState {
  const ids = new Set(scan.detections.map((d) => d.id));
  return {
    ...state,
    scan,
    selectedDetection:
      state.selectedDetection && ids.has(state.selectedDetection)
        ? state.selectedDetection
        : null,
    error: null,
  };
}

export function applyDetectionUpdate(
  state: ReportViewState,
  detection: DetectionDto,
): ReportViewState {
  if (!state.scan) return state;
  const detections = state.scan.detections.map((d) =>
    d.id === detection.id ? detection : d,
  );
  const pending = detections.filter((d) => d.status === "pending").length;
  return { ...state, scan: { ...state.scan, detections, pending } };
}

export function applyError(state: ReportViewState, message: string): ReportViewState {
  return { ...state, error: message };
}

export function selectDetection(
  state: ReportViewState,
  detectionId: string | null,
): ReportViewState {
  return { ...state, selectedDetection: detectionId };
}

export function setOverlay(
  state: ReportViewState,
  overlay: OverlayState | null,
): ReportViewState {
  return { ...state, overlay };
}

// Double-click protection: an action may start only while none is in
// flight for the same detection.
export function canAct(state: ReportViewState, detectionId: string): boolean {
  return !state.inflight.has(detectionId);
}

export function beginAction(state: ReportViewState, detectionId: string): ReportViewState {
  const inflight = new Set(state.inflight);
  inflight.add(detectionId);
  return { ...state, inflight };
}

export function endAction(state: ReportViewState, detectionId: string): ReportViewState {
  const inflight = new Set(state.inflight);
  inflight.delete(detectionId);
  return { ...state, inflight };
}

// Finalize is reachable only when every detection is resolved.
export function finalizeEnabled(state: ReportViewState): boolean {
  if (!state.scan || state.scan.finalized) return false;
  return state.scan.detections.every((d) => d.status !== "pending");
}

export function badgeFor(status: DetectionStatus): "green" | "red" | "amber" {
  switch (status) {
    case "confirmed":
      return "green";
    case "rejected":
      return "red";
    case "pending":
      return "amber";
  }
}
