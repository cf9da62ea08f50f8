// JSON shapes of the report service API.

export interface RegionDto {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type DetectionStatus = "pending" | "confirmed" | "rejected";

export interface DetectionDto {
  id: string;
  region: RegionDto;
  score: number;
  status: DetectionStatus;
  source: "automatic" | "clinician";
}

export interface ScanDto {
  scan_id: string;
  patient_label: string;
  created: string;
  finalized: boolean;
  pending: number;
  detections: DetectionDto[];
  explanations: string[];
}

export interface ExplanationParams {
  gx: number;
  gy: number;
  chi: number;
  requested_chi: number;
}

export interface TopPatch {
  feature: number;
  phi: number;
}

export interface ExplanationSummary {
  explanation_id: string;
  phi0: number;
  prediction: number;
  top_patches: TopPatch[];
  params: ExplanationParams;
  note: string | null;
}

export interface ExplanationRecord {
  explanation_id: string;
  detection_id: string | null;
  region: RegionDto;
  params: ExplanationParams;
  phi0: number;
  prediction: number;
  phis: number[];
  top_patches: TopPatch[];
  note: string | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
