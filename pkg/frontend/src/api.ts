import {
  DetectionDto,
  ExplanationRecord,
  ExplanationSummary,
  RegionDto,
  ScanDto,
} from "./types";

// Minimal structural view of fetch so tests can inject a fixture server.
export interface HttpResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => globalThis.fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: HttpResponse;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "unreachable", `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let code = "error";
      let message = `request failed with status ${response.status}`;
      try {
        const parsed = (await response.json()) as { code?: string; message?: string };
        if (parsed && typeof parsed === "object") {
          code = parsed.code ?? code;
          message = parsed.message ?? message;
        }
      } catch {
        // keep the generic message for non-JSON error bodies
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  getScan(scanId: string): Promise<ScanDto> {
    return this.request<ScanDto>("GET", `/scans/${scanId}`);
  }

  async reviewDetection(
    detectionId: string,
    action: "confirm" | "reject",
    actor = "clinician",
  ): Promise<DetectionDto> {
    const out = await this.request<{ detection: DetectionDto }>(
      "POST",
      `/detections/${detectionId}/review`,
      { action, actor },
    );
    return out.detection;
  }

  addDetection(
    scanId: string,
    region: RegionDto,
    actor = "clinician",
  ): Promise<{ detection: DetectionDto; warning?: string }> {
    return this.request("POST", `/scans/${scanId}/detections`, { region, actor });
  }

  requestExplanation(body: {
    scan_id: string;
    detection_id?: string;
    region?: RegionDto;
    gx?: number;
    gy?: number;
    chi?: number;
  }): Promise<ExplanationSummary> {
    return this.request("POST", "/explanations", body);
  }

  getExplanation(explanationId: string): Promise<ExplanationRecord> {
    return this.request("GET", `/explanations/${explanationId}`);
  }

  finalizeScan(scanId: string, actor = "clinician"): Promise<{ finalized: boolean }> {
    return this.request("POST", `/scans/${scanId}/finalize`, { actor });
  }

  imageUrl(scanId: string): string {
    return `${this.baseUrl}/scans/${scanId}/image.png`;
  }
}
