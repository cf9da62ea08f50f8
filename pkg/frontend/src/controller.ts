import { ApiClient, ApiError } from "./api";
import {
  ReportViewState,
  applyDetectionUpdate,
  applyError,
  applyScan,
  beginAction,
  canAct,
  endAction,
  initialState,
  setOverlay,
} from "./state";
import { overlayScale, pixelValues, renderOverlay } from "./overlay";
import { RegionDto } from "./types";

// DOM-free report flow: the page binds events to these methods and
// re-renders from `state` whenever `onChange` fires.

export class ReportController {
  state: ReportViewState = initialState();

  constructor(
    private api: ApiClient,
    private scanId: string,
    private onChange: (state: ReportViewState) => void = () => {},
  ) {}

  private update(next: ReportViewState): void {
    this.state = next;
    this.onChange(next);
  }

  private fail(err: unknown): void {
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    this.update(applyError(this.state, message));
  }

  async load(): Promise<void> {
    try {
      const scan = await this.api.getScan(this.scanId);
      this.update(applyScan(this.state, scan));
    } catch (err) {
      this.fail(err);
    }
  }

  async act(detectionId: string, action: "confirm" | "reject"): Promise<void> {
    if (!canAct(this.state, detectionId)) return;
    this.update(beginAction(this.state, detectionId));
    try {
      const detection = await this.api.reviewDetection(detectionId, action);
      this.update(applyDetectionUpdate(this.state, detection));
    } catch (err) {
      this.fail(err);
    } finally {
      this.update(endAction(this.state, detectionId));
    }
  }

  async addRegion(region: RegionDto): Promise<void> {
    try {
      await this.api.addDetection(this.scanId, region);
      // reload so ordering and ids come from the server
      const scan = await this.api.getScan(this.scanId);
      this.update(applyScan(this.state, scan));
    } catch (err) {
      this.fail(err);
    }
  }

  async explain(
    target: { detectionId?: string; region?: RegionDto },
    params: { gx?: number; gy?: number; chi?: number } = {},
  ): Promise<void> {
    try {
      const summary = await this.api.requestExplanation({
        scan_id: this.scanId,
        detection_id: target.detectionId,
        region: target.region,
        ...params,
      });
      const record = await this.api.getExplanation(summary.explanation_id);
      const image = renderOverlay(
        record.region,
        record.params.gx,
        record.params.gy,
        record.phis,
      );
      this.update(
        setOverlay(this.state, {
          explanationId: record.explanation_id,
          image,
          region: record.region,
          phi0: record.phi0,
          prediction: record.prediction,
          scale: overlayScale(
            pixelValues(record.region, record.params.gx, record.params.gy, record.phis),
          ),
          topPatches: record.top_patches,
          note: record.note,
        }),
      );
    } catch (err) {
      this.fail(err);
    }
  }

  clearOverlay(): void {
    this.update(setOverlay(this.state, null));
  }

  async finalize(): Promise<void> {
    try {
      await this.api.finalizeScan(this.scanId);
      const scan = await this.api.getScan(this.scanId);
      this.update(applyScan(this.state, scan));
    } catch (err) {
      this.fail(err);
    }
  }
}
