"""Scan ingestion, blob detection, patch-level attribution heatmaps, and measurement.

Images are single-channel 2-D intensity grids in [0, 1].  The detector
here is a deliberately simple stand-in (threshold + 4-connected
components with a logistic contrast score); any scoring model can be
swapped in through the predictor contract.  Explanations coarsen the
region's pixels to a grid of patch mean intensities, attribute the
model score across patches, and paint each pixel with its patch's share.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import DimensionError, ImageFormatError, ParameterError
from .shapley import DEFAULT_BACKGROUND_CAP, DEFAULT_EVAL_BUDGET, hypershap

# 4-connectivity for component labeling.
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Detection score: logistic of (component mean - border ring mean).
DETECTOR_SCORE_STEEPNESS = 8.0
# Ring = pixels within Chebyshev distance 2 of the component, outside it.
DETECTOR_RING_RADIUS = 2

# Progression threshold on the percent change of summed diameters.
PROGRESSION_CUTOFF_PERCENT = 20.0


@dataclass(frozen=True)
class ScanImage:
    """Grayscale scan: row-major intensities in [0, 1] plus pixel spacing in mm."""

    intensities: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise DimensionError(f"image must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("image intensities must be finite and lie in [0, 1]")
        if self.spacing <= 0:
            raise ParameterError(f"pixel spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "intensities", arr)

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]


@dataclass(frozen=True)
class Region:
    """Axis-aligned pixel bounding box (x, y = top-left corner)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"region must have positive extent, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ParameterError(f"region origin must be non-negative, got ({self.x}, {self.y})")

    def require_within(self, img: ScanImage) -> None:
        if self.x + self.w > img.width or self.y + self.h > img.height:
            raise ParameterError(
                f"region {self.as_dict()} exceeds image bounds {img.width}x{img.height}"
            )

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass
class Detection:
    """A candidate lesion: bounding box, score, and review status."""

    id: str
    region: Region
    score: float
    status: str = "pending"  # pending | confirmed | rejected
    source: str = "automatic"  # automatic | clinician

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ParameterError(f"detection score must lie in [0, 1], got {self.score}")
        if self.status not in ("pending", "confirmed", "rejected"):
            raise ParameterError(f"unknown detection status {self.status!r}")
        if self.source not in ("automatic", "clinician"):
            raise ParameterError(f"unknown detection source {self.source!r}")
        if self.source == "clinician" and self.status == "pending":
            raise ParameterError("clinician-added detections start confirmed")


@dataclass(frozen=True)
class PatchGrid:
    """Partition of a region into gx*gy rectangles, one attribution feature each.

    ``mapping[i]`` holds the region-local row-major pixel indices of
    patch ``i``; patches tile the region exactly (disjoint, covering).
    Remainder pixels are absorbed by the last row/column of patches.
    """

    region: Region
    gx: int
    gy: int
    mapping: Tuple[np.ndarray, ...]
    bounds: Tuple[Tuple[int, int, int, int], ...]  # per patch: region-local x, y, w, h

    @property
    def m(self) -> int:
        return self.gx * self.gy


@dataclass(frozen=True)
class Heatmap:
    """Per-pixel attribution over a region plus the baseline term.

    Pixel values sum (with ``phi0``) back to the model's score of the
    unperturbed region.
    """

    region: Region
    values: np.ndarray  # (region.h, region.w)
    phi0: float
    prediction: float
    phis: np.ndarray
    gx: int
    gy: int


@dataclass(frozen=True)
class Measurement:
    """RECIST-style 1-D size of a detection."""

    detection_id: str
    diameter_mm: float
    centroid: Tuple[float, float]  # (x, y) image pixels, intensity weighted
    warning: Optional[str] = None

    def __post_init__(self) -> None:
        if self.diameter_mm < 0:
            raise ParameterError(f"diameter must be >= 0, got {self.diameter_mm}")


@dataclass(frozen=True)
class BackgroundSpec:
    """Replacement patch values for perturbed features.

    ``blur``: patch means of the Gaussian-blurred image (sigma in
    pixels, kernel truncated at 3 sigma) - one background row.
    ``uniform``: constant intensity - one row.  ``crops``: patch means
    of every region-sized window tiled across the image at ``stride``
    pixels (default: the region size), ordered by (y, x).
    """

    mode: str = "blur"
    sigma: float = 2.0
    value: float = 0.0
    stride: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("blur", "uniform", "crops"):
            raise ParameterError(f"unknown background mode {self.mode!r}")
        if self.mode == "blur" and self.sigma <= 0:
            raise ParameterError(f"blur sigma must be positive, got {self.sigma}")
        if self.mode == "uniform" and not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"uniform background value must lie in [0, 1], got {self.value}")


@dataclass(frozen=True)
class ResponseAssessment:
    """Percent change of summed diameters against the progression cutoff."""

    delta_percent: float
    progression: bool

    @property
    def label(self) -> str:
        return "progression" if self.progression else "non-progression"


# ---------------------------------------------------------------------------
# image IO


def parse_image(data: bytes, spacing: float = 1.0) -> ScanImage:
    """Decode PGM (P2/P5) or grayscale PNG bytes into a normalized ScanImage."""
    if data[:2] in (b"P2", b"P5"):
        return ScanImage(_parse_pgm(data), spacing=spacing)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return ScanImage(_parse_png(data), spacing=spacing)
    raise ImageFormatError("unknown image format: expected PGM (P2/P5) or PNG")


def load_image(path, spacing: float = 1.0) -> ScanImage:
    """Read a scan from disk; intensities are normalized by the format's maxval."""
    p = Path(path)
    if not p.is_file():
        raise ImageFormatError(f"image file not found: {p}")
    return parse_image(p.read_bytes(), spacing=spacing)


def _parse_pgm(data: bytes) -> np.ndarray:
    magic = data[:2]
    pos = 2
    fields = []

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("corrupt PGM: truncated header")
        return data[start:pos]

    try:
        for _ in range(3):
            fields.append(int(next_token()))
    except ValueError as exc:
        raise ImageFormatError("corrupt PGM: non-numeric header field") from exc
    width, height, maxval = fields
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise ImageFormatError(f"corrupt PGM: bad dimensions {width}x{height} maxval {maxval}")

    if magic == b"P2":
        tokens = data[pos:].split()
        if len(tokens) < width * height:
            raise ImageFormatError("corrupt PGM: truncated pixel data")
        try:
            pixels = np.array(tokens[: width * height], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError("corrupt PGM: non-numeric pixel") from exc
    else:
        pos += 1  # single whitespace after maxval
        bytes_per = 1 if maxval < 256 else 2
        raw = data[pos:pos + width * height * bytes_per]
        if len(raw) < width * height * bytes_per:
            raise ImageFormatError("corrupt PGM: truncated pixel data")
        dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    if pixels.min() < 0 or pixels.max() > maxval:
        raise ImageFormatError("corrupt PGM: pixel exceeds maxval")
    return pixels.reshape(height, width).astype(np.float64) / maxval


def _parse_png(data: bytes) -> np.ndarray:
    try:
        img = PILImage.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ImageFormatError(f"corrupt PNG: {exc}") from exc
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if img.mode in ("I", "I;16"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    raise ImageFormatError(f"unsupported PNG mode {img.mode!r}: expected 8/16-bit grayscale")


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D integer array as a binary (P5) PGM file."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DimensionError(f"PGM data must be 2-D, got shape {arr.shape}")
    if not 1 <= maxval <= 65535:
        raise ParameterError(f"PGM maxval must lie in [1, 65535], got {maxval}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# detection


def detect_lesions(img: ScanImage, threshold: float = 0.5, min_area: int = 4) -> list:
    """Label bright 4-connected components as candidate lesions.

    Components with more than ``min_area`` pixels above ``threshold``
    are wrapped in tight bounding boxes and scored by a logistic of
    their mean contrast against a 2-pixel border ring.  Detections are
    ordered by box top-left (y, x) and returned with status pending.
    """
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    if min_area < 1:
        raise ParameterError(f"min_area must be >= 1, got {min_area}")
    mask = img.intensities > threshold
    labels, count = ndimage.label(mask, structure=_CONN4)
    boxes = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        component = labels == lab
        area = int(component.sum())
        if area <= min_area:
            continue
        region = Region(
            x=sl[1].start, y=sl[0].start,
            w=sl[1].stop - sl[1].start, h=sl[0].stop - sl[0].start,
        )
        ring = ndimage.binary_dilation(
            component, structure=np.ones((3, 3), dtype=bool), iterations=DETECTOR_RING_RADIUS
        ) & ~component
        comp_mean = float(img.intensities[component].mean())
        ring_mean = float(img.intensities[ring].mean()) if ring.any() else 0.0
        contrast = comp_mean - ring_mean
        score = 1.0 / (1.0 + math.exp(-DETECTOR_SCORE_STEEPNESS * contrast))
        boxes.append((region.y, region.x, region, score))
    boxes.sort(key=lambda item: (item[0], item[1], item[2].w, item[2].h))
    return [
        Detection(id=f"det-{k:03d}", region=region, score=score)
        for k, (_, _, region, score) in enumerate(boxes, start=1)
    ]


# ---------------------------------------------------------------------------
# patch features and explanation


def patch_features(img: ScanImage, region: Region, gx: int, gy: int) -> PatchGrid:
    """Split a region into a gx*gy patch grid; remainders go to the last row/column."""
    region.require_within(img)
    if gx < 1 or gy < 1:
        raise ParameterError(f"grid divisions must be >= 1, got {gx}x{gy}")
    if gx > region.w or gy > region.h:
        raise ParameterError(
            f"grid {gx}x{gy} exceeds region size {region.w}x{region.h}"
        )
    base_w, base_h = region.w // gx, region.h // gy
    xs = [px * base_w for px in range(gx)] + [region.w]
    ys = [py * base_h for py in range(gy)] + [region.h]
    mapping = []
    bounds = []
    for py in range(gy):
        for px in range(gx):
            x0, x1 = xs[px], xs[px + 1] if px < gx - 1 else region.w
            y0, y1 = ys[py], ys[py + 1] if py < gy - 1 else region.h
            cols, rows = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
            mapping.append((rows * region.w + cols).ravel())
            bounds.append((x0, y0, x1 - x0, y1 - y0))
    return PatchGrid(region=region, gx=gx, gy=gy,
                     mapping=tuple(mapping), bounds=tuple(bounds))


def _region_view(img: ScanImage, region: Region) -> np.ndarray:
    return img.intensities[region.y:region.y + region.h, region.x:region.x + region.w]


def patch_means(img: ScanImage, grid: PatchGrid) -> np.ndarray:
    """Mean intensity per patch; the feature vector an explanation model scores."""
    flat = _region_view(img, grid.region).ravel()
    return np.array([flat[idx].mean() for idx in grid.mapping])


def background_rows(img: ScanImage, grid: PatchGrid, spec: BackgroundSpec) -> np.ndarray:
    """Background dataset rows (k, m) supplying replacement patch values."""
    region = grid.region
    if spec.mode == "uniform":
        return np.full((1, grid.m), spec.value, dtype=np.float64)
    if spec.mode == "blur":
        blurred = ndimage.gaussian_filter(img.intensities, sigma=spec.sigma, truncate=3.0)
        blurred_img = ScanImage(np.clip(blurred, 0.0, 1.0), spacing=img.spacing)
        return patch_means(blurred_img, grid)[None, :]
    stride = spec.stride if spec.stride is not None else max(region.w, region.h)
    if stride < 1:
        raise ParameterError(f"crop stride must be >= 1, got {stride}")
    rows = []
    for y0 in range(0, img.height - region.h + 1, stride):
        for x0 in range(0, img.width - region.w + 1, stride):
            shifted = PatchGrid(
                region=Region(x=x0, y=y0, w=region.w, h=region.h),
                gx=grid.gx, gy=grid.gy, mapping=grid.mapping, bounds=grid.bounds,
            )
            rows.append(patch_means(img, shifted))
    return np.stack(rows, axis=0)


def explain_region(
    img: ScanImage,
    region: Region,
    grid: Tuple[int, int],
    model,
    background: BackgroundSpec = BackgroundSpec(),
    chi: int = 4,
    *,
    background_cap: int = DEFAULT_BACKGROUND_CAP,
    eval_budget: int = DEFAULT_EVAL_BUDGET,
) -> Heatmap:
    """Attribute a region's model score across its patches, painted per pixel.

    The query is the region's actual patch means, the background rows
    come from ``background``, and each pixel receives its patch's
    attribution divided by the patch pixel count, so the pixel sum plus
    ``phi0`` equals the score of the unperturbed region.  Positive
    values mark pixels pushing the score up.
    """
    gx, gy = grid
    pg = patch_features(img, region, gx, gy)
    arity = getattr(model, "arity", None)
    if arity is not None and arity != pg.m:
        raise DimensionError(f"model expects {arity} features but grid has {pg.m} patches")
    q = patch_means(img, pg)
    X = background_rows(img, pg, background)
    attr = hypershap(X, q, model, chi, background_cap=background_cap, eval_budget=eval_budget)
    values = np.zeros(region.h * region.w, dtype=np.float64)
    for i, idx in enumerate(pg.mapping):
        values[idx] = attr.phis[i] / idx.size
    return Heatmap(
        region=region,
        values=values.reshape(region.h, region.w),
        phi0=attr.phi0,
        prediction=attr.prediction,
        phis=attr.phis,
        gx=gx,
        gy=gy,
    )


def save_heatmap(hm: Heatmap, basepath) -> Tuple[Path, Path]:
    """Persist a heatmap as an 8-bit PGM plus a JSON sidecar with the raw values.

    Gray levels use the symmetric affine map
    ``gray = round(127.5 * (1 + value / scale))`` with
    ``scale = max(|value|)`` (1.0 when the map is all zero), so mid-gray
    is zero attribution, white the strongest positive, black the
    strongest negative.
    """
    base = Path(basepath)
    scale = float(np.max(np.abs(hm.values)))
    if scale == 0.0:
        scale = 1.0
    gray = np.clip(np.round(127.5 * (1.0 + hm.values / scale)), 0, 255)
    pgm_path = base.with_suffix(".pgm")
    json_path = base.with_suffix(".json")
    write_pgm(pgm_path, gray)
    sidecar = {
        "region": hm.region.as_dict(),
        "gx": hm.gx,
        "gy": hm.gy,
        "phi0": hm.phi0,
        "prediction": hm.prediction,
        "phis": [float(v) for v in hm.phis],
        "pixel_scale": scale,
        "gray_mapping": "gray = round(127.5 * (1 + value / pixel_scale))",
    }
    json_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return pgm_path, json_path


# ---------------------------------------------------------------------------
# measurement


def _max_pairwise_sq(points: np.ndarray) -> float:
    """Largest squared distance between any two points (integer coordinates)."""
    if points.shape[0] < 2:
        return 0.0
    candidates = points
    if points.shape[0] >= 4:
        try:
            from scipy.spatial import ConvexHull, QhullError

            candidates = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            candidates = points  # degenerate (collinear) sets
    pts = candidates.astype(np.float64)
    best = 0.0
    for i in range(pts.shape[0] - 1):
        d = pts[i + 1:] - pts[i]
        best = max(best, float(np.max((d * d).sum(axis=1))))
    return best


def measure_lesion(img: ScanImage, det: Detection, threshold: float = 0.5) -> Measurement:
    """Longest 1-D extent of the above-threshold pixels inside a detection.

    Diameter is the maximum pairwise distance between pixel centers
    times the image spacing; the centroid is the intensity-weighted mean
    position in image coordinates.  With no pixel above threshold a
    zero-extent measurement is returned with a warning flag.
    """
    det.region.require_within(img)
    crop = _region_view(img, det.region)
    mask = crop > threshold
    if not mask.any():
        center = (det.region.x + (det.region.w - 1) / 2.0,
                  det.region.y + (det.region.h - 1) / 2.0)
        return Measurement(detection_id=det.id, diameter_mm=0.0, centroid=center,
                           warning="no pixels above threshold")
    ys, xs = np.nonzero(mask)
    points = np.stack([xs, ys], axis=1).astype(np.int64)
    diameter = img.spacing * math.sqrt(_max_pairwise_sq(points))
    weights = crop[ys, xs]
    total = float(weights.sum())
    cx = float((weights * (xs + det.region.x)).sum() / total)
    cy = float((weights * (ys + det.region.y)).sum() / total)
    return Measurement(detection_id=det.id, diameter_mm=diameter, centroid=(cx, cy))


def classify_response(baseline_sum_mm: float, followup_sum_mm: float) -> ResponseAssessment:
    """Flag progression when summed diameters grew by at least the 20% cutoff."""
    if not baseline_sum_mm > 0:
        raise ParameterError(f"baseline sum must be positive, got {baseline_sum_mm}")
    delta = 100.0 * (followup_sum_mm - baseline_sum_mm) / baseline_sum_mm
    return ResponseAssessment(delta_percent=delta,
                              progression=delta >= PROGRESSION_CUTOFF_PERCENT)
