import io
import json

import numpy as np
import pytest
from PIL import Image as PILImage

from shapscan.errors import DimensionError, ImageFormatError, ParameterError
from shapscan.imaging import (
    BackgroundSpec,
    Detection,
    Region,
    ScanImage,
    background_rows,
    classify_response,
    detect_lesions,
    explain_region,
    load_image,
    measure_lesion,
    parse_image,
    patch_features,
    patch_means,
    save_heatmap,
)
from shapscan.models import LinearPredictor, ThresholdBlobPredictor
from shapscan.shapley import exact_shapley


def blob_image(size=32, background=0.1, blobs=(), spacing=1.0):
    """Rectangular bright blobs on a flat background."""
    arr = np.full((size, size), background)
    for (x, y, w, h, value) in blobs:
        arr[y:y + h, x:x + w] = value
    return ScanImage(arr, spacing=spacing)


# ---------------------------------------------------------------------------
# image IO


class TestLoadImage:
    def test_p2_normalization(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 255\n255 0\n")
        img = load_image(path)
        assert img.intensities.tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_p5_8bit(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = load_image(path)
        assert img.intensities[0, 1] == 1.0
        assert img.intensities[1, 0] == pytest.approx(128 / 255)

    def test_p5_16bit_max_is_one(self, tmp_path):
        path = tmp_path / "t.pgm"
        pixels = np.array([[65535, 0], [32768, 1]], dtype=">u2")
        path.write_bytes(b"P5\n2 2\n65535\n" + pixels.tobytes())
        img = load_image(path)
        assert img.intensities[0, 0] == 1.0
        assert img.intensities[1, 0] == pytest.approx(32768 / 65535)

    def test_png_8bit(self, tmp_path):
        buf = io.BytesIO()
        PILImage.fromarray(np.array([[0, 255], [128, 64]], dtype=np.uint8), mode="L").save(
            buf, format="PNG")
        path = tmp_path / "t.png"
        path.write_bytes(buf.getvalue())
        img = load_image(path)
        assert img.intensities[0, 1] == 1.0

    def test_truncated_pgm(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ImageFormatError, match="truncated"):
            load_image(path)

    def test_unknown_format(self):
        with pytest.raises(ImageFormatError, match="unknown image format"):
            parse_image(b"GIF89a....")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageFormatError, match="not found"):
            load_image(tmp_path / "absent.pgm")

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P2\n# a comment\n2 1\n255\n7 255\n")
        img = load_image(path)
        assert img.intensities[0, 1] == 1.0


# ---------------------------------------------------------------------------
# detection


class TestDetectLesions:
    def test_uniform_dark_image_empty(self):
        img = blob_image(16, background=0.05)
        assert detect_lesions(img, threshold=0.5, min_area=4) == []

    def test_single_square_tight_box(self):
        img = blob_image(20, blobs=[(6, 8, 5, 5, 0.9)])
        dets = detect_lesions(img, threshold=0.5, min_area=4)
        assert len(dets) == 1
        det = dets[0]
        assert (det.region.x, det.region.y, det.region.w, det.region.h) == (6, 8, 5, 5)
        assert det.status == "pending" and det.source == "automatic"
        assert 0.5 < det.score <= 1.0

    def test_two_squares_ordered_top_left_first(self):
        img = blob_image(32, blobs=[(20, 18, 4, 4, 0.9), (4, 3, 4, 4, 0.9)])
        dets = detect_lesions(img, threshold=0.5, min_area=4)
        assert [d.region.y for d in dets] == [3, 18]
        assert [d.id for d in dets] == ["det-001", "det-002"]

    def test_min_area_excludes_small_components(self):
        img = blob_image(16, blobs=[(2, 2, 2, 2, 0.9)])  # area 4
        assert detect_lesions(img, threshold=0.5, min_area=4) == []
        assert len(detect_lesions(img, threshold=0.5, min_area=3)) == 1

    def test_translation_consistency(self):
        base = blob_image(40, blobs=[(10, 12, 6, 5, 0.85)])
        moved = blob_image(40, blobs=[(17, 21, 6, 5, 0.85)])
        a = detect_lesions(base)[0].region
        b = detect_lesions(moved)[0].region
        assert (b.x - a.x, b.y - a.y) == (7, 9)
        assert (a.w, a.h) == (b.w, b.h)

    def test_parameter_validation(self):
        img = blob_image(8)
        with pytest.raises(ParameterError):
            detect_lesions(img, threshold=0.0)
        with pytest.raises(ParameterError):
            detect_lesions(img, min_area=0)


# ---------------------------------------------------------------------------
# patch grid


class TestPatchFeatures:
    def test_even_split(self):
        img = blob_image(16)
        grid = patch_features(img, Region(0, 0, 8, 8), 2, 2)
        assert grid.m == 4
        assert all(idx.size == 16 for idx in grid.mapping)

    def test_remainder_to_last_column(self):
        img = blob_image(16)
        grid = patch_features(img, Region(0, 0, 5, 4), 2, 2)
        widths = [b[2] for b in grid.bounds[:2]]
        assert widths == [2, 3]

    def test_grid_exceeding_region(self):
        img = blob_image(16)
        with pytest.raises(ParameterError):
            patch_features(img, Region(0, 0, 3, 3), 4, 2)

    def test_partition_disjoint_and_covering(self):
        img = blob_image(16)
        grid = patch_features(img, Region(2, 3, 7, 5), 3, 2)
        seen = np.concatenate(grid.mapping)
        assert sorted(seen.tolist()) == list(range(7 * 5))

    def test_patch_means_match_manual(self):
        arr = np.linspace(0, 1, 36).reshape(6, 6)
        img = ScanImage(arr)
        grid = patch_features(img, Region(0, 0, 6, 6), 2, 2)
        means = patch_means(img, grid)
        assert means[0] == pytest.approx(arr[0:3, 0:3].mean())
        assert means[3] == pytest.approx(arr[3:6, 3:6].mean())


class TestBackgroundRows:
    def test_uniform_single_row(self):
        img = blob_image(16)
        grid = patch_features(img, Region(0, 0, 8, 8), 2, 2)
        rows = background_rows(img, grid, BackgroundSpec(mode="uniform", value=0.3))
        assert rows.shape == (1, 4)
        assert np.all(rows == 0.3)

    def test_blur_smooths_the_blob(self):
        img = blob_image(24, blobs=[(8, 8, 6, 6, 0.9)])
        grid = patch_features(img, Region(6, 6, 10, 10), 2, 2)
        rows = background_rows(img, grid, BackgroundSpec(mode="blur", sigma=2.0))
        assert rows.shape == (1, 4)
        # blurring pulls the bright patch means toward the background
        assert rows.max() < patch_means(img, grid).max()

    def test_crops_tile_in_reading_order(self):
        arr = np.linspace(0, 1, 24 * 24).reshape(24, 24)
        img = ScanImage(arr)
        grid = patch_features(img, Region(0, 0, 8, 8), 2, 2)
        rows = background_rows(img, grid, BackgroundSpec(mode="crops", stride=8))
        assert rows.shape == (9, 4)  # 3x3 disjoint tiles
        first = patch_means(img, grid)
        np.testing.assert_allclose(rows[0], first)
        # row-major crop order: means increase down the image
        assert np.all(np.diff(rows.mean(axis=1)) > 0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ParameterError):
            BackgroundSpec(mode="noise")


# ---------------------------------------------------------------------------
# explanation heatmaps


class TestExplainRegion:
    def test_single_patch_model_localizes_mass(self):
        img = blob_image(24, blobs=[(4, 4, 8, 8, 0.8)])
        region = Region(2, 2, 12, 12)
        weights = np.zeros(9)
        weights[4] = 1.0  # center patch only
        model = LinearPredictor(weights)
        hm = explain_region(img, region, (3, 3), model,
                            BackgroundSpec(mode="uniform", value=0.1), chi=2)
        grid = patch_features(img, region, 3, 3)
        flat = hm.values.ravel()
        target_mass = abs(flat[grid.mapping[4]].sum())
        other_mass = sum(abs(flat[grid.mapping[i]].sum()) for i in range(9) if i != 4)
        assert other_mass <= 1e-9
        assert target_mass > 0

    def test_background_equal_to_query_zeroes_heatmap(self):
        img = ScanImage(np.full((12, 12), 0.4))
        region = Region(0, 0, 8, 8)
        model = ThresholdBlobPredictor(4, threshold=0.3)
        hm = explain_region(img, region, (2, 2), model,
                            BackgroundSpec(mode="uniform", value=0.4), chi=2)
        np.testing.assert_allclose(hm.values, 0.0, atol=1e-12)
        assert hm.phi0 == pytest.approx(hm.prediction)

    def test_efficiency_through_pipeline(self):
        img = blob_image(32, blobs=[(10, 10, 7, 6, 0.9)])
        region = Region(6, 7, 16, 12)
        model = ThresholdBlobPredictor(16)
        hm = explain_region(img, region, (4, 4), model, BackgroundSpec(mode="blur"), chi=3)
        assert abs(hm.values.sum() + hm.phi0 - hm.prediction) <= 1e-6

    def test_matches_exact_shapley_on_patches(self):
        img = blob_image(20, blobs=[(6, 6, 6, 6, 0.9)])
        region = Region(4, 4, 10, 10)
        model = ThresholdBlobPredictor(4)
        grid = patch_features(img, region, 2, 2)
        q = patch_means(img, grid)
        spec = BackgroundSpec(mode="uniform", value=0.1)
        hm = explain_region(img, region, (2, 2), model, spec, chi=1)
        expected = exact_shapley(np.full((1, 4), 0.1), q, model)
        np.testing.assert_allclose(hm.phis, expected.phis, atol=1e-9)

    def test_model_arity_must_match_grid(self):
        img = blob_image(16)
        model = ThresholdBlobPredictor(9)
        with pytest.raises(DimensionError, match="patches"):
            explain_region(img, Region(0, 0, 8, 8), (2, 2), model,
                           BackgroundSpec(mode="uniform", value=0.1), chi=1)

    def test_save_heatmap_roundtrip(self, tmp_path):
        img = blob_image(16, blobs=[(4, 4, 6, 6, 0.9)])
        region = Region(2, 2, 12, 12)
        model = ThresholdBlobPredictor(4)
        hm = explain_region(img, region, (2, 2), model,
                            BackgroundSpec(mode="uniform", value=0.1), chi=1)
        pgm_path, json_path = save_heatmap(hm, tmp_path / "heat")
        sidecar = json.loads(json_path.read_text())
        assert sidecar["phi0"] == hm.phi0
        assert sidecar["phis"] == [float(v) for v in hm.phis]
        rendered = load_image(pgm_path)
        assert rendered.width == region.w and rendered.height == region.h


# ---------------------------------------------------------------------------
# measurement


class TestMeasureLesion:
    def test_horizontal_line(self):
        img = blob_image(12, blobs=[(3, 5, 5, 1, 0.9)])
        det = Detection(id="d", region=Region(3, 5, 5, 1), score=0.9)
        meas = measure_lesion(img, det)
        assert meas.diameter_mm == pytest.approx(4.0)
        assert meas.centroid == pytest.approx((5.0, 5.0))

    def test_single_pixel(self):
        img = blob_image(8, blobs=[(4, 4, 1, 1, 0.9)])
        det = Detection(id="d", region=Region(4, 4, 1, 1), score=0.5)
        assert measure_lesion(img, det).diameter_mm == 0.0

    def test_filled_rectangle_with_spacing(self):
        img = blob_image(12, blobs=[(2, 3, 3, 4, 0.9)], spacing=0.5)
        det = Detection(id="d", region=Region(2, 3, 3, 4), score=0.9)
        meas = measure_lesion(img, det)
        assert meas.diameter_mm == pytest.approx(0.5 * np.sqrt(2 ** 2 + 3 ** 2))

    def test_empty_region_warns(self):
        img = blob_image(10)
        det = Detection(id="d", region=Region(1, 1, 4, 4), score=0.2)
        meas = measure_lesion(img, det)
        assert meas.diameter_mm == 0.0
        assert meas.warning == "no pixels above threshold"

    def test_rotation_invariance(self):
        img_a = blob_image(16, blobs=[(2, 2, 7, 3, 0.9)])
        img_b = ScanImage(np.rot90(img_a.intensities, 1).copy())
        det_a = Detection(id="a", region=Region(0, 0, 16, 16), score=0.9)
        det_b = Detection(id="b", region=Region(0, 0, 16, 16), score=0.9)
        assert measure_lesion(img_a, det_a).diameter_mm == measure_lesion(img_b, det_b).diameter_mm

    def test_translation_invariance(self):
        img_a = blob_image(20, blobs=[(2, 2, 5, 4, 0.8)])
        img_b = blob_image(20, blobs=[(9, 11, 5, 4, 0.8)])
        det_a = Detection(id="a", region=Region(2, 2, 5, 4), score=0.9)
        det_b = Detection(id="b", region=Region(9, 11, 5, 4), score=0.9)
        assert measure_lesion(img_a, det_a).diameter_mm == measure_lesion(img_b, det_b).diameter_mm


# ---------------------------------------------------------------------------
# response classification


class TestClassifyResponse:
    def test_exactly_twenty_percent_is_progression(self):
        result = classify_response(50.0, 60.0)
        assert result.progression
        assert result.delta_percent == pytest.approx(20.0)

    def test_no_change(self):
        result = classify_response(50.0, 50.0)
        assert not result.progression
        assert result.delta_percent == 0.0

    def test_just_under_cutoff(self):
        result = classify_response(50.0, 59.9)
        assert not result.progression
        assert result.delta_percent == pytest.approx(19.8)

    def test_shrinkage_is_non_progression(self):
        assert not classify_response(50.0, 30.0).progression

    def test_nonpositive_baseline_rejected(self):
        with pytest.raises(ParameterError):
            classify_response(0.0, 10.0)
