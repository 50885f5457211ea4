import numpy as np
import pytest

from mmdefect import datasynth as D
from mmdefect import perception as P
from mmdefect.rng import RngStream

EDGES = np.linspace(0, 16, 17)


def test_single_dot_inversion():
    img = D.rasterize(np.array([[0.0, 0.0]]), 16.0, 128, 128, dot_radius=0)
    img2 = D.rasterize(np.array([[0.0, 0.0], [5.0, -5.0]]), 16.0, 128, 128, dot_radius=0)
    stats = P.extract_stats(img2, EDGES)
    assert stats.total_dots == 2
    stats1 = P.extract_stats(img, EDGES)
    assert abs(stats1.mean[0]) <= P.half_pixel(img)
    assert abs(stats1.mean[1]) <= P.half_pixel(img)


def test_two_blocks_two_components():
    pixels = np.zeros((64, 64), dtype=np.uint8)
    pixels[10:13, 10:13] = 255
    pixels[40:43, 50:53] = 255
    img = D.RasterImage(pixels=pixels, extent=16.0, dot_radius=1)
    dots = P.detect_dots(img)
    assert dots.shape[0] == 2
    centers_px = sorted([(11, 11), (41, 51)])
    recovered = sorted(
        (int(round((y + 16) / 32 * 63)), int(round((x + 16) / 32 * 63))) for x, y in dots
    )
    assert recovered == centers_px


def test_empty_image_error():
    img = D.RasterImage(pixels=np.zeros((32, 32), dtype=np.uint8), extent=16.0, dot_radius=0)
    with pytest.raises(ValueError, match="empty image"):
        P.extract_stats(img, EDGES)


def test_round_trip_means_within_halfpixel_no_collisions():
    spec = D.default_catalog()[1]
    root = RngStream(31)
    checked = 0
    for i in range(60):
        pts = D.sample_points(root.stream("rt", i), spec, 120)
        cols = D.data_to_pixel(pts[:, 0], 16.0, 512)
        rows = D.data_to_pixel(pts[:, 1], 16.0, 512)
        if len(set(zip(rows.tolist(), cols.tolist()))) < len(pts):
            continue  # collision; outside the exact-round-trip regime
        img = D.rasterize(pts, 16.0, 512, 512, dot_radius=0)
        stats = P.extract_stats(img, EDGES)
        rec = D.summarize(pts, EDGES)
        hp = P.half_pixel(img)
        assert abs(stats.mean[0] - rec.mean[0]) <= hp
        assert abs(stats.mean[1] - rec.mean[1]) <= hp
        assert stats.total_dots == rec.total_points
        checked += 1
    assert checked >= 20


def test_monotone_dropout_never_lights_more():
    rng = RngStream(5)
    pts = D.sample_points(rng.stream("m"), D.default_catalog()[0], 300)
    order = D.erase_order(rng.stream("erase"), 300)
    prev = None
    for p in (0.0, 0.1, 0.2, 0.4):
        img = D.rasterize(D.apply_dropout(pts, order, p), 16.0, 128, 128, 0)
        lit = int((img.pixels > 0).sum())
        if prev is not None:
            assert lit <= prev
        prev = lit


def test_verify_consistency_fresh_sample_passes():
    cfg = D.SynthConfig(dropout=0.0, record_noise=0.0, canvas=128, dot_jitter=0)
    cat = [D.default_catalog()[0]]
    sample = D.build_samples(cat, seed=8, config=cfg)[0]
    report = P.verify_consistency(sample, cfg.ring_edges(), dropout=0.0, record_noise=0.0)
    assert report.passed, report.details


def test_verify_consistency_detects_perturbed_mean():
    cfg = D.SynthConfig(dropout=0.0, record_noise=0.0, canvas=128, dot_jitter=0)
    sample = D.build_samples([D.default_catalog()[0]], seed=8, config=cfg)[0]
    rec = sample.record
    sample.record = D.NumericRecord(rec.ring_counts, (rec.mean[0] + 5.0, rec.mean[1]),
                                    rec.std, rec.total_points)
    report = P.verify_consistency(sample, cfg.ring_edges(), dropout=0.0, record_noise=0.0)
    assert not report.fields["mean_x"]


def test_dropout_lit_count_binomial_band():
    cfg = D.SynthConfig(dropout=0.15, record_noise=0.0, canvas=256, dot_jitter=0,
                        dots_per_image=400)
    sample = D.build_samples([D.default_catalog()[2]], seed=10, config=cfg)[0]
    stats = P.extract_stats(sample.image, cfg.ring_edges())
    n = sample.record.total_points
    expected = 0.85 * n
    band = 4 * np.sqrt(n * 0.15 * 0.85) + P.expected_collisions(n, sample.record.std, sample.image)
    assert abs(stats.total_dots - expected) <= band
