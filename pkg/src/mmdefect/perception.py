"""Recover numeric statistics from a raster image.

Stands in for the optical/OCR stage: lit pixels (or connected dot blocks)
are mapped back to data coordinates, and the same summary statistics the
generator records are recomputed from what the image actually shows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .datasynth import NumericRecord, RasterImage, Sample, pixel_to_data

# 8-connectivity so a 3x3 dot block is a single component
_STRUCTURE = np.ones((3, 3), dtype=int)


@dataclass
class ExtractedStats:
    mean: tuple[float, float]
    std: tuple[float, float]
    ring_counts: list[int]
    lit_pixels: int
    total_dots: int

    @property
    def total_points(self) -> int:
        return self.total_dots


def detect_dots(image: RasterImage) -> np.ndarray:
    """Dot centers in data coordinates, shape (n, 2).

    dot_radius 0: every lit pixel is a dot. dot_radius > 0: 8-connected
    components collapse to their pixel centroid.
    """
    lit = image.pixels > 0
    if not lit.any():
        raise ValueError("empty image: no lit pixels")
    if image.dot_radius == 0:
        rows, cols = np.nonzero(lit)
        rc = np.stack([rows, cols], axis=1).astype(np.float64)
    else:
        labels, n = ndimage.label(lit, structure=_STRUCTURE)
        rc = np.asarray(ndimage.center_of_mass(lit, labels, range(1, n + 1)), dtype=np.float64)
    xs = pixel_to_data(rc[:, 1], image.extent, image.width)
    ys = pixel_to_data(rc[:, 0], image.extent, image.height)
    return np.stack([xs, ys], axis=1)


def extract_stats(image: RasterImage, ring_edges: np.ndarray) -> ExtractedStats:
    dots = detect_dots(image)
    edges = np.asarray(ring_edges, dtype=np.float64)
    radii = np.hypot(dots[:, 0], dots[:, 1])
    counts = [int(np.sum((radii >= lo) & (radii < hi))) for lo, hi in zip(edges[:-1], edges[1:])]
    mean = dots.mean(axis=0)
    std = dots.std(axis=0, ddof=1) if dots.shape[0] > 1 else np.zeros(2)
    return ExtractedStats(mean=(float(mean[0]), float(mean[1])),
                          std=(float(std[0]), float(std[1])),
                          ring_counts=counts,
                          lit_pixels=int((image.pixels > 0).sum()),
                          total_dots=dots.shape[0])


def half_pixel(image: RasterImage) -> float:
    """Largest per-axis quantization error of the pixel mapping."""
    return image.extent / (min(image.width, image.height) - 1)


def expected_collisions(n: int, std: tuple[float, float], image: RasterImage) -> float:
    """Birthday-style estimate of dot pairs sharing a pixel.

    Pr[two Gaussian draws hit the same pixel] ~ pixel_area / (4 pi sx sy).
    """
    pixel_area = (2.0 * image.extent / (image.width - 1)) * (2.0 * image.extent / (image.height - 1))
    sx, sy = max(std[0], 1e-6), max(std[1], 1e-6)
    return 0.5 * n * (n - 1) * pixel_area / (4.0 * np.pi * sx * sy)


@dataclass
class ConsistencyReport:
    fields: dict[str, bool]
    details: dict[str, str]

    @property
    def passed(self) -> bool:
        return all(self.fields.values())


def verify_consistency(sample: Sample, ring_edges: np.ndarray, dropout: float = 0.0,
                       record_noise: float = 0.0, mean_tol: float | None = None,
                       count_sigma: float = 4.0) -> ConsistencyReport:
    """Field-by-field check of the image against the sample's numeric record."""
    stats = extract_stats(sample.image, ring_edges)
    record: NumericRecord = sample.record
    n = record.total_points
    fields, details = {}, {}

    hp = half_pixel(sample.image)
    if mean_tol is None:
        # quantization + record noise + subsampling jitter from dropout
        spread = max(record.std)
        mean_tol = hp + 4.0 * record_noise
        if dropout > 0 and n > 0:
            kept = max(1.0, (1.0 - dropout) * n)
            mean_tol += 4.0 * spread * np.sqrt(dropout / kept)
    for axis, name in ((0, "mean_x"), (1, "mean_y")):
        diff = abs(stats.mean[axis] - record.mean[axis])
        fields[name] = diff <= mean_tol
        details[name] = f"|{stats.mean[axis]:.3f} - {record.mean[axis]:.3f}| = {diff:.3f} (tol {mean_tol:.3f})"

    std_tol = mean_tol + max(record.std) * 0.25  # collision loss biases std slightly low
    for axis, name in ((0, "std_x"), (1, "std_y")):
        diff = abs(stats.std[axis] - record.std[axis])
        fields[name] = diff <= std_tol
        details[name] = f"delta {diff:.3f} (tol {std_tol:.3f})"

    if sample.image.dot_radius == 0 and n > 0:
        expected = (1.0 - dropout) * n - expected_collisions(n, record.std, sample.image)
        band = count_sigma * np.sqrt(max(n * dropout * (1.0 - dropout), 1.0)) \
            + expected_collisions(n, record.std, sample.image)
        diff = abs(stats.total_dots - expected)
        fields["total"] = diff <= band
        details["total"] = f"dots {stats.total_dots} vs expected {expected:.1f} (band {band:.1f})"

    return ConsistencyReport(fields=fields, details=details)
