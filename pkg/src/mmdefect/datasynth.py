"""Synthetic dot-pattern dataset factory.

Each class is a bivariate Gaussian over a +-E data-unit square. A sample is
a rasterized dot image plus a numeric record (ring counts, mean, std) and
two surrogate text strings. The same machinery doubles as the augmentation
path: augmented samples are fresh draws from the class Gaussians tagged
provenance="augmented" and never enter the test split.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .rng import RngStream, gaussian2d


# Per-class generative parameters: (mu_x, mu_y, var_x, var_y, nominal count).
DEFAULT_CATALOG_ROWS = [
    (0, 0.04, -0.05, 3.71, 3.52, 225),
    (1, 2.73, 0.59, 7.38, 5.52, 92),
    (2, 6.43, -3.21, 8.27, 8.63, 44),
    (3, -1.10, 0.65, 8.14, 6.44, 50),
    (4, -0.21, -0.01, 9.44, 8.77, 44),
]

NUM_CLASSES = 5


@dataclass
class ClassSpec:
    class_id: int
    mu: tuple[float, float]
    sigma: list  # 2x2 covariance, data-units^2
    nominal_count: int

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.shape != (2, 2) or abs(s[0, 1] - s[1, 0]) > 1e-12:
            raise ValueError("sigma must be a symmetric 2x2 matrix")
        self.sigma = s.tolist()

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=np.float64)


def default_catalog(correlation: float = 0.0) -> list[ClassSpec]:
    """Five-class catalog; `correlation` sets the off-diagonal rho uniformly."""
    specs = []
    for cid, mx, my, vx, vy, n in DEFAULT_CATALOG_ROWS:
        cov = correlation * float(np.sqrt(vx * vy))
        specs.append(ClassSpec(cid, (mx, my), [[vx, cov], [cov, vy]], n))
    return specs


@dataclass
class RasterImage:
    pixels: np.ndarray  # (h, w) uint8, values in {0, 255}
    extent: float       # data coordinates span +-extent
    dot_radius: int
    out_of_range: int = 0

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class NumericRecord:
    ring_counts: list[int]
    mean: tuple[float, float]
    std: tuple[float, float]
    total_points: int


@dataclass
class Sample:
    id: str
    label: int
    image: RasterImage
    record: NumericRecord
    vlm_text: str = ""
    llm_text: str = ""
    split: str = "train"
    provenance: str = "original"
    image_path: str = ""


@dataclass
class SynthConfig:
    canvas: int = 64
    extent: float = 16.0
    rings: int = 16
    dots_per_image: int = 500
    dot_jitter: int = 100        # uniform +- jitter on dots per sample (0 disables)
    dot_radius: int = 0
    dropout: float = 0.15        # fraction of dots erased from the raster only
    record_noise: float = 0.1    # additive Gaussian sigma on recorded mean/std
    train_fraction: float = 325.0 / 455.0
    augment: bool = True

    def ring_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.extent, self.rings + 1)

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


# -- coordinate mapping ----------------------------------------------------


def data_to_pixel(coords: np.ndarray, extent: float, size: int) -> np.ndarray:
    """Linear map from [-E, E] to pixel indices [0, size-1], round half up."""
    scaled = (np.asarray(coords, dtype=np.float64) + extent) / (2.0 * extent) * (size - 1)
    return np.floor(scaled + 0.5).astype(np.int64)


def pixel_to_data(idx: np.ndarray, extent: float, size: int) -> np.ndarray:
    return np.asarray(idx, dtype=np.float64) / (size - 1) * 2.0 * extent - extent


# -- core operations -------------------------------------------------------


def sample_points(rng: RngStream, spec: ClassSpec, n: int) -> np.ndarray:
    """n i.i.d. draws from the class Gaussian; shape (n, 2)."""
    if n < 1:
        raise ValueError("need at least one point")
    return gaussian2d(rng, spec.mu, spec.sigma_array, n=n)


def rasterize(points: np.ndarray, extent: float, width: int, height: int,
              dot_radius: int = 0) -> RasterImage:
    """Map points to lit pixels. Points outside +-extent are counted, not drawn."""
    if width < 16 or height < 16:
        raise ValueError("canvas must be at least 16x16")
    pixels = np.zeros((height, width), dtype=np.uint8)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    in_range = np.all(np.abs(pts) <= extent, axis=1)
    cols = data_to_pixel(pts[in_range, 0], extent, width)
    rows = data_to_pixel(pts[in_range, 1], extent, height)
    if dot_radius == 0:
        pixels[rows, cols] = 255
    else:
        for dr in range(-dot_radius, dot_radius + 1):
            for dc in range(-dot_radius, dot_radius + 1):
                r = np.clip(rows + dr, 0, height - 1)
                c = np.clip(cols + dc, 0, width - 1)
                pixels[r, c] = 255
    return RasterImage(pixels=pixels, extent=extent, dot_radius=dot_radius,
                       out_of_range=int((~in_range).sum()))


def summarize(points: np.ndarray, ring_edges: np.ndarray) -> NumericRecord:
    """Ring-band frequencies plus sample mean and std (N-1 divisor)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points for a sample std")
    edges = np.asarray(ring_edges, dtype=np.float64)
    if edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
        raise ValueError("ring edges must start at 0 and increase strictly")
    radii = np.hypot(pts[:, 0], pts[:, 1])
    counts = [int(np.sum((radii >= lo) & (radii < hi))) for lo, hi in zip(edges[:-1], edges[1:])]
    mean = pts.mean(axis=0)
    std = pts.std(axis=0, ddof=1)
    return NumericRecord(ring_counts=counts, mean=(float(mean[0]), float(mean[1])),
                         std=(float(std[0]), float(std[1])), total_points=pts.shape[0])


def erase_order(rng: RngStream, n: int) -> np.ndarray:
    """Seeded erase permutation; dropout p removes the first ceil(p*n) entries,
    so a larger dropout always erases a superset of a smaller one."""
    return rng.permutation(n)


def apply_dropout(points: np.ndarray, order: np.ndarray, dropout: float) -> np.ndarray:
    n = len(points)
    k = int(np.ceil(dropout * n))
    keep = np.ones(n, dtype=bool)
    keep[order[:k]] = False
    return points[keep]


# -- dataset build ---------------------------------------------------------


def _noisy_record(record: NumericRecord, rng: RngStream, sigma: float) -> NumericRecord:
    if sigma <= 0:
        return record
    noise = rng.normal(size=4) * sigma
    mean = (record.mean[0] + noise[0], record.mean[1] + noise[1])
    std = (max(record.std[0] + noise[2], 0.0), max(record.std[1] + noise[3], 0.0))
    return NumericRecord(ring_counts=list(record.ring_counts), mean=mean, std=std,
                         total_points=record.total_points)


def _make_sample(root: RngStream, spec: ClassSpec, index: int, provenance: str,
                 config: SynthConfig, text_source=None) -> tuple[Sample, np.ndarray]:
    from . import perception, textbridge

    label = f"synth/{spec.class_id}/{provenance}"
    rng = root.stream(label, index)
    n = config.dots_per_image
    if config.dot_jitter > 0:
        n += rng.integers(-config.dot_jitter, config.dot_jitter + 1)
    n = max(n, 2)
    points = sample_points(rng, spec, n)
    record = summarize(points, config.ring_edges())
    kept = apply_dropout(points, erase_order(rng, n), config.dropout)
    image = rasterize(kept, config.extent, config.canvas, config.canvas, config.dot_radius)
    noisy = _noisy_record(record, rng, config.record_noise)
    stats = perception.extract_stats(image, config.ring_edges())
    if text_source is None:
        vlm_text = textbridge.surrogate_vlm_text(stats, rng)
        llm_text = textbridge.surrogate_llm_text(noisy, rng)
    else:
        vlm_text = text_source.generate("vlm", stats)
        llm_text = text_source.generate("llm", noisy)
    sample = Sample(
        id=f"c{spec.class_id}-{provenance[0]}{index:04d}",
        label=spec.class_id,
        image=image,
        record=noisy,
        vlm_text=vlm_text,
        llm_text=llm_text,
        provenance=provenance,
    )
    return sample, points


def build_samples(catalog: list[ClassSpec], seed: int, config: SynthConfig,
                  text_source=None) -> list[Sample]:
    """Generate, split, and (optionally) augment; no file IO."""
    ids = [s.class_id for s in catalog]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate class_id in catalog")
    root = RngStream(seed)
    samples: list[Sample] = []
    for spec in catalog:
        originals = [_make_sample(root, spec, i, "original", config, text_source)[0]
                     for i in range(spec.nominal_count)]
        n_train = int(np.floor(spec.nominal_count * config.train_fraction + 0.5))
        order = root.stream("split", spec.class_id).permutation(spec.nominal_count)
        for rank, idx in enumerate(order):
            originals[idx].split = "train" if rank < n_train else "test"
        samples.extend(originals)
        if config.augment:
            for i in range(n_train):
                aug = _make_sample(root, spec, i, "augmented", config, text_source)[0]
                aug.split = "train"
                samples.append(aug)
    return samples


def write_pgm(path: str, pixels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def build_dataset(catalog: list[ClassSpec], seed: int, config: SynthConfig,
                  out_dir: str, text_source=None) -> list[Sample]:
    """Generate the dataset and write images, manifest.jsonl, and catalog.json."""
    samples = build_samples(catalog, seed, config, text_source)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as mf:
        for s in samples:
            s.image_path = os.path.join("images", f"{s.id}.pgm")
            write_pgm(os.path.join(out_dir, s.image_path), s.image.pixels)
            row = {
                "id": s.id, "label": s.label, "split": s.split, "provenance": s.provenance,
                "image": s.image_path, "ring_counts": s.record.ring_counts,
                "mean": list(s.record.mean), "std": list(s.record.std),
                "total_points": s.record.total_points,
                "vlm_text": s.vlm_text, "llm_text": s.llm_text,
            }
            mf.write(json.dumps(row, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "catalog.json"), "w") as cf:
        json.dump({
            "seed": seed,
            "config": asdict(config),
            "config_hash": config.config_hash(),
            "classes": [asdict(spec) for spec in catalog],
        }, cf, indent=2, sort_keys=True)
    return samples


def load_dataset(path: str) -> tuple[list[Sample], SynthConfig]:
    """Read a dataset directory written by build_dataset."""
    with open(os.path.join(path, "catalog.json")) as cf:
        meta = json.load(cf)
    config = SynthConfig(**meta["config"])
    samples = []
    with open(os.path.join(path, "manifest.jsonl")) as mf:
        for line in mf:
            row = json.loads(line)
            pixels = read_pgm(os.path.join(path, row["image"]))
            image = RasterImage(pixels=pixels, extent=config.extent,
                                dot_radius=config.dot_radius)
            record = NumericRecord(ring_counts=row["ring_counts"], mean=tuple(row["mean"]),
                                   std=tuple(row["std"]), total_points=row["total_points"])
            samples.append(Sample(id=row["id"], label=row["label"], image=image,
                                  record=record, vlm_text=row["vlm_text"],
                                  llm_text=row["llm_text"], split=row["split"],
                                  provenance=row["provenance"], image_path=row["image"]))
    return samples, config
