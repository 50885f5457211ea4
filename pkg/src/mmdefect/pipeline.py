"""Top-level estimator API over the training phases, plus the closed-form
statistics baseline used as an independent reference classifier."""

from __future__ import annotations

import os

import numpy as np

from .alignment import (Batchable, PfaSchedule, StageLogger, TrainSettings,
                        predict as _predict, rank_self_similarity, run_fusion,
                        run_pfa, warmup)
from .datasynth import ClassSpec, Sample
from .metrics import MetricsReport
from .model import ModelConfig, MultimodalClassifier, load_params, save_params


class DefectClassifier:
    """fit/predict wrapper over warm-up, progressive alignment, and fusion.

    Follows the scikit-learn estimator conventions (get_params/set_params,
    fit returns self) so the pipeline slots into standard tooling, but takes
    lists of Sample objects rather than feature matrices.
    """

    def __init__(self, d: int = 64, m: int = 8, heads: int = 4, hidden: int = 64,
                 classes: int = 5, canvas: int = 64, fusion: str = "cmaf",
                 alignment: str = "pfa", stage_fractions=(0.2, 0.4, 0.6, 0.8, 1.0),
                 epochs_per_stage: int = 15, warmup_epochs: int = 30,
                 fusion_epochs: int = 60, lr: float = 1e-2, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4, batch_size: int = 10,
                 lr_decay_factor: float = 0.75, lr_decay_interval: int = 15,
                 seed: int = 0):
        self.d = d
        self.m = m
        self.heads = heads
        self.hidden = hidden
        self.classes = classes
        self.canvas = canvas
        self.fusion = fusion
        self.alignment = alignment
        self.stage_fractions = tuple(stage_fractions)
        self.epochs_per_stage = epochs_per_stage
        self.warmup_epochs = warmup_epochs
        self.fusion_epochs = fusion_epochs
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_interval = lr_decay_interval
        self.seed = seed
        self.model_: MultimodalClassifier | None = None
        self.ranked_ = None
        self.warmup_accuracy_ = {}

    _PARAM_NAMES = ["d", "m", "heads", "hidden", "classes", "canvas", "fusion", "alignment",
                    "stage_fractions", "epochs_per_stage", "warmup_epochs", "fusion_epochs",
                    "lr", "betas", "eps", "weight_decay", "batch_size",
                    "lr_decay_factor", "lr_decay_interval", "seed"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "DefectClassifier":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _settings(self) -> TrainSettings:
        return TrainSettings(lr=self.lr, betas=self.betas, eps=self.eps,
                             weight_decay=self.weight_decay, batch_size=self.batch_size,
                             lr_decay_factor=self.lr_decay_factor,
                             lr_decay_interval=self.lr_decay_interval,
                             fusion_epochs=self.fusion_epochs)

    def _schedule(self) -> PfaSchedule:
        if self.alignment == "direct":
            fractions = (1.0,)
        else:
            fractions = self.stage_fractions
        return PfaSchedule(stage_fractions=fractions, epochs_per_stage=self.epochs_per_stage,
                           warmup_epochs=self.warmup_epochs)

    def fit(self, samples: list[Sample], log_path: str | None = None) -> "DefectClassifier":
        if not samples:
            raise ValueError("empty training set")
        if self.alignment not in ("pfa", "direct", "none"):
            raise ValueError(f"unknown alignment mode {self.alignment!r}")
        data = Batchable.from_samples(samples)
        config = ModelConfig(d=self.d, m=self.m, heads=self.heads, hidden=self.hidden,
                             classes=self.classes, canvas=self.canvas, fusion=self.fusion)
        self.model_ = MultimodalClassifier(config, seed=self.seed)
        if log_path and not os.path.exists(log_path):
            with open(log_path, "w") as fh:
                fh.write(f"# seed={self.seed}\n")
                fh.write(f"# adamw betas={self.betas} eps={self.eps:g} "
                         f"weight_decay={self.weight_decay:g} batch_size={self.batch_size}\n")
                fh.write(",".join(StageLogger.FIELDS) + "\n")
        logger = StageLogger(log_path)
        settings = self._settings()
        if self.alignment != "none":
            # "none" switches off the whole alignment schedule, warm-up included
            self.warmup_accuracy_ = warmup(self.model_, data, settings,
                                           self.warmup_epochs, self.seed, logger)
            self.ranked_ = rank_self_similarity(self.model_, data)
            run_pfa(self.model_, data, self.ranked_, self._schedule(), settings,
                    self.seed, logger)
        run_fusion(self.model_, data, settings, self.seed, logger=logger)
        return self

    def predict(self, samples: list[Sample]) -> np.ndarray:
        if self.model_ is None:
            raise RuntimeError("fit (or load) the classifier before predicting")
        return _predict(self.model_, Batchable.from_samples(samples))

    def score(self, samples: list[Sample], task: str = "multi") -> float:
        report = self.report(samples, task)
        return report.macro_f1

    def report(self, samples: list[Sample], task: str = "multi") -> MetricsReport:
        preds = self.predict(samples)
        labels = [s.label for s in samples]
        return MetricsReport.from_predictions(labels, preds, self.classes, task)

    def save(self, path: str) -> None:
        if self.model_ is None:
            raise RuntimeError("nothing to save: classifier not fitted")
        save_params(self.model_.store, path)

    def load(self, path: str) -> "DefectClassifier":
        config = ModelConfig(d=self.d, m=self.m, heads=self.heads, hidden=self.hidden,
                             classes=self.classes, canvas=self.canvas, fusion=self.fusion)
        self.model_ = MultimodalClassifier(config, seed=self.seed)
        load_params(self.model_.store, path)
        return self


class GaussianOracleClassifier:
    """Closed-form reference classifier over the perceived raster.

    Dots are drawn i.i.d. from a class Gaussian, so the number landing in a
    pixel is approximately Poisson with intensity n*q where q is the Gaussian
    mass over the pixel. The lit/unlit image is then a Bernoulli field with
    P(lit) = 1 - exp(-n*q), which stays exact under pixel collisions. The
    unknown per-image dot count n is profiled out by matching the expected
    lit-pixel count to the observed one. Argmax of the profile log-likelihood
    across the class catalog.
    """

    def __init__(self, catalog: list[ClassSpec], extent: float):
        self.catalog = catalog
        self.extent = float(extent)
        self._grid_cache: dict[tuple[int, int], list[np.ndarray]] = {}

    def _pixel_mass(self, shape: tuple[int, int]) -> list[np.ndarray]:
        """Per-class Gaussian mass at each pixel (density at center x area)."""
        if shape in self._grid_cache:
            return self._grid_cache[shape]
        h, w = shape
        e = self.extent
        xs = np.arange(w) / (w - 1) * 2 * e - e
        ys = np.arange(h) / (h - 1) * 2 * e - e
        gx, gy = np.meshgrid(xs, ys)
        points = np.stack([gx.ravel(), gy.ravel()], axis=1)
        area = (2 * e / (w - 1)) * (2 * e / (h - 1))
        masses = []
        for spec in self.catalog:
            inv = np.linalg.inv(spec.sigma_array)
            logdet = float(np.log(np.linalg.det(spec.sigma_array)))
            centered = points - np.asarray(spec.mu)
            quad = np.einsum("ni,ij,nj->n", centered, inv, centered)
            pdf = np.exp(-0.5 * quad) / (2 * np.pi) * np.exp(-0.5 * logdet)
            masses.append((pdf * area).reshape(h, w))
        self._grid_cache[shape] = masses
        return masses

    @staticmethod
    def _profile_count(q: np.ndarray, lit_count: int) -> float:
        """Solve sum(1 - exp(-n q)) = lit_count for the intensity scale n."""
        n = max(float(lit_count), 1.0)
        for _ in range(30):
            expnq = np.exp(-n * q)
            f = float(np.sum(1.0 - expnq)) - lit_count
            df = float(np.sum(q * expnq))
            if df <= 0:
                break
            step = f / df
            n = max(n - step, 1.0)
            if abs(step) < 1e-9 * max(n, 1.0):
                break
        return n

    def predict_one(self, sample: Sample) -> int:
        lit = sample.image.pixels > 0
        lit_count = int(lit.sum())
        best, best_ll = None, -np.inf
        for spec, q in zip(self.catalog, self._pixel_mass(lit.shape)):
            q = np.maximum(q, 1e-300)
            n = self._profile_count(q, lit_count)
            log_p_lit = np.log(-np.expm1(-n * q))
            ll = float(np.sum(np.where(lit, log_p_lit, -n * q)))
            if ll > best_ll:
                best, best_ll = spec.class_id, ll
        return best

    def predict(self, samples: list[Sample]) -> np.ndarray:
        return np.array([self.predict_one(s) for s in samples])

    def report(self, samples: list[Sample], task: str = "multi") -> MetricsReport:
        preds = self.predict(samples)
        labels = [s.label for s in samples]
        n = max(s.class_id for s in self.catalog) + 1
        return MetricsReport.from_predictions(labels, preds, n, task)


# Named deviations from the full pipeline, applied on top of a base config.
# The stride variants share one 75-epoch alignment budget so they differ only
# in curriculum granularity; "noalign" drops the schedule entirely (warm-up
# included) and trains the fusion head on untouched encoders.
ABLATION_VARIANTS = {
    "baseline": {},
    "pfa3": {"alignment": "pfa", "stage_fractions": (1 / 3, 2 / 3, 1.0),
             "epochs_per_stage": 25},
    "direct": {"alignment": "direct", "epochs_per_stage": 75},
    "noalign": {"alignment": "none"},
    "concat": {"fusion": "concat"},
    "nosigmoid": {"fusion": "nosigmoid"},
    "tda-off": {"augment": False},
}


def ablate(base_config, variants=None, seeds: int = 3, catalog=None,
           progress=None) -> tuple[list[dict], dict]:
    """Train each variant with `seeds` seeds and report median macro f1.

    Returns (rows, directions). A variant failure is recorded in its row and
    does not abort the sweep. `progress` is an optional callable taking a
    status string.
    """
    import dataclasses

    from .datasynth import build_samples, default_catalog

    if variants is None:
        variants = list(ABLATION_VARIANTS)
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}")
    if catalog is None:
        catalog = default_catalog(base_config.correlation)
    rows = []
    medians: dict[str, float] = {}
    for name in variants:
        config = dataclasses.replace(base_config, **ABLATION_VARIANTS[name])
        multi, binary = [], []
        error = ""
        try:
            for k in range(seeds):
                seed = config.seed + k
                samples = build_samples(catalog, seed, config.synth_config())
                train = [s for s in samples if s.split == "train"]
                test = guard_test_split(samples)
                run_cfg = dataclasses.replace(config, seed=seed)
                clf = run_cfg.classifier().fit(train)
                multi.append(clf.score(test, "multi"))
                binary.append(clf.score(test, "binary"))
                if progress:
                    progress(f"{name} seed {seed}: multi={multi[-1]:.4f} binary={binary[-1]:.4f}")
        except Exception as exc:  # sweep keeps going; row records the failure
            error = f"{type(exc).__name__}: {exc}"
        row = {"variant": name, "seeds": len(multi),
               "median_multi": float(np.median(multi)) if multi else float("nan"),
               "median_binary": float(np.median(binary)) if binary else float("nan"),
               "multi_scores": multi, "binary_scores": binary, "error": error}
        rows.append(row)
        if multi:
            medians[name] = row["median_multi"]
    directions = ablation_directions(medians)
    return rows, directions


def ablation_directions(medians: dict[str, float], slack: float = 0.01) -> dict:
    """Directional checks on median multi-class macro f1.

    Adjacent steps in the alignment ordering may tie within `slack`; the
    outer gaps (full schedule vs no alignment, gated fusion vs plain
    concatenation, augmentation on vs off) must be strict by `slack`.
    """
    out = {}

    def have(*names):
        return all(n in medians for n in names)

    if have("baseline", "pfa3", "direct", "noalign"):
        chain = [medians[n] for n in ("baseline", "pfa3", "direct", "noalign")]
        out["alignment_order_holds"] = all(a >= b - slack for a, b in zip(chain, chain[1:]))
        out["alignment_outer_strict"] = chain[0] >= chain[-1] + slack
    if have("baseline", "concat"):
        out["gated_fusion_strict"] = medians["baseline"] >= medians["concat"] + slack
    if have("baseline", "tda-off"):
        out["augmentation_strict"] = medians["baseline"] >= medians["tda-off"] + slack
    return out


def guard_test_split(samples: list[Sample]) -> list[Sample]:
    """Test items must be originals; augmented data in test is leakage."""
    test = [s for s in samples if s.split == "test"]
    leaked = [s.id for s in test if s.provenance != "original"]
    if leaked:
        raise ValueError(f"augmented samples present in test split: {leaked[:5]}")
    return test
