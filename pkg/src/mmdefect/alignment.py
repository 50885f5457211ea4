"""Training phases: probe warm-up, similarity-ranked progressive alignment,
and the fused-classifier phase.

The contrastive objective pulls each sample's image embedding toward its own
text embeddings against the rest of the batch. Alignment runs over a growing
prefix of the train set ordered by ascending self-similarity, so the pairs
the encoders currently agree on least are trained first.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import textbridge
from .datasynth import Sample
from .model import MultimodalClassifier
from .optim import ParamStore, adamw_step
from .rng import RngStream
from .tensor import Tensor


@dataclass
class PfaSchedule:
    stage_fractions: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    epochs_per_stage: int = 15
    warmup_epochs: int = 30

    def __post_init__(self):
        f = tuple(self.stage_fractions)
        if not f or f[-1] != 1.0:
            raise ValueError("stage fractions must end at 1.0")
        if any(not (0.0 < a <= 1.0) for a in f) or any(b <= a for a, b in zip(f, f[1:])):
            raise ValueError("stage fractions must be strictly increasing in (0, 1]")
        self.stage_fractions = f


@dataclass
class TrainSettings:
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 10
    lr_decay_factor: float = 0.75
    lr_decay_interval: int = 15
    fusion_epochs: int = 60


@dataclass
class RankedOrder:
    ids: list[str]            # ascending self-similarity, ties broken by id
    scores: dict[str, float]


class DivergenceError(RuntimeError):
    pass


class StageLogger:
    """Append-only CSV of per-epoch training state."""

    FIELDS = ["stage", "epoch", "phase", "active_size", "train_loss", "pend_loss", "tau", "lr"]

    def __init__(self, path: str | None):
        self.path = path
        self.rows: list[dict] = []
        if path and not os.path.exists(path):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.FIELDS)

    def log(self, **row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row.get(k, "") for k in self.FIELDS])


@dataclass
class Batchable:
    """Dense arrays for a sample list, built once per phase."""

    ids: list[str]
    images: np.ndarray      # (N, H, W) in [0, 1]
    vlm_ids: np.ndarray     # (N, L)
    llm_ids: np.ndarray
    labels: np.ndarray      # (N,)

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "Batchable":
        return cls(
            ids=[s.id for s in samples],
            images=np.stack([s.image.pixels for s in samples]).astype(np.float32) / 255.0,
            vlm_ids=np.array([textbridge.tokenize(s.vlm_text) for s in samples]),
            llm_ids=np.array([textbridge.tokenize(s.llm_text) for s in samples]),
            labels=np.array([s.label for s in samples]),
        )

    def take(self, idx) -> "Batchable":
        return Batchable(ids=[self.ids[i] for i in idx], images=self.images[idx],
                         vlm_ids=self.vlm_ids[idx], llm_ids=self.llm_ids[idx],
                         labels=self.labels[idx])

    def __len__(self):
        return len(self.ids)


def _check_loss(value: float, context: str) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss during {context}")
    return value


def _batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# -- warm-up ---------------------------------------------------------------


def warmup(model: MultimodalClassifier, data: Batchable, settings: TrainSettings,
           epochs: int, seed: int, logger: StageLogger | None = None) -> dict[str, float]:
    """Train each encoder under a temporary linear probe; probes are discarded.

    Returns final per-branch probe train accuracy.
    """
    if epochs <= 0:
        return {}
    rng = RngStream(seed).stream("warmup")
    probes = ParamStore()
    init = RngStream(seed).stream("warmup/probe-init")
    d, c = model.config.d, model.config.classes
    bound = 1.0 / np.sqrt(d)
    for branch in ("img", "vlm", "llm"):
        probes.add(f"{branch}_w", init.uniform_range(-bound, bound, size=(d, c)).astype(np.float32))
        probes.add(f"{branch}_b", np.zeros(c, dtype=np.float32))
    encoder_names = model.store.subset("img/") + model.store.subset("txt_")
    onehot = np.eye(c)
    accuracy = {}
    for epoch in range(epochs):
        losses = []
        correct = {b: 0 for b in ("img", "vlm", "llm")}
        for idx in _batches(len(data), settings.batch_size, rng.stream("epoch", epoch)):
            batch = data.take(idx)
            targets = onehot[batch.labels]
            pooled = {
                "img": model.pooled(model.encode_image(batch.images)),
                "vlm": model.pooled(model.encode_text(batch.vlm_ids, "vlm")),
                "llm": model.pooled(model.encode_text(batch.llm_ids, "llm")),
            }
            loss = None
            for branch, z in pooled.items():
                logits = T.add(T.matmul(z, probes[f"{branch}_w"]), probes[f"{branch}_b"])
                correct[branch] += int((logits.data.argmax(axis=1) == batch.labels).sum())
                term = T.cross_entropy(logits, targets)
                loss = term if loss is None else T.add(loss, term)
            model.store.zero_grad()
            probes.zero_grad()
            loss.backward()
            adamw_step(model.store, settings.lr, settings.betas, settings.eps,
                       settings.weight_decay, names=encoder_names)
            adamw_step(probes, settings.lr, settings.betas, settings.eps, settings.weight_decay)
            losses.append(_check_loss(float(loss.data), f"warmup epoch {epoch}"))
        accuracy = {b: correct[b] / len(data) for b in correct}
        if logger:
            logger.log(stage="warmup", epoch=epoch, phase="probe", active_size=len(data),
                       train_loss=f"{np.mean(losses):.6f}", pend_loss="",
                       tau=f"{float(model.tau.data[0]):.6f}", lr=f"{settings.lr:g}")
    return accuracy


# -- self-similarity ranking ----------------------------------------------


def _pooled_all(model: MultimodalClassifier, data: Batchable, chunk: int = 64):
    outs = {"img": [], "vlm": [], "llm": []}
    for start in range(0, len(data), chunk):
        sl = slice(start, start + chunk)
        outs["img"].append(model.pooled(model.encode_image(data.images[sl])).data)
        outs["vlm"].append(model.pooled(model.encode_text(data.vlm_ids[sl], "vlm")).data)
        outs["llm"].append(model.pooled(model.encode_text(data.llm_ids[sl], "llm")).data)
    return {k: np.concatenate(v) for k, v in outs.items()}


def rank_self_similarity(model: MultimodalClassifier, data: Batchable) -> RankedOrder:
    """Ascending mean cosine between each sample's image and text embeddings."""
    z = _pooled_all(model, data)
    norms = {k: np.linalg.norm(v, axis=1) for k, v in z.items()}
    if any(np.any(n == 0) for n in norms.values()):
        raise ValueError("zero-norm pooled embedding: encoder collapse")
    sim_v = np.sum(z["img"] * z["vlm"], axis=1)
    sim_l = np.sum(z["img"] * z["llm"], axis=1)
    scores = 0.5 * (sim_v + sim_l)
    order = sorted(range(len(data)), key=lambda i: (scores[i], data.ids[i]))
    return RankedOrder(ids=[data.ids[i] for i in order],
                       scores={data.ids[i]: float(scores[i]) for i in range(len(data))})


# -- contrastive loss ------------------------------------------------------


def itc_loss(z_img: Tensor, z_text: Tensor, tau: Tensor, direction: str = "both") -> Tensor:
    """Symmetric in-batch contrastive loss over unit-norm pooled embeddings.

    Row b of the similarity matrix holds s(I_b, T_*); the match distribution
    is the diagonal. `direction` restricts to one softmax direction.
    """
    if z_img.shape != z_text.shape:
        raise T.ShapeError(f"embedding shapes differ: {z_img.shape} vs {z_text.shape}")
    B = z_img.shape[0]
    sim = T.matmul(z_img, T.swap_last(z_text))
    logits = T.mul(sim, T.power(tau, -1.0))
    eye = np.eye(B)
    i2t = T.cross_entropy(logits, eye)
    t2i = T.cross_entropy(T.swap_last(logits), eye)
    if direction == "i2t":
        return i2t
    if direction == "t2i":
        return t2i
    return T.mul(T.add(i2t, t2i), 0.5)


def itc_total(model: MultimodalClassifier, batch: Batchable, parts=("llm", "vlm")) -> Tensor:
    """Sum of per-pair contrastive losses for the requested text branches."""
    tau = model.tau
    z_img = model.pooled(model.encode_image(batch.images))
    loss = None
    for branch in parts:
        ids = batch.llm_ids if branch == "llm" else batch.vlm_ids
        z_txt = model.pooled(model.encode_text(ids, branch))
        term = itc_loss(z_img, z_txt, tau)
        loss = term if loss is None else T.add(loss, term)
    return loss


# -- progressive alignment -------------------------------------------------


def active_sizes(n: int, fractions) -> list[int]:
    return [int(np.floor(f * n + 0.5)) for f in fractions]


def run_pfa(model: MultimodalClassifier, data: Batchable, ranked: RankedOrder,
            schedule: PfaSchedule, settings: TrainSettings, seed: int,
            logger: StageLogger | None = None) -> None:
    """Stagewise contrastive alignment over a growing ranked prefix.

    Within each stage the first half of the epochs trains the image-LLM pair
    only, the remainder trains both pairs. The temperature trains jointly.
    The not-yet-active remainder is logged as held-out loss.
    """
    rng = RngStream(seed).stream("pfa")
    index_of = {sid: i for i, sid in enumerate(data.ids)}
    ranked_idx = [index_of[sid] for sid in ranked.ids]
    base_names = model.store.subset("img/") + ["align/log_tau"]
    llm_epochs = int(np.ceil(schedule.epochs_per_stage / 2))
    sizes = active_sizes(len(data), schedule.stage_fractions)
    for stage, size in enumerate(sizes):
        active = data.take(ranked_idx[:size])
        pend = data.take(ranked_idx[size:])
        for epoch in range(schedule.epochs_per_stage):
            parts = ("llm",) if epoch < llm_epochs else ("llm", "vlm")
            names = base_names + [n for b in parts
                                  for n in model.store.subset(f"txt_{b}/")]
            losses = []
            for idx in _batches(len(active), settings.batch_size,
                                rng.stream(f"stage{stage}/epoch", epoch)):
                loss = itc_total(model, active.take(idx), parts)
                model.store.zero_grad()
                loss.backward()
                adamw_step(model.store, settings.lr, settings.betas, settings.eps,
                           settings.weight_decay, names=names)
                losses.append(_check_loss(float(loss.data), f"pfa stage {stage} epoch {epoch}"))
            if logger:
                pend_loss = ""
                if epoch == schedule.epochs_per_stage - 1 and len(pend) >= 2:
                    vals = [float(itc_total(model, pend.take(i)).data)
                            for i in _batches(len(pend), settings.batch_size,
                                              rng.stream(f"stage{stage}/pend", epoch))
                            if len(i) >= 2]
                    pend_loss = f"{np.mean(vals):.6f}" if vals else ""
                logger.log(stage=f"pfa{stage}", epoch=epoch, phase="+".join(parts),
                           active_size=len(active), train_loss=f"{np.mean(losses):.6f}",
                           pend_loss=pend_loss, tau=f"{float(model.tau.data[0]):.6f}",
                           lr=f"{settings.lr:g}")


# -- fusion phase ----------------------------------------------------------


def encode_frozen(model: MultimodalClassifier, data: Batchable, chunk: int = 64):
    """Token embeddings for all samples with encoders held fixed."""
    outs = {"img": [], "vlm": [], "llm": []}
    for start in range(0, len(data), chunk):
        sl = slice(start, start + chunk)
        outs["img"].append(model.encode_image(data.images[sl]).data)
        outs["vlm"].append(model.encode_text(data.vlm_ids[sl], "vlm").data)
        outs["llm"].append(model.encode_text(data.llm_ids[sl], "llm").data)
    return {k: np.concatenate(v) for k, v in outs.items()}


def fusion_lr(settings: TrainSettings, epoch: int) -> float:
    return settings.lr * settings.lr_decay_factor ** (epoch // settings.lr_decay_interval)


def run_fusion(model: MultimodalClassifier, data: Batchable, settings: TrainSettings,
               seed: int, epochs: int | None = None,
               logger: StageLogger | None = None) -> None:
    """Cross-entropy training of the fusion head and classifier.

    Encoders are frozen; their token outputs are precomputed once. Learning
    rate steps down by the decay factor at each decay interval.
    """
    epochs = settings.fusion_epochs if epochs is None else epochs
    if epochs <= 0:
        return
    rng = RngStream(seed).stream("fusion")
    cached = encode_frozen(model, data)
    # constant-gate fusion never routes gradient through the attention params
    names = model.store.subset("cls/")
    if model.config.fusion == "cmaf":
        names += model.store.subset("cmaf/")
    onehot = np.eye(model.config.classes)
    for epoch in range(epochs):
        lr = fusion_lr(settings, epoch)
        losses = []
        for idx in _batches(len(data), settings.batch_size, rng.stream("epoch", epoch)):
            _, _, logits = model.cmaf_forward(Tensor(cached["vlm"][idx]),
                                              Tensor(cached["llm"][idx]),
                                              Tensor(cached["img"][idx]))
            loss = T.cross_entropy(logits, onehot[data.labels[idx]])
            model.store.zero_grad()
            loss.backward()
            adamw_step(model.store, lr, settings.betas, settings.eps,
                       settings.weight_decay, names=names)
            losses.append(_check_loss(float(loss.data), f"fusion epoch {epoch}"))
        if logger:
            logger.log(stage="fusion", epoch=epoch, phase="ce", active_size=len(data),
                       train_loss=f"{np.mean(losses):.6f}", pend_loss="",
                       tau=f"{float(model.tau.data[0]):.6f}", lr=f"{lr:g}")


def predict(model: MultimodalClassifier, data: Batchable, chunk: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(data), chunk):
        sl = slice(start, start + chunk)
        _, _, logits = model.cmaf_forward(model.encode_text(data.vlm_ids[sl], "vlm"),
                                          model.encode_text(data.llm_ids[sl], "llm"),
                                          model.encode_image(data.images[sl]))
        preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds)
