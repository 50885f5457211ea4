"""Encoders and the attention-gated fusion head.

Three token-sequence encoders (image conv stack, two unshared text
encoders) emit (m, d) token blocks in a shared width d. The fusion head
cross-attends VLM tokens (Q) against LLM tokens (K), mixes image tokens
(V), and produces three sigmoid gates per token that weight a three-way
sum of the raw modality inputs. A small MLP over the mean-pooled fused
tokens yields class logits.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import ParamStore
from .rng import RngStream
from .tensor import Tensor


@dataclass
class ModelConfig:
    d: int = 64            # token width
    m: int = 8             # tokens per modality
    heads: int = 4
    hidden: int = 64       # classifier hidden width
    classes: int = 5
    canvas: int = 64
    max_len: int = 32
    vocab_size: int = 0    # filled from the tokenizer when 0
    fusion: str = "cmaf"   # cmaf | nosigmoid | concat

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError("token width must be divisible by head count")
        if self.canvas % 8 != 0:
            raise ValueError("canvas must be divisible by 8 (three stride-2 convs)")
        if self.m != _POOL_GRID[0] * _POOL_GRID[1]:
            raise ValueError(f"tokens per modality must equal the image patch "
                             f"grid size {_POOL_GRID[0] * _POOL_GRID[1]}")
        if self.fusion not in ("cmaf", "nosigmoid", "concat"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")

    @property
    def r(self) -> int:
        return self.d // self.heads


_CONV_CHANNELS = [1, 8, 16, 32]
_POOL_GRID = (2, 4)  # rows x cols of image patches; product == m


class FusionError(ValueError):
    pass


def _uniform_init(rng: RngStream, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform_range(-bound, bound, size=shape).astype(np.float32)


class MultimodalClassifier:
    """Owns the parameter store and all forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.vocab_size == 0:
            from . import textbridge
            config.vocab_size = textbridge.vocab_size()
        self.config = config
        self.store = ParamStore()
        rng = RngStream(seed).stream("init")
        d, m, L, V = config.d, config.m, config.max_len, config.vocab_size

        for i in range(3):
            cin, cout = _CONV_CHANNELS[i], _CONV_CHANNELS[i + 1]
            self.store.add(f"img/conv{i}_w", _uniform_init(rng, (cout, cin, 3, 3), cin * 9))
            self.store.add(f"img/conv{i}_b", np.zeros(cout, dtype=np.float32))
        # per-patch (unshared) projection: pooled features keep where-info
        self.store.add("img/proj_w", _uniform_init(rng, (m, _CONV_CHANNELS[-1], d),
                                                   _CONV_CHANNELS[-1]))
        self.store.add("img/proj_b", np.zeros(d, dtype=np.float32))

        for branch in ("vlm", "llm"):
            p = f"txt_{branch}"
            self.store.add(f"{p}/emb", _uniform_init(rng, (V, d), d))
            self.store.add(f"{p}/pos", _uniform_init(rng, (L, d), d))
            self.store.add(f"{p}/mlp1_w", _uniform_init(rng, (d, d), d))
            self.store.add(f"{p}/mlp1_b", np.zeros(d, dtype=np.float32))
            self.store.add(f"{p}/mlp2_w", _uniform_init(rng, (d, d), d))
            self.store.add(f"{p}/mlp2_b", np.zeros(d, dtype=np.float32))
            self.store.add(f"{p}/pool", _uniform_init(rng, (m, L), L))

        if config.fusion != "concat":
            for name in ("q", "k", "v"):
                self.store.add(f"cmaf/{name}_w", _uniform_init(rng, (d, d), d))
            self.store.add("cmaf/gate_w", _uniform_init(rng, (d, 3), d))
            self.store.add("cmaf/gate_b", np.zeros(3, dtype=np.float32))
            cls_in = d
        else:
            cls_in = 3 * d
        self.store.add("cls/w1", _uniform_init(rng, (cls_in, config.hidden), cls_in))
        self.store.add("cls/b1", np.zeros(config.hidden, dtype=np.float32))
        self.store.add("cls/w2", _uniform_init(rng, (config.hidden, config.classes), config.hidden))
        self.store.add("cls/b2", np.zeros(config.classes, dtype=np.float32))
        self.store.add("align/log_tau", np.array([np.log(0.07)], dtype=np.float32))

    # -- encoders ----------------------------------------------------------

    def encode_image(self, images: np.ndarray) -> Tensor:
        """images: (B, H, W) or (B, 1, H, W) in [0, 1] -> tokens (B, m, d)."""
        x = np.asarray(images, dtype=np.float32)
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[2] != self.config.canvas or x.shape[3] != self.config.canvas:
            raise T.ShapeError(f"canvas mismatch: model expects {self.config.canvas}, got {x.shape[2:]}")
        h = Tensor(x)
        for i in range(3):
            h = T.relu(T.conv2d(h, self.store[f"img/conv{i}_w"], self.store[f"img/conv{i}_b"]))
        B, C, gh, gw = h.shape
        gr, gc = _POOL_GRID
        h = T.reshape(h, (B, C, gr, gh // gr, gc, gw // gc))
        h = T.tmean(h, axis=(3, 5))                      # (B, C, gr, gc)
        h = T.reshape(h, (B, C, gr * gc))
        h = T.transpose(h, (0, 2, 1))                    # (B, m, C)
        h = T.reshape(h, (B, gr * gc, 1, C))
        h = T.matmul(h, self.store["img/proj_w"])        # (B, m, 1, d) per patch
        h = T.reshape(h, (B, gr * gc, self.config.d))
        return T.add(h, self.store["img/proj_b"])

    def encode_text(self, ids: np.ndarray, branch: str) -> Tensor:
        """ids: (B, L) or (L,) token ids -> tokens (B, m, d)."""
        if branch not in ("vlm", "llm"):
            raise ValueError(f"unknown text branch {branch!r}")
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        p = f"txt_{branch}"
        h = T.add(T.embedding(self.store[f"{p}/emb"], ids), self.store[f"{p}/pos"])
        h = T.relu(T.add(T.matmul(h, self.store[f"{p}/mlp1_w"]), self.store[f"{p}/mlp1_b"]))
        h = T.add(T.matmul(h, self.store[f"{p}/mlp2_w"]), self.store[f"{p}/mlp2_b"])
        return T.matmul(self.store[f"{p}/pool"], h)      # (m,L) x (B,L,d) -> (B,m,d)

    def pooled(self, tokens: Tensor) -> Tensor:
        """Mean over tokens, unit-normalized: (B, m, d) -> (B, d)."""
        return T.l2_normalize(T.tmean(tokens, axis=-2))

    # -- fusion ------------------------------------------------------------

    def _split_heads(self, x: Tensor) -> Tensor:
        B, m, d = x.shape
        h, r = self.config.heads, self.config.r
        return T.transpose(T.reshape(x, (B, m, h, r)), (0, 2, 1, 3))  # (B, h, m, r)

    def cmaf_forward(self, z_vlm: Tensor, z_llm: Tensor, z_img: Tensor):
        """Returns (fused tokens (B,m,d), gates (B,m,3) or None, logits (B,classes))."""
        shapes = {t.shape for t in (z_vlm, z_llm, z_img)}
        if len(shapes) != 1:
            raise FusionError(f"modality token shapes differ: {sorted(shapes)}")
        cfg = self.config
        if cfg.fusion == "concat":
            flat = T.concat([self.pooled(z_vlm), self.pooled(z_llm), self.pooled(z_img)], axis=-1)
            return None, None, self._classify(flat)

        q, k, v = z_vlm, z_llm, z_img
        qp = self._split_heads(T.matmul(q, self.store["cmaf/q_w"]))
        kp = self._split_heads(T.matmul(k, self.store["cmaf/k_w"]))
        vp = self._split_heads(T.matmul(v, self.store["cmaf/v_w"]))
        attn = T.softmax_rows(T.mul(T.matmul(qp, T.swap_last(kp)), 1.0 / np.sqrt(cfg.r)))
        mixed = T.matmul(attn, vp)                            # (B, h, m, r)
        B, h, m, r = mixed.shape
        context = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (B, m, h * r))
        if cfg.fusion == "nosigmoid":
            gates = None
            fused = T.mul(T.add(T.add(q, k), v), 1.0 / 3.0)
        else:
            gates = T.sigmoid(T.add(T.matmul(context, self.store["cmaf/gate_w"]),
                                    self.store["cmaf/gate_b"]))
            fused = T.add(T.add(T.mul(T.narrow(gates, 2, 0, 1), q),
                                T.mul(T.narrow(gates, 2, 1, 1), k)),
                          T.mul(T.narrow(gates, 2, 2, 1), v))
        return fused, gates, self._classify(T.tmean(fused, axis=-2))

    def _classify(self, features: Tensor) -> Tensor:
        h = T.relu(T.add(T.matmul(features, self.store["cls/w1"]), self.store["cls/b1"]))
        return T.add(T.matmul(h, self.store["cls/w2"]), self.store["cls/b2"])

    def forward(self, images, vlm_ids, llm_ids):
        z_img = self.encode_image(images)
        z_vlm = self.encode_text(vlm_ids, "vlm")
        z_llm = self.encode_text(llm_ids, "llm")
        return self.cmaf_forward(z_vlm, z_llm, z_img)

    @property
    def tau(self) -> Tensor:
        return T.exp(self.store["align/log_tau"])


# -- checkpoint format -----------------------------------------------------

MAGIC = b"ASEMM"
FORMAT_VERSION = 1
_DTYPES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES_INV = {0: np.float32, 1: np.float64}


class CheckpointError(RuntimeError):
    pass


def save_params(store: ParamStore, path: str, include_optimizer: bool = True) -> None:
    """Versioned binary dump with a trailing 64-bit content checksum."""
    entries: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in store.params.items()]
    if include_optimizer:
        entries += [(f"adam_m/{n}", a) for n, a in store.m.items()]
        entries += [(f"adam_v/{n}", a) for n, a in store.v.items()]
        entries.append(("adam_step", np.array([store.step_count], dtype=np.float64)))
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", FORMAT_VERSION, len(entries))
    for name, arr in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<BB", _DTYPES[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    checksum = hashlib.blake2b(bytes(blob), digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob) + checksum)


def load_params(store: ParamStore, path: str) -> None:
    """Restore tensors bitwise into an existing store; strict shape checks."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 16 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    body, checksum = raw[:-8], raw[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != checksum:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", body, off)
    off += 8
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        dtype_tag, rank = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        dtype = np.dtype(_DTYPES_INV[dtype_tag])
        nbytes = int(np.prod(shape)) * dtype.itemsize if rank else dtype.itemsize
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(body, dtype=dtype, count=size, offset=off).reshape(shape)
        off += size * dtype.itemsize
        if name == "adam_step":
            store.step_count = int(arr[0])
        elif name.startswith("adam_m/") or name.startswith("adam_v/"):
            target = store.m if name.startswith("adam_m/") else store.v
            key = name.split("/", 1)[1]
            if key in target:
                if target[key].shape != arr.shape:
                    raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                          f"{arr.shape} vs {target[key].shape}")
                target[key] = arr.astype(target[key].dtype).copy()
        else:
            if name not in store.params:
                raise CheckpointError(f"{path}: unknown tensor {name!r} for this architecture")
            param = store.params[name]
            if param.data.shape != arr.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                      f"checkpoint {arr.shape} vs model {param.data.shape}")
            param.data = arr.copy()
