"""Surrogate text modalities and the pluggable remote text-source contract.

Two strings accompany every sample: a coarse visual description (the "vlm"
role) derived from image-perceived statistics, and a numeric reasoning
answer (the "llm" role) derived from the recorded statistics. Both are
deterministic functions of (stats, seed). A remote HTTP backend can replace
either surrogate; its wire format is documented on RemoteTextSource.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
import urllib.error
import urllib.request

from .rng import RngStream

PROMPT_VLM = "Please comprehensively describe the distribution and shape of the image"
PROMPT_LLM = ("Given the recorded dot statistics (mean position, spread, ring frequencies), "
              "reason about how far the pattern deviates from a centered, compact cluster.")

# bucket thresholds, data units
SPREAD_TIGHT = 2.2
SPREAD_WIDE = 2.9
ANISO_LOW = 0.85
ANISO_HIGH = 1.18
CENTER_RADIUS = 0.75

_OPENERS = [
    "the image shows",
    "the picture contains",
    "the pattern consists of",
    "the frame presents",
    "the view reveals",
    "the plot depicts",
]
_CLOSERS = [
    "dot density fades toward the edges .",
    "the dots thin out away from the cluster core .",
    "most dots sit close together with scattered outliers .",
    "the point density drops off with distance from the core .",
    "a sparse fringe of dots surrounds the dense middle .",
    "stray dots trail away from the main mass .",
]
_COMPASS = ["right", "upper right", "top", "upper left", "left", "lower left", "bottom", "lower right"]

_VERDICT_LOW = "the deviation from the target center is small , consistent with a compact on-target cluster ."
_VERDICT_MID = "the deviation is noticeable , suggesting some drift in the pattern ."
_VERDICT_HIGH = "the deviation is large , indicating a significant offset or spread ."
_OFFSET_NOTE = "the cluster center is displaced from the origin ."


def _spread_bucket(sx: float, sy: float) -> str:
    s = 0.5 * (sx + sy)
    if s < SPREAD_TIGHT:
        return "tight"
    if s < SPREAD_WIDE:
        return "moderate"
    return "wide"


def _shape_bucket(sx: float, sy: float) -> str:
    ratio = sx / max(sy, 1e-9)
    if ratio < ANISO_LOW:
        return "vertically elongated"
    if ratio > ANISO_HIGH:
        return "horizontally elongated"
    return "round"


def _position_phrase(mx: float, my: float) -> str:
    import math
    if math.hypot(mx, my) < CENTER_RADIUS:
        return "that is centered"
    angle = math.atan2(my, mx)  # x -> right, y -> up
    octant = int(math.floor((angle + math.pi / 8) / (math.pi / 4))) % 8
    return f"shifted toward the {_COMPASS[octant]}"


def _pick(pool: list[str], salt: str, *content: str) -> str:
    """Stable phrasing choice keyed to the content itself, so identical
    descriptions always phrase identically."""
    digest = hashlib.blake2b("|".join((salt,) + content).encode(), digest_size=8).digest()
    return pool[int.from_bytes(digest, "little") % len(pool)]


def surrogate_vlm_text(stats, rng: RngStream) -> str:
    """Qualitative description from binned statistics; no numerals, no labels.

    `rng` is accepted for source-contract compatibility; phrasing is keyed to
    the binned content, so the description is a pure function of what the
    image shows.
    """
    spread = _spread_bucket(stats.std[0], stats.std[1])
    shape = _shape_bucket(stats.std[0], stats.std[1])
    position = _position_phrase(stats.mean[0], stats.mean[1])
    opener = _pick(_OPENERS, "opener", spread, shape, position)
    closer = _pick(_CLOSERS, "closer", spread, shape, position)
    return f"{opener} a {spread} {shape} cluster of dots {position} . {closer}"


def _round10(v: int) -> int:
    return int(round(v / 10.0)) * 10


def surrogate_llm_text(record, rng: RngStream) -> str:
    """Reasoning answer with quantized numerals; never names a class."""
    mx, my = record.mean
    sx, sy = record.std
    inner = _round10(sum(record.ring_counts[:4]))
    total = _round10(record.total_points)
    s = 0.5 * (sx + sy)
    if s < SPREAD_TIGHT:
        verdict = _VERDICT_LOW
    elif s < SPREAD_WIDE:
        verdict = _VERDICT_MID
    else:
        verdict = _VERDICT_HIGH
    note = f" {_OFFSET_NOTE}" if (mx * mx + my * my) ** 0.5 > 1.5 else ""
    return (f"the recorded mean position is {mx:.1f} , {my:.1f} and the recorded spread is "
            f"{sx:.1f} by {sy:.1f} . roughly {total} dots were recorded , with {inner} "
            f"in the inner bands . {verdict}{note}")


# -- tokenizer -------------------------------------------------------------

MAX_LEN = 32
PAD_ID = 0
UNK_ID = 1
_TOKEN = re.compile(r"-?\d+\.\d+|\d+|[a-z]+|\.")


def _value_token(v: float) -> str:
    b = min(max(round(v * 4.0) / 4.0, -16.0), 16.0)
    if b == 0.0:
        b = 0.0
    return f"<v{b:+.2f}>"


def _count_token(v: int) -> str:
    b = min(max(_round10(v), 0), 1000)
    return f"<c{b}>"


def _words(text: str) -> list[str]:
    out = []
    for tok in _TOKEN.findall(text.lower()):
        if "." in tok and tok != ".":
            out.append(_value_token(float(tok)))
        elif tok.isdigit():
            out.append(_count_token(int(tok)))
        else:
            out.append(tok)
    return out


def build_vocab() -> dict[str, int]:
    """Closed vocabulary over the template grammar plus numeral buckets."""
    words: set[str] = {"."}
    corpus = (_OPENERS + _CLOSERS + [_VERDICT_LOW, _VERDICT_MID, _VERDICT_HIGH, _OFFSET_NOTE]
              + ["a tight moderate wide round vertically horizontally elongated cluster of dots",
                 "that is centered shifted toward the " + " ".join(_COMPASS),
                 "the recorded mean position is and the recorded spread is by roughly dots "
                 "were recorded with in the inner bands"])
    for text in corpus:
        for tok in _words(text):
            if not tok.startswith("<"):
                words.add(tok)
    vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    for i in range(-64, 65):
        vocab[_value_token(i / 4.0)] = len(vocab)
    for c in range(0, 1001, 10):
        vocab[_count_token(c)] = len(vocab)
    for w in sorted(words):
        vocab[w] = len(vocab)
    if len(vocab) > 512:
        raise RuntimeError(f"vocabulary grew past 512 entries ({len(vocab)})")
    return vocab


_VOCAB: dict[str, int] | None = None


def vocab() -> dict[str, int]:
    global _VOCAB
    if _VOCAB is None:
        _VOCAB = build_vocab()
    return _VOCAB


def vocab_size() -> int:
    return len(vocab())


def tokenize(text: str, max_len: int = MAX_LEN) -> list[int]:
    """Lowercase, split, map numerals to buckets, pad/truncate to max_len."""
    v = vocab()
    ids = [v.get(tok, UNK_ID) for tok in _words(text)][:max_len]
    return ids + [PAD_ID] * (max_len - len(ids))


# -- text sources ----------------------------------------------------------


class TextSourceError(RuntimeError):
    pass


class SurrogateTextSource:
    """Deterministic in-process source; identity tag 'surrogate'."""

    identity = "surrogate"

    def __init__(self, seed: int = 0):
        self._root = RngStream(seed)

    def generate(self, role: str, payload, prompt: str = "") -> str:
        key = f"{payload.mean[0]:.6f},{payload.mean[1]:.6f},{payload.std[0]:.6f},{payload.std[1]:.6f}"
        rng = self._root.stream(f"text/{role}/{key}")
        if role == "vlm":
            return surrogate_vlm_text(payload, rng)
        if role == "llm":
            return surrogate_llm_text(payload, rng)
        raise ValueError(f"unknown text role {role!r}")


class RemoteTextSource:
    """HTTP backend speaking a one-shot JSON request/response.

    Request:  POST <endpoint> with {"role": "vlm"|"llm", "prompt": str,
              "stats": {"mean": [x, y], "std": [x, y],
                        "ring_counts": [...], "total_points": int}}
    Response: 200 with {"text": "..."}.

    Retries with exponential backoff; on exhaustion either raises
    TextSourceError or falls back to the surrogate when fallback=True.
    """

    def __init__(self, endpoint: str, fallback: bool = True, timeout: float = 5.0,
                 retries: int = 3, seed: int = 0):
        self.endpoint = endpoint
        self.identity = endpoint
        self.fallback = fallback
        self.timeout = timeout
        self.retries = retries
        self._surrogate = SurrogateTextSource(seed)

    def generate(self, role: str, payload, prompt: str = "") -> str:
        body = json.dumps({
            "role": role,
            "prompt": prompt or (PROMPT_VLM if role == "vlm" else PROMPT_LLM),
            "stats": {
                "mean": list(payload.mean), "std": list(payload.std),
                "ring_counts": list(payload.ring_counts),
                "total_points": int(payload.total_points),
            },
        }).encode()
        last_error = None
        for attempt in range(self.retries):
            try:
                req = urllib.request.Request(self.endpoint, data=body,
                                             headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    if resp.status != 200:
                        raise TextSourceError(f"remote returned status {resp.status}")
                    return json.loads(resp.read())["text"]
            except (urllib.error.URLError, OSError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(0.2 * 2 ** attempt)
        if self.fallback:
            return self._surrogate.generate(role, payload, prompt)
        raise TextSourceError(f"remote text source failed after {self.retries} attempts: {last_error}")
