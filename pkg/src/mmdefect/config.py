"""Run configuration: a flat key=value file with sections, strict validation,
and a content hash stamped into every output artifact.

Schema (defaults shown):

    [run]
    seed = 0
    task = multi             ; multi | binary
    text_source = surrogate  ; surrogate | remote
    deterministic = true

    [data]
    canvas = 64
    extent = 16.0
    rings = 16
    dots_per_image = 500
    dot_jitter = 100
    dot_radius = 0
    dropout = 0.15
    record_noise = 0.1
    augment = true
    correlation = 0.0

    [model]
    d = 64
    m = 8
    heads = 4
    hidden = 64
    fusion = cmaf            ; cmaf | nosigmoid | concat

    [schedule]
    alignment = pfa          ; pfa | direct | none
    stage_fractions = 0.2,0.4,0.6,0.8,1.0
    epochs_per_stage = 15
    warmup_epochs = 30
    fusion_epochs = 60

    [optimizer]
    lr = 0.01
    betas = 0.9,0.999
    eps = 1e-8
    weight_decay = 0.0001
    batch_size = 10
    lr_decay_factor = 0.75
    lr_decay_interval = 15

Overrides use dotted keys, e.g. ``data.canvas=32``.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _parse_floats(raw: str) -> tuple:
    return tuple(float(p) for p in raw.split(","))


@dataclass
class RunConfig:
    seed: int = 0
    task: str = "multi"
    text_source: str = "surrogate"
    deterministic: bool = True

    canvas: int = 64
    extent: float = 16.0
    rings: int = 16
    dots_per_image: int = 500
    dot_jitter: int = 100
    dot_radius: int = 0
    dropout: float = 0.15
    record_noise: float = 0.1
    augment: bool = True
    correlation: float = 0.0

    d: int = 64
    m: int = 8
    heads: int = 4
    hidden: int = 64
    fusion: str = "cmaf"

    alignment: str = "pfa"
    stage_fractions: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    epochs_per_stage: int = 15
    warmup_epochs: int = 30
    fusion_epochs: int = 60

    lr: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 10
    lr_decay_factor: float = 0.75
    lr_decay_interval: int = 15

    # section -> {key: parser}; doubles as the schema for rejection of unknowns
    _SCHEMA = {
        "run": {"seed": int, "task": str, "text_source": str, "deterministic": _parse_bool},
        "data": {"canvas": int, "extent": float, "rings": int, "dots_per_image": int,
                 "dot_jitter": int, "dot_radius": int, "dropout": float,
                 "record_noise": float, "augment": _parse_bool, "correlation": float},
        "model": {"d": int, "m": int, "heads": int, "hidden": int, "fusion": str},
        "schedule": {"alignment": str, "stage_fractions": _parse_floats,
                     "epochs_per_stage": int, "warmup_epochs": int, "fusion_epochs": int},
        "optimizer": {"lr": float, "betas": _parse_floats, "eps": float,
                      "weight_decay": float, "batch_size": int,
                      "lr_decay_factor": float, "lr_decay_interval": int},
    }

    def __post_init__(self):
        self.stage_fractions = tuple(self.stage_fractions)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.task in ("multi", "binary"), f"task must be multi or binary, got {self.task!r}"),
            (self.text_source in ("surrogate", "remote"),
             f"text_source must be surrogate or remote, got {self.text_source!r}"),
            (self.fusion in ("cmaf", "nosigmoid", "concat"),
             f"fusion must be cmaf, nosigmoid, or concat, got {self.fusion!r}"),
            (self.alignment in ("pfa", "direct", "none"),
             f"alignment must be pfa, direct, or none, got {self.alignment!r}"),
            (self.canvas >= 16 and self.canvas % 8 == 0, "canvas must be a multiple of 8, >= 16"),
            (self.d % self.heads == 0, "d must be divisible by heads"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (self.record_noise >= 0.0, "record_noise must be nonnegative"),
            (self.lr > 0 and self.eps > 0 and self.batch_size > 0, "lr, eps, batch_size must be positive"),
            (len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas),
             "betas must be two values in [0, 1)"),
            (0 < self.lr_decay_factor <= 1 and self.lr_decay_interval > 0,
             "decay factor in (0, 1], interval positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if (not self.stage_fractions or self.stage_fractions[-1] != 1.0
                or any(b <= a for a, b in zip(self.stage_fractions, self.stage_fractions[1:]))
                or any(not (0 < f <= 1) for f in self.stage_fractions)):
            raise ConfigError("stage_fractions must be strictly increasing in (0, 1], ending at 1.0")
        for name in ("epochs_per_stage", "warmup_epochs", "fusion_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")

    # -- construction --------------------------------------------------

    @classmethod
    def _field_section(cls) -> dict:
        return {key: section for section, keys in cls._SCHEMA.items() for key in keys}

    @classmethod
    def from_file(cls, path: str, overrides: list[str] | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        values = {}
        for section in parser.sections():
            if section not in cls._SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cls._SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                try:
                    values[key] = cls._SCHEMA[section][key](raw)
                except ConfigError:
                    raise
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
        config = cls(**values)
        if overrides:
            config = config.with_overrides(overrides)
        return config

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings on top of this config."""
        sections = self._field_section()
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must look like section.key=value: {item!r}")
            dotted, raw = item.split("=", 1)
            if "." in dotted:
                section, key = dotted.split(".", 1)
            else:
                section, key = sections.get(dotted, ""), dotted
            if section not in self._SCHEMA or key not in self._SCHEMA[section]:
                raise ConfigError(f"unknown config key {dotted!r}")
            try:
                values[key] = self._SCHEMA[section][key](raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {dotted}: {raw!r}") from exc
        return RunConfig(**values)

    # -- serialization ---------------------------------------------------

    def as_sections(self) -> dict:
        sections = self._field_section()
        out = {name: {} for name in self._SCHEMA}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            out[sections[f.name]][f.name] = text
        return out

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            for section, keys in self.as_sections().items():
                fh.write(f"[{section}]\n")
                for key in sorted(keys):
                    fh.write(f"{key} = {keys[key]}\n")
                fh.write("\n")

    def config_hash(self) -> str:
        blob = ";".join(f"{section}.{key}={value}"
                        for section, keys in sorted(self.as_sections().items())
                        for key, value in sorted(keys.items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # -- adapters ---------------------------------------------------------

    def synth_config(self):
        from .datasynth import SynthConfig
        return SynthConfig(canvas=self.canvas, extent=self.extent, rings=self.rings,
                           dots_per_image=self.dots_per_image, dot_jitter=self.dot_jitter,
                           dot_radius=self.dot_radius, dropout=self.dropout,
                           record_noise=self.record_noise, augment=self.augment)

    def classifier(self):
        from .pipeline import DefectClassifier
        return DefectClassifier(d=self.d, m=self.m, heads=self.heads, hidden=self.hidden,
                                canvas=self.canvas, fusion=self.fusion, alignment=self.alignment,
                                stage_fractions=self.stage_fractions,
                                epochs_per_stage=self.epochs_per_stage,
                                warmup_epochs=self.warmup_epochs,
                                fusion_epochs=self.fusion_epochs, lr=self.lr,
                                betas=self.betas, eps=self.eps,
                                weight_decay=self.weight_decay, batch_size=self.batch_size,
                                lr_decay_factor=self.lr_decay_factor,
                                lr_decay_interval=self.lr_decay_interval, seed=self.seed)
