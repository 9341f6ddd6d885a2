"""Run configuration: a dataclass read from flat ``key = value`` text with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .selfbin.weights import Mode


@dataclass
class RunConfig:
    arch: str = "dense:31, bn, act, dense:31, bn, act, dense:2"  # odd widths keep integer pre-activations off zero
    dataset: str = ""
    format: str = "synthetic-blobs"
    n_samples: int = 1000
    blob_std: float = 0.3
    blob_sep: float = 0.4
    val_fraction: float = 0.2
    limit: int = 0  # 0 keeps the whole training set
    epochs: int = 30
    batch_size: int = 128
    nu_start: float = 1.0
    nu_end: float = 1000.0
    lr0: float = 1e-3
    lr_decay: float = 0.95
    mode: str = "Soft"
    use_alpha_fold: bool = False
    input_mode: str = "int8"
    augment: bool = False
    seed: int = 7
    hist_bins: int = 100
    checkpoint_epochs: str = ""  # comma-separated epochs that also get a checkpoint
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.nu_start > 0 and self.nu_end >= self.nu_start):
            raise ConfigError("need 0 < nu_start <= nu_end")
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"mode must be one of {[m.value for m in Mode]}, got {self.mode!r}") from None
        if self.input_mode not in ("int8", "median"):
            raise ConfigError("input_mode must be int8 or median")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    @property
    def checkpoint_epoch_list(self) -> list[int]:
        return [int(v) for v in self.checkpoint_epochs.split(",") if v.strip()]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _coerce(types[key], val, lineno)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _coerce(typ: str, val: str, lineno: int):
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot read {val!r} as {typ}") from None
