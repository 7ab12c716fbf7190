"""Training configuration and its ``key=value`` text form.

Keys carry a dotted section prefix, one per line::

    model.kind=bg
    bg.depth=2
    optim.lr=0.001
    train.batch_size=4

Unknown keys and malformed values are errors. ``to_text`` emits every key in
a fixed order, which doubles as the config echo stored in checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..bgunet import BGUNetConfig
from ..fusion import AblationMode, FusionConfig
from ..grid import GridParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("optim.lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("optim.eps must be > 0")


@dataclass(frozen=True)
class DataConfig:
    """Either a dataset directory or the parameters of a synthetic set."""

    path: str = ""
    count: int = 32
    width: int = 64
    height: int = 64
    n_objects: int = 3
    min_gap: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "bg"
    bg: BGUNetConfig = field(default_factory=BGUNetConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    optim: AdamConfig = field(default_factory=AdamConfig)
    data: DataConfig = field(default_factory=DataConfig)
    epochs: int = 150
    max_steps: int = 200  # 0 means no cap; desk-scale runs stop here first
    batch_size: int = 4
    seed: int = 0
    depth_norm: float = 10.0

    def __post_init__(self):
        if self.kind not in ("bg", "fusion"):
            raise ConfigError(f"model.kind must be 'bg' or 'fusion', got {self.kind!r}")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("train.seed must be >= 0")
        if not self.depth_norm > 0:
            raise ConfigError("train.depth_norm must be > 0")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# --------------------------------------------------------------------------
# flat dotted-key view

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse(value: str, typ):
    if typ is bool:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ConfigError(f"expected a boolean, got {value!r}") from None
    try:
        return typ(value)
    except ValueError:
        raise ConfigError(f"expected {typ.__name__}, got {value!r}") from None


def _flat(cfg: TrainConfig) -> dict[str, object]:
    out: dict[str, object] = {"model.kind": cfg.kind}
    b = cfg.bg
    out.update({
        "bg.in_channels": b.in_channels, "bg.base_channels": b.base_channels, "bg.depth": b.depth,
        "bg.sr_s": b.grid_params.sr_s, "bg.n_bins": b.grid_params.n_bins,
        "bg.include_occupancy": b.include_occupancy, "bg.relu_before_bn": b.relu_before_bn,
        "bg.loss_space": b.loss_space,
    })
    f = cfg.fusion
    out.update({
        "fusion.mode": f.mode.value, "fusion.base_channels": f.base_channels, "fusion.stages": f.stages,
        "fusion.blocks_per_stage": f.blocks_per_stage, "fusion.joint": f.joint,
    })
    for sec, obj in (("optim", cfg.optim), ("data", cfg.data)):
        for fl in dataclasses.fields(obj):
            out[f"{sec}.{fl.name}"] = getattr(obj, fl.name)
    for k in ("epochs", "max_steps", "batch_size", "seed", "depth_norm"):
        out[f"train.{k}"] = getattr(cfg, k)
    return out


_DEFAULTS = _flat(TrainConfig())

# keys that fix the network architecture; a checkpoint must agree on all of them
ARCH_KEYS = tuple(k for k in _DEFAULTS if k.startswith(("model.", "bg.", "fusion.")))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in _flat(cfg).items())


def from_mapping(kv: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    flat = _flat(base or TrainConfig())
    for k, v in kv.items():
        if k not in flat:
            raise ConfigError(f"unknown config key {k!r}")
        typ = type(_DEFAULTS[k])
        flat[k] = _parse(v, typ) if isinstance(v, str) else typ(v)
    try:
        bg = BGUNetConfig(
            in_channels=flat["bg.in_channels"], base_channels=flat["bg.base_channels"],
            depth=flat["bg.depth"], grid_params=GridParams(flat["bg.sr_s"], flat["bg.n_bins"]),
            include_occupancy=flat["bg.include_occupancy"], relu_before_bn=flat["bg.relu_before_bn"],
            loss_space=flat["bg.loss_space"],
        )
        fu = FusionConfig(
            mode=AblationMode(flat["fusion.mode"]), base_channels=flat["fusion.base_channels"],
            stages=flat["fusion.stages"], blocks_per_stage=flat["fusion.blocks_per_stage"],
            joint=flat["fusion.joint"],
        )

        def section(cls, sec):
            return cls(**{f.name: flat[f"{sec}.{f.name}"] for f in dataclasses.fields(cls)})

        return TrainConfig(
            kind=flat["model.kind"], bg=bg, fusion=fu,
            optim=section(AdamConfig, "optim"), data=section(DataConfig, "data"),
            epochs=flat["train.epochs"], max_steps=flat["train.max_steps"],
            batch_size=flat["train.batch_size"], seed=flat["train.seed"],
            depth_norm=flat["train.depth_norm"],
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e


def parse_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    kv = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key = key.strip()
        if key in kv:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        kv[key] = value.strip()
    return from_mapping(kv, base)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"), base)


def arch_mismatch(a: TrainConfig, b: TrainConfig) -> list[str]:
    fa, fb = _flat(a), _flat(b)
    keys = ARCH_KEYS if a.kind == "fusion" or b.kind == "fusion" else \
        tuple(k for k in ARCH_KEYS if not k.startswith("fusion."))
    return [f"{k}: {_fmt(fa[k])} != {_fmt(fb[k])}" for k in keys if fa[k] != fb[k]]
