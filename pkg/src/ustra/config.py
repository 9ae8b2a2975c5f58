"""Training/model configuration and the ``key=value`` config-file format."""
import dataclasses
import math
from dataclasses import dataclass, field, fields

from .errors import ValidationError

ABLATIONS = ("bnn", "saa", "gcn", "fusion", "rankloss")


@dataclass
class TrainConfig:
    # loss weights for complexity, ranking and video-level BCE terms
    w1: float = 0.001
    w2: float = 10.0
    w3: float = 10.0
    lr: float = 0.0005
    batch_size: int = 10
    epochs: int = 70
    m_train: int = 2
    m_test: int = 10
    hidden_dim: int = 256
    embed_dim: int = 0  # 0 -> hidden_dim // 2
    bnn_enabled: bool = True
    saa_enabled: bool = True
    gcn_enabled: bool = True
    fusion_enabled: bool = True
    rankloss_enabled: bool = True
    prior_pi: float = 0.5
    prior_sigma1: float = 1.0
    prior_sigma2: float = math.exp(-6.0)
    prior_as_variance: bool = False
    lr_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-6
    eval_batch: int = 30
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.m_train < 1 or self.m_test < 1:
            raise ValidationError("forward pass counts must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_batch < 1:
            raise ValidationError("batch sizes must be >= 1 and epochs >= 0")
        if self.hidden_dim < 2 or self.embed_dim < 0:
            raise ValidationError("hidden_dim must be >= 2")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")

    @property
    def resolved_embed_dim(self):
        return self.embed_dim or max(1, self.hidden_dim // 2)

    def ablate(self, *names):
        """Copy with the named components switched off."""
        changes = {}
        for name in names:
            if name not in ABLATIONS:
                raise ValidationError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
            changes[f"{name}_enabled"] = False
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ModelConfig:
    d_obj: int
    d_frame: int
    n_objects: int
    seq_len: int
    embed_dim: int
    hidden_dim: int
    bnn: bool = True
    saa: bool = True
    gcn: bool = True
    fusion: bool = True
    prior_pi: float = 0.5
    prior_sigma1: float = 1.0
    prior_sigma2: float = math.exp(-6.0)
    prior_as_variance: bool = False
    extra: dict = field(default_factory=dict)

    @classmethod
    def for_data(cls, sample, cfg):
        return cls(
            d_obj=sample.d_obj,
            d_frame=sample.d_frame,
            n_objects=sample.N,
            seq_len=sample.T,
            embed_dim=cfg.resolved_embed_dim,
            hidden_dim=cfg.hidden_dim,
            bnn=cfg.bnn_enabled,
            saa=cfg.saa_enabled,
            gcn=cfg.gcn_enabled,
            fusion=cfg.fusion_enabled,
            prior_pi=cfg.prior_pi,
            prior_sigma1=cfg.prior_sigma1,
            prior_sigma2=cfg.prior_sigma2,
            prior_as_variance=cfg.prior_as_variance,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name, raw, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for {name}") from None
    return raw


def _field_types(cls):
    hints = {"bool": bool, "int": int, "float": float}
    out = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, type) else hints.get(str(f.type), str)
        out[f.name] = t
    return out


def parse_config_text(text):
    """``key=value`` lines with ``#`` comments -> dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_overrides(cfg, raw):
    """New TrainConfig with string overrides coerced to field types."""
    types = _field_types(TrainConfig)
    changes = {}
    for key, value in raw.items():
        if key not in types:
            raise ValidationError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, value, types[key]) if isinstance(value, str) else value
    return dataclasses.replace(cfg, **changes)


def load_config_file(path, base=None):
    with open(path, encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    return apply_overrides(base or TrainConfig(), raw)
