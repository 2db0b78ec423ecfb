"""Run configuration: structural, optimizer, and CRF hyperparameters.

The JSON config file mirrors these field names exactly; nested groups
(`crf`, `augmentation`) are JSON objects. Any field omitted from the
file keeps its default. `alpha` and `gamma` default to 0.2*l and
0.05*l pixels and may be left null to track l.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from .crf import CrfHyperParams
from .errors import ShapeError


@dataclass
class Augmentation:
    random_crop_margin: int = 0
    horizontal_flip: bool = False


@dataclass
class RunConfig:
    l: int = 32                      # image side, multiple of 16
    c: int = 2                       # channel width unit
    n: int = 3                       # number of AUs
    T: int = 10                      # mean-field iterations
    epochs: int = 12
    batch_size: int = 8
    base_lr: float = 0.006
    lr_decay_factor: float = 0.3
    lr_decay_every: int = 2          # epochs between decays
    weight_decay: float = 0.0005
    momentum: float = 0.9
    seed: int = 0
    channel_attention: bool = True
    spatial_attention: bool = True
    crf_refinement: bool = True
    crf_loss_weight: float = 1.0
    threshold: float = 0.5
    crf: CrfHyperParams = field(default_factory=CrfHyperParams)
    augmentation: Augmentation = field(default_factory=Augmentation)

    def __post_init__(self):
        if isinstance(self.crf, dict):
            self.crf = _merge_dataclass(CrfHyperParams, self.crf, "crf")
        if isinstance(self.augmentation, dict):
            self.augmentation = _merge_dataclass(
                Augmentation, self.augmentation, "augmentation")

    def validate(self):
        if self.l <= 0 or self.l % 16:
            raise ShapeError(f"l must be a positive multiple of 16, got {self.l}")
        if self.c < 1 or self.n < 1:
            raise ShapeError("c and n must be >= 1")
        if self.T < 1:
            raise ShapeError("T must be >= 1")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ShapeError("epochs must be >= 0")
        if self.base_lr <= 0 or self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ShapeError("learning-rate schedule values must be positive")
        if self.weight_decay < 0 or not 0.0 <= self.momentum < 1.0:
            raise ShapeError("optimizer hyperparameters out of range")
        if not 0.0 < self.threshold < 1.0:
            raise ShapeError("threshold must be in (0,1)")
        if self.crf_loss_weight < 0:
            raise ShapeError("crf_loss_weight must be >= 0")
        if self.augmentation.random_crop_margin < 0:
            raise ShapeError("random_crop_margin must be >= 0")
        self.crf_hyper().validate()
        return self

    def crf_hyper(self):
        """CRF hyperparameters with l-dependent bandwidth defaults and
        the model-level iteration count T resolved in."""
        h = self.crf
        return CrfHyperParams(
            w1=h.w1, w2=h.w2,
            alpha=h.alpha if h.alpha is not None else 0.2 * self.l,
            beta=h.beta,
            gamma=h.gamma if h.gamma is not None else 0.05 * self.l,
            T=self.T, damping=h.damping,
        )

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ShapeError(f"unknown config field(s): {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _merge_dataclass(cls, raw, label):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ShapeError(f"unknown {label} field(s): {sorted(unknown)}")
    return cls(**raw)
