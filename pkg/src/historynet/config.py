"""Training configuration and its flat ``key = value`` file format.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected. The
same keys are accepted as ``--set key=value`` overrides on the command line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .losses import LossWeights
from .model import ModelConfig

ABLATIONS = {
    # preset: (parsing branch on, classifier/info branch on)
    "baseline": (False, False),
    "baseline+parsing": (True, False),
    "baseline+classifier": (False, True),
    "full": (True, True),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    image_size: int = 224
    epochs: int = 8
    learning_rate: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    critic_steps_per_gen_step: int = 1
    seed: int = 0
    lambda_cls: float = 0.003
    lambda_par: float = 0.003
    lambda_g: float = 0.1
    lambda_info: float = 0.003
    gp_weight: float = 1.0
    penalty_sign: str = "standard"
    cls_kl_reverse: bool = False
    info_kl_reverse: bool = False
    label_smoothing: float = 0.05
    ablation: str = "full"
    scale_preset: str = "paper"
    checkpoint_every: int = 0  # generator steps; 0 = once per epoch
    max_skip_fraction: float = 0.01
    backbone_weights: str = ""
    backbone_map: str = ""

    def __post_init__(self):
        positive = ("batch_size", "image_size", "epochs", "learning_rate", "critic_steps_per_gen_step")
        for k in positive:
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        for k in ("lambda_cls", "lambda_par", "lambda_g", "lambda_info", "gp_weight", "label_smoothing"):
            if not getattr(self, k) >= 0:
                raise ConfigError(f"{k} must be >= 0, got {getattr(self, k)}")
        if self.seed < 0 or self.checkpoint_every < 0:
            raise ConfigError("seed and checkpoint_every must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {self.ablation!r}")
        if self.scale_preset not in ("test", "paper"):
            raise ConfigError(f"scale_preset must be 'test' or 'paper', got {self.scale_preset!r}")
        if self.penalty_sign not in ("standard", "literal"):
            raise ConfigError("penalty_sign must be 'standard' or 'literal'")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        return replace(cls(), **overrides)

    @classmethod
    def test(cls, **overrides) -> "TrainConfig":
        base = cls(batch_size=8, image_size=32, epochs=2, learning_rate=5e-4, scale_preset="test")
        return replace(base, **overrides)

    @property
    def parsing_enabled(self) -> bool:
        return ABLATIONS[self.ablation][0]

    @property
    def classifier_enabled(self) -> bool:
        return ABLATIONS[self.ablation][1]

    @property
    def loss_weights(self) -> LossWeights:
        """Weights after the ablation preset zeroes disabled terms."""
        return LossWeights(
            lambda_cls=self.lambda_cls,
            lambda_par=self.lambda_par if self.parsing_enabled else 0.0,
            lambda_g=self.lambda_g,
            lambda_info=self.lambda_info if self.classifier_enabled else 0.0,
        )

    def model_config(self, label_count: int, **overrides) -> ModelConfig:
        base = ModelConfig.test if self.scale_preset == "test" else ModelConfig.paper
        return base(input_size=(self.image_size, self.image_size), label_count=label_count, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def echo(self) -> str:
        """Config file text, effective (post-ablation) weights appended as comments."""
        lines = [f"{k} = {_fmt(v)}" for k, v in self.to_dict().items()]
        w = self.loss_weights
        lines.append(f"# effective: lambda_par={_fmt(w.lambda_par)} lambda_info={_fmt(w.lambda_info)} "
                     f"parsing_branch={'on' if self.parsing_enabled else 'off'} "
                     f"info_critic_D2={'on' if self.classifier_enabled else 'off'}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str, typ) -> Any:
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


SCHEMA = {f.name: f.type for f in fields(TrainConfig)}


def parse_pairs(pairs: Mapping[str, str]) -> dict[str, Any]:
    unknown = sorted(set(pairs) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return {k: _coerce(k, v, SCHEMA[k]) for k, v in pairs.items()}


def read_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> TrainConfig:
    """Build a config: preset defaults, then the file, then overrides.

    The preset is chosen by ``scale_preset`` (file or override), default paper.
    """
    pairs = read_pairs(Path(path).read_text()) if path else {}
    pairs.update(overrides or {})
    values = parse_pairs(pairs)
    preset = values.get("scale_preset", "paper")
    base = TrainConfig.test if preset == "test" else TrainConfig.paper
    return base(**values)


def schema_help() -> str:
    defaults = TrainConfig()
    return "\n".join(f"  {k:<26}{getattr(t, '__name__', t):<6} default {_fmt(getattr(defaults, k))}"
                     for k, t in SCHEMA.items())
