"""Comparison methods and ablations, all expressed as training plans."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .exceptions import ConfigError
from .models import ModelConfig
from .trainer import ABRNET_PLAN, TrainConfig, TrainingPlan, train

METHOD_NAMES = ("source_only", "dann_lite", "mcd_lite", "abrnet", "abrnet_wo_cbrd", "abrnet_wo_dadg")

PLANS = {
    "source_only": TrainingPlan(step2=False, discrepancy_in_step3=False, adversarial=False),
    # feature-level discriminator on unmixed domains
    "dann_lite": TrainingPlan(step2=False, discrepancy_in_step3=False, adversarial=True, mix=False),
    # discrepancy = mean |l_hat - l_tilde| in floor-relative units, no mixing, no D
    "mcd_lite": TrainingPlan(adversarial=False, similarity="l1"),
    "abrnet": ABRNET_PLAN,
    "abrnet_wo_cbrd": TrainingPlan(step2=False, discrepancy_in_step3=False),
    "abrnet_wo_dadg": TrainingPlan(adversarial=False),
}


@dataclass
class MethodSpec:
    name: str = "abrnet"
    w_s: float = None
    w_adv: float = None

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {self.name!r}; choose from {', '.join(METHOD_NAMES)}")

    @property
    def plan(self) -> TrainingPlan:
        return PLANS[self.name]

    def apply(self, config: TrainConfig, model_config: ModelConfig):
        """Method-specific overrides of the shared configs."""
        changes = {}
        if self.w_s is not None:
            changes["w_s"] = self.w_s
        if self.w_adv is not None:
            changes["w_adv"] = self.w_adv
        config = replace(config, **changes)
        if model_config is not None and self.name == "dann_lite":
            model_config = replace(model_config, conditional_discriminator=False)
        return config, model_config

    def to_dict(self):
        return {"name": self.name, "w_s": self.w_s, "w_adv": self.w_adv}


def _model_config_for(source, model_config):
    if model_config is not None:
        return model_config
    return ModelConfig(window_length=source.inputs.shape[1], signal_dim=source.inputs.shape[2],
                       floor_extents=source.extents)


def train_method(method, config: TrainConfig, source, target, model_config: ModelConfig = None, **kw):
    if isinstance(method, str):
        method = MethodSpec(method)
    config, model_config = method.apply(config, _model_config_for(source, model_config))
    return train(config, source, target, model_config, plan=method.plan, **kw)


def train_source_only(config, source, target, model_config=None, **kw):
    return train_method("source_only", config, source, target, model_config, **kw)


def train_dann_lite(config, source, target, model_config=None, **kw):
    return train_method("dann_lite", config, source, target, model_config, **kw)


def train_mcd_lite(config, source, target, model_config=None, **kw):
    return train_method("mcd_lite", config, source, target, model_config, **kw)


def train_abrnet(config, source, target, model_config=None, **kw):
    return train_method("abrnet", config, source, target, model_config, **kw)


def train_ablation(which, config, source, target, model_config=None, **kw):
    if which not in ("wo_cbrd", "wo_dadg"):
        raise ConfigError(f"ablation must be 'wo_cbrd' or 'wo_dadg', got {which!r}")
    return train_method(f"abrnet_{which}", config, source, target, model_config, **kw)
