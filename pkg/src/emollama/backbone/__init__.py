"""Toy LoRA-tuned language model and the two-stage curriculum trainer."""

from .answers import GenerationResult, parse_answer
from .model import LoRALinear, ToyLM, ToyLMConfig, lora_forward, masked_lm_loss
from .training import (
    EmotionModel,
    ModelSpec,
    TrainConfig,
    load_checkpoint,
    lr_at,
    pretrain_base,
    save_checkpoint,
    train_stage1,
    train_stage2,
)

__all__ = [
    "EmotionModel", "GenerationResult", "LoRALinear", "ModelSpec", "ToyLM", "ToyLMConfig",
    "TrainConfig", "load_checkpoint", "lora_forward", "lr_at", "masked_lm_loss", "parse_answer",
    "pretrain_base", "save_checkpoint", "train_stage1", "train_stage2",
]
