from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .data import Sample, classify, generate_dataset, generate_samples, to_image, to_latent
from .model import DenoiserModel, ModelConfig, forward
from .oracle import OracleDenoiser, oracle_eps
from .prompts import COLORS, SHAPES, VOCAB, Prompt
from .train import TrainConfig, train

__all__ = [
    "COLORS",
    "DenoiserModel",
    "ModelConfig",
    "OracleDenoiser",
    "Prompt",
    "SHAPES",
    "Sample",
    "TrainConfig",
    "VOCAB",
    "classify",
    "forward",
    "generate_dataset",
    "generate_samples",
    "load_checkpoint",
    "oracle_eps",
    "read_manifest",
    "save_checkpoint",
    "to_image",
    "to_latent",
    "train",
]
