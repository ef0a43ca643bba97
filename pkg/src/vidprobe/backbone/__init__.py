"""Toy windowed-attention latent diffusion backbone (video and image modes)."""

from .config import BackboneConfig, IDENTITY, SPATIAL, SPATIO_TEMPORAL
from .schedule import NoiseSchedule, cosine_alpha, forward_noise, forward_noise_batch
from .tokenizer import tokenize, tokenize_batch
from .model import BackboneModel, WindowLayout, denoise_loss
from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
