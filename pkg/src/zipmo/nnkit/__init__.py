from .fourier import FourierSpec, FourierFeatures, fourier_embed
from .rope import RopeSpec, rope_angles, rope_apply
from .blocks import AttentionConfig, RMSNorm, SwiGLU, Attention, SelfAttentionBlock, CrossAttentionBlock, FeedForward
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, content_hash, state_dict_arrays, load_state_dict_arrays
from .gradcheck import grad_check

__all__ = [
    "FourierSpec", "FourierFeatures", "fourier_embed",
    "RopeSpec", "rope_angles", "rope_apply",
    "AttentionConfig", "RMSNorm", "SwiGLU", "Attention",
    "SelfAttentionBlock", "CrossAttentionBlock", "FeedForward",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "content_hash",
    "state_dict_arrays", "load_state_dict_arrays",
    "grad_check",
]
