"""Variable-rate learned image codec with divisive-normalization transforms."""

from .codec import decode_image, encode_image
from .metrics import MsSsimConfig, l2_loss, ms_ssim, psnr, variable_rate_loss
from .network import CodecConfig, Decoder, Encoder, build_codec
from .quantizer import (
    QuantSpec,
    QuantizedChannel,
    dequantize,
    derive_spec,
    quantize_deterministic,
    quantize_stochastic,
)
from .trainer import TrainConfig, Trainer, load_checkpoint, load_codec, save_checkpoint

__all__ = [
    "CodecConfig",
    "Decoder",
    "Encoder",
    "MsSsimConfig",
    "QuantSpec",
    "QuantizedChannel",
    "TrainConfig",
    "Trainer",
    "build_codec",
    "decode_image",
    "dequantize",
    "derive_spec",
    "encode_image",
    "l2_loss",
    "load_checkpoint",
    "load_codec",
    "ms_ssim",
    "psnr",
    "quantize_deterministic",
    "quantize_stochastic",
    "save_checkpoint",
    "variable_rate_loss",
]
