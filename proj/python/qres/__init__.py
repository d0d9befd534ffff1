"""Quantized hierarchical VAE image codec."""

from qres._core import (
    ContractError,
    DecodeError,
    FormatError,
    Model,
    ShapeError,
    TrainingDiverged,
    bd_rate,
    compress,
    decompress,
    interpolate,
    load_model,
    lossless_compress,
    lossless_decompress,
    make_synthetic,
    ms_ssim,
    progressive_decode,
    psnr,
    sample,
    train,
)

__all__ = [
    "ContractError",
    "DecodeError",
    "FormatError",
    "Model",
    "ShapeError",
    "TrainingDiverged",
    "bd_rate",
    "compress",
    "decompress",
    "interpolate",
    "load_model",
    "lossless_compress",
    "lossless_decompress",
    "make_synthetic",
    "ms_ssim",
    "progressive_decode",
    "psnr",
    "sample",
    "train",
]
