"""Ground-truth-free tuning of denoiser parameters on a single image."""
from .dequip import DequipDenoiser, Theta, denoise
from .imaging import load_image, mse, psnr, save_image
from .noise import NoiseModel, RecorruptConfig, make_rng
from .tuning import (
    SchemeUnavailable,
    TuneConfig,
    TuneInputs,
    TuneReport,
    TuneScheme,
    infer,
    select_scheme,
    tune,
)

__all__ = [
    "DequipDenoiser", "Theta", "denoise",
    "load_image", "save_image", "mse", "psnr",
    "NoiseModel", "RecorruptConfig", "make_rng",
    "SchemeUnavailable", "TuneConfig", "TuneInputs", "TuneReport", "TuneScheme",
    "infer", "select_scheme", "tune",
]
