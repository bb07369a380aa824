# app/models/enums.py
from enum import Enum


class OperatorKind(str, Enum):
    COLUMN_MASK = "column-mask"
    PIXEL_MASK = "pixel-mask"
    IDENTITY = "identity"


class MaskMode(str, Enum):
    FIXED = "fixed"
    PER_FRAME = "per-frame"


class InitVariant(str, Enum):
    VANILLA = "vanilla"
    CCDF = "ccdf"
    SEQDIFF = "seqdiff"
    SEQDIFF_PLUS = "seqdiffplus"


class Normalization(str, Enum):
    RESIDUAL_NORM = "residual-norm"
    NONE = "none"


class JacobianMode(str, Enum):
    EXACT = "exact-linearization"
    IDENTITY = "identity-approximation"


class TransitionVariant(str, Enum):
    IDENTITY = "identity"
    LINEAR = "linear-extrapolation"
    TUBELET = "tubelet-attention"


class SequenceKind(str, Enum):
    AR1 = "ar1-gaussian"
    BLOBS = "moving-blobs"


class PlotKind(str, Enum):
    PSNR_VS_STEPS = "psnr-vs-steps"
    PSNR_VS_MOTION = "psnr-vs-motion"
    BEST_STEP_VS_MOTION = "best-step-vs-motion"


class ModelKind(int, Enum):
    """Tag byte stored in SDMC checkpoints."""

    DENOISER = 1
    TRANSITION = 2
