"""Sequential simulator design for calibrated field prediction.

Gaussian-process surrogates with a separable Gaussian kernel, modular
Kennedy-O'Hagan calibration, closed-form integrated variance criteria
with analytic gradients, and a Monte-Carlo benchmark harness.
"""

from .acquisition import (
    AcquisitionResult,
    DesignStrategy,
    OptimizerSettings,
    acquire_comparator,
    acquire_koh_imspe,
    lhs,
)
from .gp import BetaPrior, GammaPrior, GpData, GpFit, GpPriors, map_fit, predict
from .imspe import KohImspe, MImspe, build_w_set, koh_imspe, koh_imspe_grad, m_imspe
from .kernels import KernelConfig, cross_covariance, kernel_value
from .koh import FieldData, KohFit, KohPriors, KohSettings, SimData, fit_koh, predict_field

__all__ = [
    "AcquisitionResult", "BetaPrior", "DesignStrategy", "FieldData", "GammaPrior", "GpData",
    "GpFit", "GpPriors", "KernelConfig", "KohFit", "KohImspe", "KohPriors", "KohSettings",
    "MImspe", "OptimizerSettings", "SimData", "acquire_comparator", "acquire_koh_imspe",
    "build_w_set", "cross_covariance", "fit_koh", "kernel_value", "koh_imspe",
    "koh_imspe_grad", "lhs", "m_imspe", "map_fit", "predict", "predict_field",
]
