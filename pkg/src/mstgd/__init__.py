"""Memory stratified gradient descent: estimator, optimizers, checks and experiments."""
from .estimator import (BlendCoefficients, CategoryMoments, MemoryState, category_moments,
                        compute_blend_equal_mean, compute_blend_general, memoryless_variance,
                        stratified_mean, update_component, update_component_zero_mean,
                        variance_sp)
from .optimizers import OptimizerConfig, RunTrace, Stepper, run

__all__ = [
    "BlendCoefficients", "CategoryMoments", "MemoryState", "OptimizerConfig", "RunTrace",
    "Stepper", "category_moments", "compute_blend_equal_mean", "compute_blend_general",
    "memoryless_variance", "run", "stratified_mean", "update_component",
    "update_component_zero_mean", "variance_sp",
]
__version__ = "0.1.0"
