"""
MVQA Core - cross-modal medical VQA on a numpy autodiff core

This package contains:
- numcore: tensors, tape-based autodiff, layers and AdamW
- encoders / alignment / fusion / heads: the model components
- orchestrator: training, evaluation, ablations and sweeps
- validation: the finite-difference gradient suite
- saliency / efficiency: Grad-CAM maps and analytic cost counts
"""

__version__ = "1.0.0"
__author__ = "MVQA Team"
