"""Disagreement-driven denoising of distantly supervised DocRE data.

A committee of models scores a noisy distant corpus; the pairs they fight
over the most go to human annotators; the committee is finetuned on the
answers and the cycle repeats until the budget runs out, after which
high-confidence predictions are aggregated into a denoised dataset.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
