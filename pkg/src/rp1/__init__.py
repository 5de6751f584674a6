"""Active-learning model-based reinforcement learning.

An ensemble world model, a Gaussian policy trained inside it on a reward plus
ensemble-disagreement objective, an Exponential Weights selector for the
exploration weight, and active-subspace early stopping of data collection.
"""
from rp1.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
