"""forgebench: robotic and generative forgery attacks on offline signature
verification, and the fine-tuning defense, at desk scale."""
from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
