"""Communication-optimal blocking and simulation for SYRK, SYR2K and SYMM."""

from . import bounds, gf, gridopt, kernels, parsim, seqsim, tbp
from .errors import TrisymError
from .kernels import Kernel, KernelInstance, KernelShape, random_instance, reference

__all__ = [
    "bounds",
    "gf",
    "gridopt",
    "kernels",
    "parsim",
    "seqsim",
    "tbp",
    "TrisymError",
    "Kernel",
    "KernelInstance",
    "KernelShape",
    "random_instance",
    "reference",
]

__version__ = "0.1.0"
