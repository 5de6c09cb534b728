"""Multi-scale fully convolutional PET reconstruction with periodic shuffling."""

from .errors import (ConfigurationError, ContractViolation, DataError, MsfreconError,
                     NumericFailure)
from .msfcnn import NetworkSpec, Parameters, forward, init_he, load_parameters, save_parameters
from .osem import OsemConfig, osem_reconstruct
from .phantom import Phantom, make_phantom
from .shuffle import ps_down, ps_up
from .tomo_sim import Sinogram, back_project, fbp, poisson_sample, radon, ramp_filter
from .training import TrainConfig, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractViolation", "DataError", "MsfreconError", "NumericFailure",
    "NetworkSpec", "Parameters", "forward", "init_he", "load_parameters", "save_parameters",
    "OsemConfig", "osem_reconstruct", "Phantom", "make_phantom", "ps_down", "ps_up",
    "Sinogram", "back_project", "fbp", "poisson_sample", "radon", "ramp_filter",
    "TrainConfig", "grad_check", "train",
]
