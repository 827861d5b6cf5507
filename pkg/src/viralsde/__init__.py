"""Stochastic within-host model of SARS-CoV-2 infection: analysis, simulation and optimal treatment."""
from .model import *  # noqa: F401,F403
from .stability import *  # noqa: F401,F403
from .simulate import *  # noqa: F401,F403
from .control import *  # noqa: F401,F403
from .config import *  # noqa: F401,F403
from . import model, stability, simulate, control, config  # noqa: F401

__all__ = model.__all__ + stability.__all__ + simulate.__all__ + control.__all__ + config.__all__
__version__ = "0.1.0"
