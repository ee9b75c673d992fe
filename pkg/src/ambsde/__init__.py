"""Particle solver and verification harness for anticipated mean-field BSDEs
with jumps."""

from .analysis import *  # noqa: F401,F403
from .analysis import __all__ as _an
from .config import ConfigError, RunConfig, load_config, parse_config
from .lattice import *  # noqa: F401,F403
from .lattice import __all__ as _la
from .measure import *  # noqa: F401,F403
from .measure import __all__ as _me
from .noise import *  # noqa: F401,F403
from .noise import __all__ as _no
from .registry import RegistryError, catalogue, make_driver, make_pair, make_terminal
from .solver import *  # noqa: F401,F403
from .solver import __all__ as _so

__version__ = "0.1.0"

__all__ = [*_la, *_no, *_me, *_so, *_an, "ConfigError", "RunConfig", "load_config", "parse_config",
           "RegistryError", "catalogue", "make_driver", "make_pair", "make_terminal"]
