"""Operational rate-distortion / channel-coding equivalence toolkit.

Random-coding simulators, exact type-class calculations and layered
encoder/decoder stacks over finite alphabets.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Alphabet,
    CommonRandomness,
    DistortionSpec,
    Pmf,
    TypeVector,
    TypicalityParams,
    avg_distortion,
    empirical_type,
    is_typical,
    jointly_typical,
    log_multinomial,
)
from .errors import *  # noqa: E402,F401,F403

__all__ = [
    "Alphabet", "CommonRandomness", "DistortionSpec", "Pmf", "TypeVector", "TypicalityParams",
    "avg_distortion", "empirical_type", "is_typical", "jointly_typical", "log_multinomial",
    "__version__",
]
