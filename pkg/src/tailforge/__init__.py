"""tailforge: exponential tail bounds with numerical convex conjugation.

Library layout:

* ``generators`` -- tail-generating functions (validation, fitting, JSON)
* ``conjugate``  -- Young-Fenchel conjugates, biconjugates, inverses
* ``bounds``     -- sum and U-statistic tail bounds, calibration, inversion
* ``ustat``      -- exact U-statistics and the decoupled MGF check
* ``simulate``   -- Monte Carlo verification harness with DKW bands
* ``plots``      -- figure rendering for reports (imports matplotlib/Agg)
* ``cli``        -- the ``tailforge`` command
"""

from . import bounds, conjugate, generators, simulate, ustat
from .errors import (
    CalibrationError,
    DomainError,
    GeneratorValidationError,
    ResourceCapError,
    TailforgeError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "bounds",
    "conjugate",
    "generators",
    "simulate",
    "ustat",
    "TailforgeError",
    "ValidationError",
    "GeneratorValidationError",
    "DomainError",
    "CalibrationError",
    "ResourceCapError",
    "__version__",
]
