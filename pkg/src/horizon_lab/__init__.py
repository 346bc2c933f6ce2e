"""Numerical laboratory for horizon effects in optimal investment.

Subpackages cover the pieces of the problem: utility functions and their
convex duals (:mod:`.utility`), the Riccati system behind the explosive
mean-reverting-drift value function (:mod:`.kim_omberg`), an exactly
evaluable market where exiting early is catastrophic
(:mod:`.counterexample`), Monte Carlo machinery with a compiled kernel
backend (:mod:`.market_sim`, :mod:`.kernels`), integrability-condition
checkers (:mod:`.conditions`), and the experiment runner (:mod:`.cli`).
"""

__version__ = "0.1.0"

from . import kernels  # noqa: F401  (selects the backend at import time)
from . import utility  # noqa: F401
from . import kim_omberg  # noqa: F401
from . import counterexample  # noqa: F401
from . import market_sim  # noqa: F401
from . import conditions  # noqa: F401
from . import cli  # noqa: F401
