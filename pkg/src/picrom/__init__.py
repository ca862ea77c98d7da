"""Structure-preserving particle-in-cell solvers for the 1D-1V Vlasov-Poisson
equation with a dynamical ortho-symplectic reduced-basis method.

The package ships a geometric full-order solver (periodic P1 finite elements,
charge-conserving deposition, Stoermer-Verlet), a reduced solver evolving a
complex-SVD basis on the ortho-symplectic manifold together with reduced
coefficients, and the hyper-reduction pair that keeps the reduced cost
independent of the particle count: sliding-window dynamic mode decomposition
of the self-consistent potential and adaptive discrete empirical interpolation
of the particle-to-grid coupling.
"""

from .config import RunConfig
from .driver import run, run_compare, run_full, run_rom
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    DivergenceError,
    EvaluationError,
    FitFailureError,
    PicromError,
    StepFailureError,
)
from .sampling import BENCHMARKS, BenchmarkSpec

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "run",
    "run_full",
    "run_rom",
    "run_compare",
    "BENCHMARKS",
    "BenchmarkSpec",
    "PicromError",
    "ConfigurationError",
    "EvaluationError",
    "DivergenceError",
    "StepFailureError",
    "DegenerateDataError",
    "FitFailureError",
    "__version__",
]
