"""Simulation of stimulated-echo and echo-train experiments on dipolar solids.

Two engines share one pulse-program language:

* :mod:`stechosim.bloch` - vectorized isochromat (Bloch) model with offset,
  gradient and B1 inhomogeneity plus T1/T2 relaxation;
* :mod:`stechosim.liouville` - exact density-matrix dynamics of a few
  dipolar-coupled spins.

:mod:`stechosim.analysis` extracts echo amplitudes and fits decay models,
:mod:`stechosim.experiments` runs configured sweeps and :mod:`stechosim.cli`
exposes everything on the command line.
"""

__version__ = "0.1.0"

from .core import (GAMMA_1H, GradientSpec, Isochromat, Magnetization, OffsetDistribution,  # noqa: E402
                   SampleSpec, free_evolve, rotate, rotation_matrix)
from .seqlang import (BUILTINS, ProgramSyntaxError, PulseProgram, ValidationError, builtin,  # noqa: E402
                      format_program, parse_program, select_pathway)
from .bloch import EchoTrain, Ensemble, SignalTrace, echo_amplitudes, echo_tops, run  # noqa: E402
from .analysis import (FitDidNotConverge, FitResult, fit_double_exponential,  # noqa: E402
                       fit_quadratic_gradient, ste_he_ratio)

__all__ = [
    "__version__", "GAMMA_1H", "GradientSpec", "Isochromat", "Magnetization", "OffsetDistribution",
    "SampleSpec", "free_evolve", "rotate", "rotation_matrix", "BUILTINS", "ProgramSyntaxError",
    "PulseProgram", "ValidationError", "builtin", "format_program", "parse_program", "select_pathway",
    "EchoTrain", "Ensemble", "SignalTrace", "echo_amplitudes", "echo_tops", "run",
    "FitDidNotConverge", "FitResult", "fit_double_exponential", "fit_quadratic_gradient", "ste_he_ratio",
]
