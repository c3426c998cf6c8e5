"""Certified exponential ergodicity for regime-switching diffusions.

Modules
-------
chains        generators, classical coupling, coupling-time rates
spectra       M-matrix tests, xi-certificates, Dirichlet and Perron quantities
partition     finite partitions of countable regime sets and reduced generators
dynamics      SDE models, simulation, coupling and generator checks
wasserstein   composite costs, coupling cost curves, exact transport
certificates  theorem drivers producing serializable certificates
cli           command-line front end
"""

from .errors import ErgodicityError

__version__ = "0.1.0"
__all__ = ["ErgodicityError", "__version__"]
