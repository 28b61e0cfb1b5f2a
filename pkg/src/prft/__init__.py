"""Photon-resolved Floquet theory: counting statistics of photons exchanged with driven matter."""
__version__ = "0.1.0"

from .counting import (CountingGrid, MGFTable, Variant, mgf_aprft, mgf_exact_gaussian, mgf_function,
                       mgf_initial, mgf_pfo, mgf_prft, mgf_semiclassical_floquet)
from .decoherence import (DensityMatrix, KrausSet, coherence_integral, coherence_matrix, kraus_operators,
                          observable_expectation, reduced_density_semiclassical)
from .errors import (AliasingError, DegeneracyError, IncommensurateError, IntegrationError, LatticeError,
                     PRFTError, QuadratureError, SpecificationError)
from .jaynescummings import JCParams, dressed_frame, figure_presets, jc_mgf_analytic
from .model import (DriveMode, DrivenSystem, GaussianPhotonState, build_semiclassical_hamiltonian,
                    photon_flux_operator)
from .oracle import fock_jc_evolve, sambe_evolve, sambe_propagator
from .propagator import (FloquetDecomposition, evolve, floquet_decompose, propagate,
                         quasienergy_gradient)
from .statistics import (CumulantSeries, PhotonDistribution, cumulants_fd, distribution_fft,
                         error_scaling_fit)
