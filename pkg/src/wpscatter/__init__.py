"""Wave packet transform tools for long-range quantum scattering experiments."""

from .errors import (AliasingError, ConfigError, CoverageError, DecayValidationError, DegeneratePairError,
                     GridError, LatticeError, PicardDivergenceError, QuadratureError, RefinementError)
from .foundation import (SpatialGrid, SpectralFunction, WaveFunction, fourier, inner, inverse_fourier,
                         make_grid, norm)
from .potentials import (PotentialModel, make_coulomb_like, make_long_range, make_short_range,
                         make_time_modulated, make_zero_potential, validate_decay)
from .propagators import free_propagate, full_propagate, modified_propagate, representation_residual
from .scattering import (band_limited_data, low_energy_cutoff, outgoing_decay_check,
                         short_range_remainder_check, wave_operator_trace)
from .trajectories import PhaseSpaceRegion, check_conjugation, solve_bvp_picard, solve_ivp
from .wpt import (PhaseField, PhaseLattice, Window, WindowPair, band_limited_window, forward_wpt,
                  forward_wpt_at, gaussian_window, inverse_wpt, make_lattice, phase_inner)

__version__ = "0.1.0"
