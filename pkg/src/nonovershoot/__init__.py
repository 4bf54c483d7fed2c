"""Nonovershooting finite-time state feedback for linear plants under conic
safety constraints, via homogeneous dilations."""

from .cone import (ConeSpec, MarginReport, barrier_values, contains, embedding_check,
                   invariance_margin, is_metzler, iss_margin, issf_check, sample_xi)
from .dilation import (Dilation, HomNormResult, canonical_norm, canonical_norm_gradient,
                       check_field_homogeneity, dilate, hom_add, psi, psi_inverse)
from .exceptions import (ConeError, ConfigError, DilationError, IntegrationError,
                         NonovershootError, NumericsError, PlantError, SynthesisError)
from .simulation import (PerturbationSpec, SimConfig, Trace, build_rhs, integrate,
                         min_barrier, settling_time, simulate, symmetry_check)
from .synthesis import (HomogeneousController, LinearPlant, eval_control,
                        eval_mixed_control, full_pipeline, metzler_offset_range,
                        solve_homogenization, solve_lmi_weight, synth_linear)

__version__ = "0.1.0"
