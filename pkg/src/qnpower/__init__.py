"""Power-set exponents of quasinilpotent operators, computed from resolvent
growth on finite truncations in extended precision."""

__version__ = "0.1.0"

from types import ModuleType as _ModuleType

from .exponent import (
    KEstimate,
    LambdaGrid,
    Sample,
    SampleCurve,
    estimate_k,
    k_direct_sum_oracle,
    sample_curve,
    sample_curves,
    sample_quotient_curve,
)
from .numerics import DEFAULT_CONTEXT, LogMagnitude, PrecisionContext, logmag_add, logmag_scale
from .operators import (
    BasisVector,
    Dense,
    DirectSum,
    ExplicitLowerTriangular,
    JordanNilpotent,
    Scaled,
    SummandVector,
    VolterraGrid,
    WeightedShiftA,
    embed_summand,
    materialize,
    volterra_matrix,
)
from .resolvent import (
    ConvergenceError,
    ResolventError,
    ScaledVector,
    resolvent_apply,
    resolvent_norm,
    rotation_reduce,
    shift_norm_bounds,
    volterra_norm_upper,
)
from .synthesis import (
    Interval,
    RightClosedSetRep,
    build_power_set_operator,
    extract_sequence,
    is_right_closed,
    right_closure,
)

from .volterra import (
    Constant,
    GridSamples,
    Indicator,
    IndicatorImage,
    Polynomial,
    estimate_k_g_alpha,
    f_alpha_resolvent_norm_sq_neg,
    growth_witness,
    h_alpha_norm_sq,
    k_g_alpha_oracle,
    phi,
)

__all__ = [name for name, obj in globals().items() if not name.startswith("_") and not isinstance(obj, _ModuleType)]
