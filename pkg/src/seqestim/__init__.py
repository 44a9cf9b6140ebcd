"""Sequential estimation with controlled observation intensity and discretionary stopping."""

from .control import (
    ComparisonReport,
    CostSpec,
    FirstEntry,
    FixedTime,
    PolicySpec,
    Threshold,
    adversarial_suite,
    compare_policies,
    dominance_check,
    find_u0,
)
from .filter import (
    Constant,
    Feedback,
    FullBang,
    TimeFunction,
    simulate_ensemble,
    simulate_path,
    time_change,
    variance_identity_check,
)
from .prior import Discrete, Gaussian, GridDensity, TwoPoint, prior_from_dict
from .stopping import (
    StoppingSolution,
    bernoulli_threshold,
    first_entry_time,
    gaussian_tau_star,
    smooth_fit_shoot,
    solve_value_function,
)
from .widder import (
    invert_G,
    posterior_mean_G,
    posterior_measure,
    posterior_summary,
    posterior_var_H,
    psi,
    transform_F,
)

__version__ = "0.1.0"
