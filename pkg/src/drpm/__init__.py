"""Two-stage differentiable random partitions.

Subset sizes come from a noncentral multivariate hypergeometric stage,
element order from a score-based ranking stage; stacking ordered blocks
yields a partition of n elements into K labelled subsets.  The package
provides exact log PMFs, cheap lower/upper bounds, hard and relaxed
samplers with shared-noise twins, pathwise gradients checked against
finite differences, Monte-Carlo estimation against enumeration, and a
supervised fitting loop.  See the drpm command line tool for reports.
"""

from .errors import CapacityError, ValidationError
from .estimate import (
    PartitionHistogram,
    ablation_params,
    bounds_report,
    chi_square_pvalue,
    chi_square_stat,
    enumerate_partitions,
    exact_pmf_table,
    mc_pmf_estimate,
    tv_distance,
)
from .grad import (
    AdamState,
    FixedNoise,
    GradientReport,
    ObjectiveContext,
    ParamPoint,
    anneal_tau,
    eval_scalar_with_gradient,
    finite_diff_gradient,
    gradcheck,
    optimizer_step,
)
from .learn import (
    FitConfig,
    FitResult,
    SupervisedTarget,
    fit_supervised,
    kl_surrogate,
    supervised_loss,
)
from .mvhg import (
    MvhgParams,
    RelaxedCounts,
    SubsetSizes,
    mvhg_conditional_weights,
    mvhg_log_pmf,
    mvhg_sample_hard,
    mvhg_sample_relaxed,
    mvhg_support,
)
from .partition import (
    AssignmentMatrix,
    DrpmParams,
    RelaxedAssignment,
    build_partition,
    build_partition_relaxed,
    log_num_orderings,
    partition_log_pmf_exact,
    partition_pmf_bounds,
    sample_partition_hard,
    sample_partition_relaxed,
    zero_noise_partition,
)
from .permutation import (
    PermutationMatrix,
    PlScores,
    RelaxedPermutation,
    SubsetPermutation,
    neuralsort_hard,
    neuralsort_relaxed,
    pl_log_pmf,
    pl_max_perm,
    pl_sample,
    subset_perm_log_prob,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
