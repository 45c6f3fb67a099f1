"""Aggregation GNNs with certified spectral-filter stability to graph perturbations."""

from .datasets import (
    DataError,
    RatingsTable,
    RegressionTask,
    SimilarityGraphConfig,
    build_rating_task,
    parse_movielens,
    pearson_similarity_graph,
    synthetic_source_localization,
)
from .filters import (
    LipschitzEstimate,
    Omega,
    PolyFilter,
    StabilityBound,
    certify_filter,
    circulant_eigenvalues,
    circulant_from_coeffs,
    cyclic_shift_coeffs,
    estimate_lipschitz,
    estimate_lipschitz_bank,
    eval_poly,
    eval_poly_matrix,
    frechet_derivative_poly,
    frechet_fd_oracle,
    multilayer_bound,
    stability_bound,
)
from .graph import (
    Graph,
    PerturbationRealization,
    PerturbationSpec,
    SpectralDecomposition,
    apply_perturbation,
    build_shift_from_adjacency,
    eigendecompose_symmetric,
    random_graph,
    realize_perturbation,
    spectral_norm,
)
from .model import (
    AggGnnModel,
    CnnLayerSpec,
    PoolSpec,
    SelGnnModel,
    aggregate,
    apply_nonlinearity,
    apply_pooling,
    first_layer_operator,
    forward,
    init_model,
    permutation_conjugate,
    row_vectorize,
    selection_gnn_forward,
)
from .sweep import (
    OmegaCoverageError,
    StabilityRecord,
    SweepConfig,
    bound_check,
    compare_aggregation_counts,
    emit_report,
    output_difference,
    run_sweep,
)
from .training import (
    GradCheckReport,
    LossSpec,
    OptimizerState,
    adam_step,
    backward,
    grad_check,
    lipschitz_penalty,
    smooth_l1,
    train,
)

__version__ = "0.1.0"
