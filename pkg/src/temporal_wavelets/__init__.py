"""Multi-scale community detection in temporal networks with spectral graph wavelets."""
from .benchmarks import GranellParams, GroundTruth, SPParams, generate_granell, generate_sp_temporal
from .clustering import (
    DetectionConfig,
    Dendrogram,
    MultiScaleResult,
    Partition,
    constrained_average_linkage,
    cut_max_gap,
    detect_multiscale,
    stability_gamma,
    stability_profile,
)
from .metrics import (
    adjusted_rand_index,
    layer_ari_curve,
    normalized_variation_of_information,
    per_layer_similarity,
    success_rate,
)
from .spectral import (
    apply_filtered_operator,
    chebyshev_coefficients,
    layer_null_basis,
    leading_eigenpairs,
    select_lambda_star,
)
from .temporal_graph import (
    InterLayerWeights,
    SupraSystem,
    TemporalNetwork,
    build_supra_system,
    constant_weights,
    lart_weights,
    load_temporal_network,
)
from .wavelet import (
    WaveletFilterSpec,
    correlation_distances,
    derive_filter_and_scales,
    evaluate_filter,
    wavelet_matrix_exact,
    wavelet_sketch_fast,
)

__version__ = "0.1.0"
