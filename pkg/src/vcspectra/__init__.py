"""High-dimensional spectral theory for variance-components estimators in
balanced mixed models: bulk laws of mean-square combinations, outlier
eigenvalue/eigenvector predictions, and de-aliased spike estimation by
sphere sweep."""

from .covmodel import (
    ModelSpec,
    SpikedCovariance,
    SpikeSubspace,
    estimate_noise_variances,
    model_from_json,
    model_to_json,
    sigma_hat,
    simulate,
    spike_subspace,
)
from .design import (
    DesignSpec,
    MeanSquares,
    build_design,
    design_from_json,
    design_to_json,
    manova_coefficients,
    mean_squares,
)
from .errors import InSupportError, NumericalError, PoleError
from .estimator import (
    ObservedLocus,
    SpikeEstimate,
    SweepConfig,
    estimate_spikes,
    observed_locus,
)
from .mp_law import (
    GeneralF,
    MPContext,
    SupportInfo,
    build_general_f,
    m0_complex,
    m0_general,
    m0_real,
    mp_context,
    support,
    t_w_general,
    z0_eval,
    z0_prime,
)
from .numerics import (
    EigenDecomposition,
    derive_seed,
    gaussian_matrix,
    real_poly_roots,
    sym_eig,
)
from .spike_theory import (
    OutlierPrediction,
    TFunctions,
    clt_variance,
    population_locus,
    predicted_outliers,
    t_vector,
    taylor_biases_oneway,
    w_matrix,
)

__version__ = "0.1.0"
