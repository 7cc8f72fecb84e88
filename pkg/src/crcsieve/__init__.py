"""Sieve estimation of linear random-coefficient models whose slopes are
correlated with the regressors."""

__version__ = "0.1.0"

from .basis import (
    BasisSpec,
    ConstrainedBasis,
    ConstraintSet,
    SieveBlock,
    assemble_sieve_block,
    build_constraints,
    build_raw_basis,
    constrain_basis,
)
from .comparators import (
    ControlFunctionResult,
    OlsResult,
    fit_control_function,
    fit_ols,
)
from .dataio import (
    Dataset,
    RunConfig,
    load_csv,
    load_fit_result,
    save_fit_result,
    synthetic_regional_dataset,
    write_synthetic_regional_csv,
)
from .design import (
    DesignMatrices,
    build_design,
    build_w,
    default_specs,
)
from .errors import (
    BootstrapInstabilityError,
    CollinearityError,
    CrcsieveError,
    DataError,
    DegenerateBasisError,
    DegenerateTruncationError,
    DomainError,
    EmptyInputError,
    IdentificationError,
    ParseError,
    ReplicationError,
    SchemaError,
    SelectionError,
    ShapeError,
    WeakInstrumentError,
)
from .estimator import (
    FitResult,
    FunctionEstimate,
    ProfileSolver,
    evaluate_b,
    predict,
    profile_fit,
)
from .montecarlo import (
    DEFAULT_GRID,
    CoverageResult,
    StudyResult,
    band_coverage_study,
    generate_data,
    make_truth,
    run_study,
)
from .selection import (
    BootstrapBands,
    CvReport,
    cross_validate,
    cv_select_k,
    wild_bootstrap_bands,
)

__all__ = [name for name in dir() if not name.startswith("_")]
