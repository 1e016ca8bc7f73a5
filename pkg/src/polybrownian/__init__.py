"""Brownian motion, harmonic maps, and their verification on
piecewise-flat simplicial complexes of dimension one and two."""

from .complexes import (
    AdmissibilityReport,
    ComplexError,
    Link,
    LinkUndefinedError,
    Point,
    PointClass,
    Polyhedron,
    build_complex,
    bundled_complex,
    classify_point,
    link_at,
    load_complex,
    make_star,
    sample_point,
    validate_admissible,
)
from .geometry import (
    Atlas,
    ChartField,
    Codim2HitError,
    EdgeInterval,
    FlowState,
    GeodesicError,
    Region,
    StarRegion,
    TangentialInterval,
    WholeComplex,
    broken_geodesic_length,
    exponential_map,
    geodesic_step,
    get_atlas,
    make_flow_state,
    normal_coordinates,
    normal_distance_field,
    normal_square_field,
    sample_link_direction,
    tangential_coordinate_field,
)
from .process import (
    Estimate,
    IsotropicConfig,
    PathSample,
    StoppedPath,
    brownian_ensemble,
    estimate,
    isotropic_ensemble,
    point_on_edge,
    point_on_face,
    sample_walsh_star,
    simulate_brownian,
    simulate_isotropic,
    stop_at_exit,
    walsh_restricted_moments,
    write_paths_csv,
)
from .operators import (
    DiscreteField,
    GeneratorDomainError,
    Mesh,
    OperatorMatrix,
    assemble_stiffness,
    build_mesh,
    dirichlet_energy,
    estimate_generator_mc,
    laplacian_in_simplex,
    lumped_mass,
    normal_trace_sum,
    tilde_laplacian,
)
from .verify import (
    MartingaleGrid,
    TestReport,
    branch_probability_test,
    calibration_counts,
    calibration_report,
    generator_consistency_test,
    martingale_test,
    morphism_test,
    run_suite,
    sampler_agreement_test,
    skeleton_avoidance_test,
    walsh_moment_test,
)
from .harmonic import (
    BoundaryCondition,
    ConvexTester,
    DilationReport,
    TargetManifold,
    compute_dilation,
    pullback,
    solve_dirichlet,
    solve_harmonic_map_flat,
    weakly_harmonic_residual,
)

__version__ = "0.1.0"
