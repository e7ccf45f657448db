"""rostlab: a numerical laboratory for random overlap structures.

Build finite sampling measures from exactly-enumerated spin-glass Gibbs
measures and from truncated Poisson-Dirichlet cascades, push them through
cavity mappings, and test distributional invariances, overlap identities,
and variational free-energy bounds with seeded Monte Carlo statistics.
"""

__version__ = "0.1.0"

from .cascades import (
    PdWeights,
    RpcSpec,
    build_rpc,
    build_two_sphere,
    build_uncoupled_rem,
    pd_invariance_check,
    rem_ensemble,
    rpc_ensemble,
    sample_poisson_dirichlet,
    truncation_shift,
    two_sphere_ensemble,
    two_sphere_overlaps,
)
from .cavity import (
    CavityFieldSample,
    CavitySpec,
    apply_cavity_map,
    compose_check,
    compose_logweight_identity,
    empirical_linearization_check,
    gg_deficit,
    sample_cavity_field,
    sequence_stability_scan,
    stability_deficit,
)
from .gibbs import (
    FreeEnergyEstimate,
    GibbsTable,
    enumerate_gibbs,
    free_energy_mc,
    free_energy_p_derivative,
    gray_code_energies,
    lipschitz_free_energy_check,
    two_replica_overlap_moment,
)
from .measures import (
    DEFAULT_CATALOG,
    AtomicMeasure,
    CoordMeasure,
    GramMeasure,
    Monomial,
    OrthogonalMeasure,
    ProductMeasure,
    RostEnsemble,
    TreeMeasure,
    catalog,
    effective_dimension,
    exact_moments,
    fixed_ensemble,
    gibbs_ensemble,
    mc_moments,
    measure_from_gram,
    measure_from_json,
    measure_to_json,
    moment_vector,
    rost_distance,
    rost_from_gibbs,
    sample_overlap_matrix,
    support_radii,
    ultrametricity_score,
)
from .parisi import (
    AssIncrementReport,
    GuerraEvaluation,
    ParisiParams,
    ass_increment,
    guerra_rhs,
    minimize_guerra,
    parisi_functional_mc,
    parisi_lipschitz_check,
    parisi_recursion_rpc,
)
from .reporting import Estimate, MomentEntry, MomentReport, Z_THRESHOLD
from .spin_models import (
    DisorderRealization,
    MixedCouplings,
    ModelDescriptor,
    build_disorder,
    hamiltonian_eval,
    overlap,
)
