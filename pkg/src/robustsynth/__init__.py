"""Controller synthesis for parametric stochastic systems with certified bounds.

Pipeline: compile a co-safe temporal formula to a DFA, grid the nominal model
into a finite MDP with an (ε₂, δ₂) discretization certificate, certify the
model-uncertainty step (ε₁, δ₁) through min-Gaussian couplings, compose both
transitively, run robust value iteration on the implicit MDP×DFA product, and
refine the resulting policy to a parameter-free controller whose certified
satisfaction bound can be validated by closed-loop Monte Carlo.
"""

from ._backend import HAVE_COMPILED, backend_name, default_threads
from .abstraction import (
    AbstractMdp,
    Grid,
    abstract_linear,
    abstract_nonlinear,
    build_grid,
    input_sampling,
    linear_abstraction_certificate,
)
from .certificates import (
    CouplingSpec,
    SsrCertificate,
    compose_transitive,
    coupling_mass,
    delta_linear,
    delta_nonlinear,
    nonlinear_delta_table,
    nonlinear_model_certificate,
    numeric_coupling_oracle,
    vdp_disturbance_bound,
)
from .config import ConfigError, RunConfig, load_config, validate_config
from .models import (
    GaussianKernel,
    LabelingMap,
    LinearModel,
    NonlinearModel,
    UncertaintyBox,
    ball_letters,
    label,
    make_nonlinear,
    make_vanderpol,
    rect_probability,
    std_normal_cdf,
    step,
)
from .refinement import (
    RefinedController,
    SimulationReport,
    check_refinement_validity,
    refine,
    simulate_closed_loop,
    validate_bound,
)
from .scltl import (
    Dfa,
    Formula,
    FormulaSyntaxError,
    StateBudgetError,
    UnknownAtomError,
    compile_to_dfa,
    export_dfa,
    good_prefix_oracle,
    import_dfa,
    parse_formula,
)
from .synthesis import (
    Policy,
    SuccessorCache,
    ValueTable,
    export_value_map,
    robust_bellman_backup,
    robust_sat,
    sat_map,
    value_iterate,
)

__version__ = "0.1.0"
