from .effects import (
    Estimator,
    IdGraph,
    estimate,
    id_graphs,
    ida_effect,
    parent_set_weights,
    regress_beta,
)
from .errors import (
    CciError,
    DegenerateDataError,
    FormatError,
    GraphError,
    InconsistentGraphError,
    MechanismError,
    UsageError,
    VariableMismatchError,
)
from .graph import (
    Cpdag,
    Dag,
    Mpdag,
    Pdag,
    apply_meek_rules,
    consistent_extensions,
    count_extensions,
    cpdag_of,
    first_extension,
    identifies_effect,
    is_d_separated,
    local_orientation,
    satisfies_adjustment_criterion,
)
from .learn import fisher_z_independent, pc_learn
from .mechanism import (
    audit_trace,
    data_maximizing_step,
    fair_step,
    improvement_rate,
    reward_estimator,
    rho_reward,
    rho_upper_bound,
    run_mechanism,
    run_single_agent,
    shapley,
    simulate,
    standard_step,
    utility,
)
from .models import (
    AgentSpec,
    AgentStep,
    AuditReport,
    BiasSpec,
    EffectDistribution,
    GaussianComponent,
    MechanismConfig,
    MechanismKind,
    MechanismTrace,
    PcConfig,
    Scenario,
    SemGenerator,
    TimestepRecord,
    ValuationReport,
)
from .server import Mediator
from .synth import (
    Dataset,
    LinearSem,
    interventional_mean_oracle,
    pool,
    random_dag,
    random_sem,
    sample,
    total_effect_oracle,
)
from .valuation import (
    dsid,
    falsely_identified_pairs,
    kl_gaussian,
    kl_mixture,
    pair_falsely_identified,
    v_dsid,
    v_kl,
    valuation,
)

__version__ = "0.1.0"

__all__ = [
    # Graphs
    "Pdag",
    "Dag",
    "Mpdag",
    "Cpdag",
    "apply_meek_rules",
    "cpdag_of",
    "consistent_extensions",
    "first_extension",
    "count_extensions",
    "local_orientation",
    "is_d_separated",
    "satisfies_adjustment_criterion",
    "identifies_effect",
    # Ground truth
    "LinearSem",
    "Dataset",
    "random_dag",
    "random_sem",
    "sample",
    "pool",
    "total_effect_oracle",
    "interventional_mean_oracle",
    # Learning and effects
    "fisher_z_independent",
    "pc_learn",
    "Estimator",
    "IdGraph",
    "regress_beta",
    "parent_set_weights",
    "ida_effect",
    "estimate",
    "id_graphs",
    # Valuation
    "pair_falsely_identified",
    "falsely_identified_pairs",
    "dsid",
    "v_dsid",
    "kl_gaussian",
    "kl_mixture",
    "v_kl",
    "valuation",
    # Mechanisms
    "Mediator",
    "improvement_rate",
    "utility",
    "run_single_agent",
    "standard_step",
    "reward_estimator",
    "data_maximizing_step",
    "shapley",
    "rho_reward",
    "rho_upper_bound",
    "fair_step",
    "run_mechanism",
    "audit_trace",
    "simulate",
    # Models
    "PcConfig",
    "BiasSpec",
    "AgentSpec",
    "MechanismKind",
    "MechanismConfig",
    "SemGenerator",
    "Scenario",
    "GaussianComponent",
    "EffectDistribution",
    "ValuationReport",
    "AgentStep",
    "TimestepRecord",
    "MechanismTrace",
    "AuditReport",
    # Errors
    "CciError",
    "GraphError",
    "InconsistentGraphError",
    "VariableMismatchError",
    "DegenerateDataError",
    "FormatError",
    "MechanismError",
    "UsageError",
]
