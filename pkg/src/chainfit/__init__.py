"""Discrete chain factor graphs fit by generalized iterative proportional fitting."""

from .errors import (
    BracketFailure,
    ChainFitError,
    ImpossibleEvidence,
    LineSearchFailure,
    NonConvergence,
    NonPositiveDenominator,
    NonPositiveFactor,
    NonPositiveWeight,
    NonSigmoidShape,
    SchemaError,
    UnknownState,
    UnknownVariable,
    UnsupportedRegime,
    ValidationError,
    ZeroDenominator,
    ZeroModelProbability,
    ZeroNormalizer,
)
from .model import (
    ChainFactorGraph,
    ComponentSet,
    PotentialTable,
    ValidationReport,
    Variable,
    VariableSpace,
    Violation,
    bayes_net,
    component_conditional,
    component_normalizer,
    joint_probability,
    joint_table,
    rescale_potential,
    undirected_model,
    validate_graph,
)
from .inference import (
    Dataset,
    Evidence,
    Mark,
    MarginalTable,
    Record,
    complete_dataset,
    completed_marginal,
    completed_marginals,
    conditional_log_likelihood,
    divergence_to_target,
    log_likelihood,
    posterior_marginal,
)
from .ipf import (
    CycleRecord,
    FitConfig,
    FitTrace,
    fit_ml,
    g_alpha,
    ipf_update,
    random_schedule,
)
from .cml import (
    LagrangeState,
    Regime,
    RegimeClassification,
    classify_regime,
    constraint_value,
    fit_cml,
    g_alpha_conditional,
    h_alpha,
    lambda_bracket,
    normalize_joint_parents,
    psi_lambda,
    solve_lambda,
    update_clamped_parents,
    update_joint_parents,
)
from .sbn import (
    SigmoidNet,
    fit_cg,
    fit_sd,
    generate_patterns,
    graph_to_weights,
    pair_cluster_ids,
    sbn_gradient,
    sbn_log_likelihood,
    weights_to_graph,
)
from .fileio import (
    heart_disease_model,
    heart_disease_space,
    parse_dataset,
    parse_model,
    read_trace_csv,
    table1_dataset,
    write_dataset,
    write_model,
    write_trace_csv,
)

__version__ = "0.1.0"
