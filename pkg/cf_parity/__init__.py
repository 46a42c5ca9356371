from cf_parity.errors import (
    CfParityError,
    ExperimentError,
    FitError,
    InputError,
    ModelError,
    RowError,
    SchemaError,
)
from cf_parity.graphs import Admg, d_separated, implies_dp, parse_graph, reference_graph
from cf_parity.causal_models import BinaryTreatmentGaussianModel, counterfactual_posterior, sample_cross_world
from cf_parity.fairness import adversary_rho, cf_gap, dp_gap
from cf_parity.repair import fit_repair, repair_batch, repair_score
from cf_parity.RankExperiment import RankExperiment
