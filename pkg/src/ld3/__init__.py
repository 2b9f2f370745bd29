"""Local causal discovery of an outcome's parents for direct-discrimination audits."""

from ld3.algorithm import Ld3Config, Ld3Report, evaluate_sdc, run_ld3
from ld3.citest import CiDecision, CiQuery, TestCounter, chi_square, fisher_z, make_tester, oracle_test
from ld3.estimate import AdjustmentSpec, EstimationError, WcdeEstimate, cde_at_m, wcde_ols, wcde_stratified
from ld3.evalkit import ParentMetrics, brute_force_parents, run_benchmark, score_parents
from ld3.graph import (
    Dag,
    GraphError,
    PartitionLabel,
    d_separated,
    load_fixture,
    oracle_a_de,
    oracle_partition,
    parents,
    random_er_dag,
    sfm_project,
)
from ld3.scm import (
    Dataset,
    DiscreteScm,
    LinearGaussianScm,
    fixture_scm,
    sample_discrete,
    sample_linear,
    true_wcde_discrete,
    true_wcde_linear,
)

__version__ = "0.1.0"
