"""Causal discovery and effect estimation for ASR error analysis.

Derive discrete explanatory variables from utterance records, search for a
causal graph with PC or FCI, fit a Bayesian network on a DAG and report
average causal effects on substitution, deletion and insertion counts.
"""

__version__ = "0.1.0"

from .citest import CiResult, CiTestConfig, chi2_sf, ci_test, contingency, g2_statistic, pearson_statistic
from .discovery import FCI, PC, DiscoveryConfig, DiscoveryOutput, discover, fci, meek_closure, pc, pc_skeleton
from .features import (
    AlignmentResult,
    AsrFeatureExtractor,
    FeatureConfig,
    FrequencyLexicon,
    UtteranceRecord,
    align_wer,
    build_discrete_dataset,
    discretize_snr,
    tertile_bins,
)
from .graph import (
    DiscreteDataset,
    GraphError,
    Kind,
    Mark,
    MixedGraph,
    Role,
    SepsetMap,
    VariableSchema,
    d_separated,
    descendants,
    parents,
    to_dot,
)
from .quantify import (
    AceReport,
    CausalEffectEstimator,
    FittedNetwork,
    InterventionQuery,
    ace,
    ace_report,
    fit,
    interventional_expectation,
    orient_rest,
)
from .scm import ScmSpec, closed_form_ace, forward_sample, load_fixture, true_cpdag
from .validation import check_dataset
