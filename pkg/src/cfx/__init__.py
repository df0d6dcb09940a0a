"""Counterfactual effect decomposition for multi-agent MDPs.

The usual flow: build or load a model (:func:`compile_mmdp`,
:func:`load_any`, or an environment builder), pick an :class:`EffectQuery`
on a factual :class:`Trajectory`, then call :func:`explanation_formula`,
:func:`shapley_exact` and :func:`r_sse_icc`, or :func:`decompose` for all
three at once.
"""

from .attribution import (
    IccReport,
    ShapleyReport,
    conditional_variance,
    exact_shapley,
    gini,
    r_sse_icc,
    sampled_shapley,
    shapley_exact,
    shapley_sampled,
)
from .effects import EffectEstimate, ExplanationResult, ase_subset, explanation_formula, r_sse, sse, tcfe, tot_ase
from .errors import AbductionError, CfxError, ConfigError, InputError, ModelError, OracleInfeasible, ReplayError
from .inference import BranchSpec, PosteriorMap, abduct, counterfactual_sample, sample_posterior
from .mmdp import MmdpSpec, PolicySet, chi_square_check, compile_mmdp, consistency_check
from .modelio import load_any, load_mmdp, load_model, load_trajectory, save_mmdp, save_model
from .oracle import exact_conditional_variances, exact_effects, exact_joint_distribution
from .query import EffectQuery, ResponseSpec
from .reports import DecompositionReport, decompose
from .scm import (
    Cpd,
    InterventionSet,
    NoiseVector,
    ScmModel,
    Trajectory,
    VarId,
    check_measure,
    check_noise_monotonicity,
    sample_prior,
    solve,
    structural_eval,
)

__all__ = [name for name in dir() if not name.startswith("_")]
