"""Centered deep Boltzmann machines: training and quantitative analysis."""

from .model_core import (
    Dbm2Params,
    ExactEnumeration,
    FlatBmParams,
    energy_dbm,
    energy_flat,
    exact_enumerate,
    exact_loglik_gradient,
    uncenter,
)
from .sampler import (
    ParticleSet,
    conditional_flat,
    dbm_gibbs_clamped,
    dbm_gibbs_free,
    generate_digits,
    mean_representation,
)
from .trainer import DivergenceError, TrainConfig, TrainState, init_model, pcd_update, train
from .conditioning import (
    ConditioningResult,
    DirectionBasis,
    condition_number,
    hessian_vector_product,
    projected_hessian,
    random_direction_basis,
)
from .gen_eval import AisConfig, AisResult, ais_clamped_run, ais_free_run, anneal_schedule, estimate_loglik
from .disc_eval import (
    ResidualCurves,
    deep_kernels,
    projection_residual,
    rbf_kernel_matrix,
    residual_curves,
)

__version__ = "0.1.0"
