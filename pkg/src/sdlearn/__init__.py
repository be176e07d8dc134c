"""Supervised dictionary learning.

Sparse coding with a class-dependent softmax cost, dictionary learning by
block coordinate descent, and classification by the smallest supervised
coding cost.
"""
from .classify import (
    ONE_VS_ALL,
    MULTICLASS,
    PAIRWISE,
    EnsembleModel,
    EvalReport,
    classify_batch,
    classify_ensemble,
    classify_one,
    evaluate,
    load_classifier,
    load_ensemble,
    rec_dictionary_probe,
    save_ensemble,
    train_ensemble,
)
from .data import (
    LabeledDataset,
    PatchSpec,
    extract_patches,
    load_dataset,
    load_idx,
    normalize_unit,
    save_dataset,
    split,
)
from .errors import (
    DataError,
    DimensionError,
    FormatError,
    SdlError,
    SolverError,
    TrainingAborted,
)
from .model import (
    BILINEAR,
    LINEAR,
    DecisionParams,
    Dictionary,
    Hyperparams,
    SdlModel,
    load_model,
    residual_cost,
    save_model,
    softmax_cost,
    softmax_cost_grad,
)
from .sparse_coding import (
    CodeResult,
    fpc_solve,
    hessian_bound,
    reconstructive_code,
    supervised_code,
    supervised_codes,
)
from .training import (
    REC,
    SDL_D,
    SDL_G,
    TrainConfig,
    TrainTrace,
    UpdatePolicy,
    dictionary_update,
    dictionary_update_grads,
    fit_posterior_classifier,
    init_dictionary,
    learn_reconstructive,
    omega_weights,
    rescale_lambda,
    train_sdl,
)

__version__ = "0.1.0"
