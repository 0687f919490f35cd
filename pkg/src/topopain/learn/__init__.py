"""Regression machinery: SMO-trained SVR, balanced triplets, boosted fusion, MLP."""
from .ensemble import (FAMILIES, Fusion, LayoutError, PainModel, Scaler, Triplet,
                       balanced_indices, crossfit_groups, predict_pain, train_family_triplet,
                       train_fusion, train_pain_model)
from .mlp import Mlp, MlpDivergence, MlpParams, loss_and_grad, mlp_predict, mlp_train
from .svr import SvrError, SvrModel, SvrParams, rbf_kernel, svr_predict, svr_train

__all__ = [
    "FAMILIES", "Fusion", "LayoutError", "PainModel", "Scaler", "Triplet", "balanced_indices",
    "crossfit_groups", "predict_pain", "train_family_triplet", "train_fusion",
    "train_pain_model", "Mlp", "MlpDivergence", "MlpParams", "loss_and_grad", "mlp_predict",
    "mlp_train", "SvrError", "SvrModel", "SvrParams", "rbf_kernel", "svr_predict", "svr_train",
]
