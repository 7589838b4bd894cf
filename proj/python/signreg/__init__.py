# Copyright 2026 The signreg Authors
# SPDX-License-Identifier: Apache-2.0
"""Signed input regularization (SIGN) with a small C++ training core."""

from ._core import (
    Model,
    ModelSpec,
    SignregError,
    aleatoric_loss,
    beta_samples,
    build_model,
    corrupt,
    cross_entropy,
    evaluate,
    load_checkpoint,
    mixup,
    project_rows,
    save_checkpoint,
    sign_transform,
    summed_jacobian,
    synthetic_blobs,
    train,
)

__all__ = [
    "Model",
    "ModelSpec",
    "SignregError",
    "aleatoric_loss",
    "beta_samples",
    "build_model",
    "corrupt",
    "cross_entropy",
    "evaluate",
    "load_checkpoint",
    "mixup",
    "project_rows",
    "save_checkpoint",
    "sign_transform",
    "summed_jacobian",
    "synthetic_blobs",
    "train",
]
__version__ = "0.1.0"
