"""Expressive neural TTS toolkit."""

import torch  # noqa: F401  loads libtorch before the extension

from ._etts import (
    ConfigError,
    DataError,
    FormatError,
    ShapeError,
    beta_kld,
    d_hinge_loss,
    kld_closed_form,
    load_config,
    load_wav,
    log_mel,
    mol_log_prob,
    ops_at_step,
    save_wav,
    selfcheck,
)

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "ShapeError",
    "beta_kld",
    "d_hinge_loss",
    "kld_closed_form",
    "load_config",
    "load_wav",
    "log_mel",
    "mol_log_prob",
    "ops_at_step",
    "save_wav",
    "selfcheck",
]
