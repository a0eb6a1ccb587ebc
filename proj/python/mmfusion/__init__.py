# SPDX-License-Identifier: Apache-2.0
"""Python access to the mmfusion C++ library."""

import json as _json

from ._core import (  # noqa: F401
    ExperimentSpec,
    GradientEntry,
    Sample,
    Split,
    Vocabulary,
    __version__,
    auc_binary,
    auc_weighted_ovr,
    bootstrap_ci,
    confusion_matrix,
    encode_text,
    f1_weighted,
    fit_vocabulary,
    generate_synthetic,
    map_rating,
    preprocess_text,
    run_gradient_suite,
    spec_keys,
    split_oot,
    split_oou,
    split_random,
    split_words,
)
from . import _core


def run_experiment(spec):
    """Runs one experiment, writes its artifacts to spec["out"], returns the metrics as a dict."""
    return _json.loads(_core._run_experiment_json(spec))


def run_sweep(spec):
    """All 16 (group, base) rows as dicts, ordered by weighted AUC."""
    return _core._run_sweep(spec)
