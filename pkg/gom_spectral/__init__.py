# -*- encoding: utf-8 -*-
"""Spectral estimation of generalized grade-of-membership models, also
contains shortcuts for the most used objects"""
from __future__ import absolute_import

__version__ = "0.1.0"

from .data_model import (  # noqa: E402
    BlockPartition,
    Family,
    FlatMatrix,
    ModelParams,
    QuasiTensor,
    flatten,
)
from .estimator import FitConfig, GomEstimate, fit  # noqa: E402
from .exceptions import GomError  # noqa: E402
from .gibbs import GibbsConfig, gibbs_fit  # noqa: E402
from .simulate import SimScenario, run_replications, simulate_data  # noqa: E402
from .vertex_hunting import PruneConfig  # noqa: E402
