"""Lifted exact inference for parameterised probabilistic dynamic models."""

from .fojt import FOJTree, Parcluster, answer_query, build_fojt, enter_evidence, pass_messages
from .guard import GroundingReport, expand, fuse, prevent_all
from .ldjt import build_temporal_structures, compute_interface, run, run_unrolled
from .lve import GroundingCounter
from .model import PDM, PM, PRV, Evidence, Logvar, ModelError, ParseError, Parfactor, load_model, parse_model

__version__ = "0.1.0"

__all__ = [
    "Evidence",
    "FOJTree",
    "GroundingCounter",
    "GroundingReport",
    "Logvar",
    "ModelError",
    "PDM",
    "PM",
    "PRV",
    "Parcluster",
    "ParseError",
    "Parfactor",
    "answer_query",
    "build_fojt",
    "build_temporal_structures",
    "compute_interface",
    "enter_evidence",
    "expand",
    "fuse",
    "load_model",
    "parse_model",
    "pass_messages",
    "prevent_all",
    "run",
    "run_unrolled",
]
