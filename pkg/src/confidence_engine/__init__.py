"""Gaussian influence-diagram evidence synthesis for binomial trial data."""

from importlib import resources
from pathlib import Path

from .dsl import compile_model, load, parse, serialize
from .gaussian import (
    Diagram,
    GaussNode,
    JointGaussian,
    VariableId,
    condition,
    marginal,
    reverse_arc,
    to_joint,
    topological_order,
    validate,
)
from .solver import SolveOptions, SolveReport, natural_report, solve
from .transforms import PriorSpec, Scale, StudyArm, rct_summary

__version__ = "0.1.0"

__all__ = [
    "Diagram", "GaussNode", "JointGaussian", "PriorSpec", "Scale", "SolveOptions",
    "SolveReport", "StudyArm", "VariableId", "bundled_model", "compile_model", "condition",
    "load", "marginal", "natural_report", "parse", "rct_summary", "reverse_arc",
    "serialize", "solve", "to_joint", "topological_order", "validate",
]


def bundled_model(name: str) -> Path:
    """Path of a model shipped with the package, e.g. ``bundled_model("tpa")``."""
    fname = name if name.endswith(".cid") else name + ".cid"
    path = Path(str(resources.files(__package__) / "models" / fname))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled model named {name!r}")
    return path
