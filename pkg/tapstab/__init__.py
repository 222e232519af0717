"""tapstab - threshold activation with bottom-k sketch oracles"""

__version__ = "0.1.0"

from .errors import (
    ClosureViolationError,
    EdgeListParseError,
    InstanceTooLargeError,
    OracleMismatchError,
    ResourceGuardError,
    TapError,
    TapInputError,
)
from .graph import DirectedGraph, generate_ba, generate_er, load_snap_edgelist
from .models import InfluenceSpec, influence_spec_from_document, sample_worlds
from .sketch import SketchOracle, build_oracles
from .stab import Estimator, StabConfig, StopReason, TapSolution, run_stab
from .baselines import celf_tap, evaluate_seed_set, exhaustive_tap
