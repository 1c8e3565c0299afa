"""Classical and quantum causal models: d-separation, do-calculus, process operators and circuits."""

from . import tolerances
from .errors import (
    ConsistencyError,
    ConstructionError,
    DegeneracyError,
    DimensionError,
    InputError,
    PreconditionError,
    QCausalError,
    SignatureMismatchError,
    UnsupportedQueryError,
)
from .graphs import Dag, d_separated, mutilate, sr_partition
from .tensor_core import LabeledOperator, SpaceSig, Wire
from .quantum import ProcessOperator, Qcm, check_markov, sigma_from_qcm, validate

__version__ = "0.1.0"

__all__ = [
    "tolerances",
    "QCausalError",
    "SignatureMismatchError",
    "DimensionError",
    "PreconditionError",
    "DegeneracyError",
    "ConstructionError",
    "ConsistencyError",
    "UnsupportedQueryError",
    "InputError",
    "Dag",
    "d_separated",
    "mutilate",
    "sr_partition",
    "Wire",
    "SpaceSig",
    "LabeledOperator",
    "ProcessOperator",
    "Qcm",
    "sigma_from_qcm",
    "check_markov",
    "validate",
]
