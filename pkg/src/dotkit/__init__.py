"""dotkit: an analysis engine for fNIRS and diffuse optical tomography.

Subpackages by task:

- :mod:`dotkit.tensor`, :mod:`dotkit.units`: labeled, unit-carrying arrays
- :mod:`dotkit.recording`, :mod:`dotkit.stim`, :mod:`dotkit.io`: the
  Recording container and its portable on-disk format
- :mod:`dotkit.quality`, :mod:`dotkit.frequency`: channel quality metrics
  and filtering
- :mod:`dotkit.preproc`, :mod:`dotkit.motion`, :mod:`dotkit.epochs`:
  Beer-Lambert conversion, motion correction, epoching and features
- :mod:`dotkit.glm`: design matrices, fits, contrasts and uncertainty
- :mod:`dotkit.imgrecon`: surface-based image reconstruction
- :mod:`dotkit.sim`, :mod:`dotkit.toy`: ground-truth augmentation
- :mod:`dotkit.decomp`: the regularized CCA family
- :mod:`dotkit.pipeline`, :mod:`dotkit.cli`: the config-driven runner
"""

from . import errors
from .recording import LabeledPoints, PointType, Recording
from .stim import StimEvent, StimTable
from .tensor import (
    LabeledTensor,
    binary_op,
    build_labeled_tensor,
    concat_tensors,
    reduce_dim,
    select,
    stack_tensors,
)
from .units import Quantity, parse_quantity, parse_unit

__version__ = "0.1.0"

__all__ = [
    "LabeledPoints",
    "LabeledTensor",
    "PointType",
    "Quantity",
    "Recording",
    "StimEvent",
    "StimTable",
    "binary_op",
    "build_labeled_tensor",
    "concat_tensors",
    "errors",
    "parse_quantity",
    "parse_unit",
    "reduce_dim",
    "select",
    "stack_tensors",
]
