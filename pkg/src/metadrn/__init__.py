"""Meta-DRN: a lightweight dilated residual network for 1-shot segmentation,
trained with MAML, first-order MAML, Meta-SGD or Reptile on a small numpy autodiff core."""

from .model import MetaDRN, ModelSpec, build, count_params
from .params import ParamSet
from .tensor import NumericError, Tensor, backward, default_dtype, no_grad

__version__ = "0.1.0"

__all__ = ["MetaDRN", "ModelSpec", "build", "count_params", "ParamSet", "NumericError", "Tensor",
           "backward", "default_dtype", "no_grad"]
