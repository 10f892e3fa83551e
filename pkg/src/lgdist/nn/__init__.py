from lgdist.nn.tensor import Tensor, no_grad
from lgdist.nn.optim import AdamW

__all__ = ["Tensor", "no_grad", "AdamW"]
