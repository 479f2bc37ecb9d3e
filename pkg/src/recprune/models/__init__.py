from .lcnn import Lcnn, lcnn_forward
from .orcnn import Orcnn, orcnn_forward, orcnn_loss_and_grad, orcnn_outputs, patch_stack, preactivations

__all__ = [
    "Lcnn",
    "lcnn_forward",
    "Orcnn",
    "orcnn_forward",
    "orcnn_loss_and_grad",
    "orcnn_outputs",
    "patch_stack",
    "preactivations",
]
