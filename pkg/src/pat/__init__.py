"""Multi-resolution codebook tokenization of frozen encoder feature
pyramids, with decoupled pixel/semantic token branches and a shared
decoder for reconstruction and open-set segmentation."""

from .config import RunConfig, load_config
from .gradcheck import grad_check
from .model import PatModel, PatTokenizer
from .quantize import Codebook, attn, hs_attn, vmf_vq, vq
from .tensor import Tensor

__all__ = [
    "RunConfig",
    "load_config",
    "grad_check",
    "PatModel",
    "PatTokenizer",
    "Codebook",
    "attn",
    "hs_attn",
    "vq",
    "vmf_vq",
    "Tensor",
]
__version__ = "0.1.0"
