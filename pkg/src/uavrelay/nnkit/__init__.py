from .tensor import (
    Tensor,
    absval,
    avg_pool2d,
    as_tensor,
    concat,
    conv2d,
    elu,
    matmul,
    narrow0,
    no_grad,
    relu,
    reshape,
    set_strict_checks,
    sigmoid,
    tanh,
    tmean,
    tsum,
)
from .nn import (
    Dense,
    GruCell,
    ParamStore,
    ResidualExtractor,
    create_gru_params,
    dense,
    gru_cell,
    residual_extractor,
)
from .optim import Adam, sgd_adam_step
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "Tensor", "absval", "avg_pool2d", "as_tensor", "concat", "conv2d", "elu",
    "matmul", "narrow0", "no_grad", "relu", "reshape", "set_strict_checks", "sigmoid",
    "tanh", "tmean", "tsum",
    "Dense", "GruCell", "ParamStore", "ResidualExtractor", "create_gru_params",
    "dense", "gru_cell", "residual_extractor",
    "Adam", "sgd_adam_step", "load_arrays", "save_arrays",
]
