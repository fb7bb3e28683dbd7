from . import btf
from .conv import conv2d, conv_output_size, maxpool2d
from .gradcheck import finite_diff_check, numeric_grad
from .optim import Adam, AdamState, adam_step, cosine_decay
from .tensor import (
    DimensionError,
    GeometryError,
    NonFiniteError,
    Tape,
    Tensor,
    activation,
    add,
    as_tensor,
    backward,
    concat,
    concat_channels,
    dense,
    div,
    elementwise,
    exp,
    get_default_dtype,
    layer_norm,
    log,
    log_sigmoid,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    split_channels,
    square,
    sub,
    tanh,
    tsum,
)


def uniform_init(rng, shape, fan_in, dtype=None):
    """Weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / fan_in**0.5
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype or get_default_dtype()), requires_grad=True)
