from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import Embedding, LayerNorm, Linear, Module, parameter
from .optim import Adam, clip_grad_norm, warmup_cosine
from .tensor import (
    ShapeError,
    Tensor,
    add,
    backward,
    cross_entropy,
    div,
    dropout,
    embedding,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    masked_fill,
    matmul,
    max_,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    softmax,
    sub,
    sum_,
    tanh,
    transpose,
)
