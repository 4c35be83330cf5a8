from ._mixformer import (
    Model,
    cross_entropy,
    gradcheck,
    op_flops,
    train_toy,
    variant_names,
    window_partition,
    window_round_trip,
)

__all__ = [
    "Model",
    "cross_entropy",
    "gradcheck",
    "op_flops",
    "train_toy",
    "variant_names",
    "window_partition",
    "window_round_trip",
]
