"""From-scratch differentiable compute: tensors with reverse-mode autodiff,
dense/attention/pooling layers, trajectory losses, Adam with warm-up, and
finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from .gradcheck import check_gradients, finite_difference_gradient, max_relative_error
from .layers import (
    MLP,
    Dense,
    Embedding,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
    TransformerEncoder,
    TransformerEncoderLayer,
    attention_encode,
    maxpool_aggregate,
    uniform_init,
)
from .losses import l1_loss, l2_regularization, trajectory_loss
from .optim import Adam
from .tensor import (
    Tensor,
    absolute,
    add,
    as_tensor,
    concat,
    constant,
    dropout,
    fully_masked_rows,
    masked_max,
    masked_softmax,
    matmul,
    mean,
    mul,
    parameter,
    power,
    relu,
    reshape,
    take_rows,
    tensor_sum,
    transpose,
)


@dataclass(frozen=True)
class NetworkConfig:
    """Sizes of the policy network; defaults are the full-scale settings.

    history_len is the number of observed past steps (H), history_interval
    the stride between them in base time steps (I), and future_len the
    prediction horizon (T). The toy_* fields size the small MLP policies.
    """

    hidden_size: int = 128
    heads: int = 8
    dropout_rate: float = 0.1
    local_layers: int = 3
    global_layers: int = 6
    causal_layers: int = 3
    history_len: int = 15
    history_interval: int = 2
    future_len: int = 15
    toy_hidden: int = 128
    toy_layers: int = 2

    def __post_init__(self):
        if self.hidden_size % self.heads != 0:
            raise ValueError("heads must divide hidden_size")
        for name in (
            "hidden_size",
            "heads",
            "local_layers",
            "global_layers",
            "causal_layers",
            "history_len",
            "history_interval",
            "future_len",
            "toy_hidden",
            "toy_layers",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(doc: dict) -> "NetworkConfig":
        return NetworkConfig(**doc)
