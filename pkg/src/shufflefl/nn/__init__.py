"""Small from-scratch networks: MLP and RNN with manual backprop, forward-only transformer."""
from .functional import (
    accuracy,
    adam_step,
    backward_mlp,
    backward_rnn,
    cross_entropy,
    forward,
    forward_mlp,
    forward_rnn,
    forward_transformer,
    loss_and_grads,
    mean_loss,
    one_hot,
    train_local,
)
from .estimators import MlpClassifier, RnnClassifier
from .models import AdamState, LinearLayer, MlpModel, RnnModel, TinyTransformer

__all__ = [
    "AdamState", "LinearLayer", "MlpClassifier", "MlpModel", "RnnClassifier", "RnnModel", "TinyTransformer", "accuracy",
    "adam_step", "backward_mlp", "backward_rnn", "cross_entropy", "forward", "forward_mlp",
    "forward_rnn", "forward_transformer", "loss_and_grads", "mean_loss", "one_hot", "train_local",
]
