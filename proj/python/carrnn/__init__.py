"""Continuous-time autoregressive recurrent networks (CAR-RNN, CAR-LSTM, CAR-GRU)."""

from ._core import (
    CELLS,
    bin_series,
    car_correct,
    evaluate,
    forward,
    gradcheck,
    predict,
    synth,
    train,
    transition_matrix,
)

__all__ = [
    "CELLS",
    "bin_series",
    "car_correct",
    "evaluate",
    "forward",
    "gradcheck",
    "predict",
    "synth",
    "train",
    "transition_matrix",
]
