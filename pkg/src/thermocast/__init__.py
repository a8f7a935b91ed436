"""Physics-informed ConvLSTM forecasting of layered-deposition temperature fields."""

__version__ = "0.1.0"
