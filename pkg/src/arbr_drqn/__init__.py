"""Sentiment-gated DRQN trading: ARBR indicators, PCA features, an LSTM Q-network
and an exact-accounting backtester."""

__version__ = "0.1.0"
