"""Data, training, checkpoints, configuration and evaluation."""
