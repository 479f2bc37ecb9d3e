"""Synthetic data, IDX loading, checkpoints and CSV output."""
