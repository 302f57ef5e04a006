"""Adaptive biasing potentials learned by KL-divergence minimization."""
