"""Gate perception pipeline: pencil filtering, a grid-output CNN, synthetic
fish-eye data, evaluation sweeps and EKF gate mapping."""

__version__ = "0.1.0"
