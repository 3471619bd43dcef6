"""Aspect-conditioned HRRP recognition on simulated ship targets.

Modules
    geometry    angle wrapping, line of sight, aspect, LRP
    simulator   point-scatterer targets, trajectories, profile rendering, datasets
    kalman      causal constant-velocity tracking and aspect estimation
    nn          numpy reverse-mode autodiff, layers, conditioning, checkpoints
    models      MLP / ConvNet / ResNet-1D backbones and sequence aggregators
    pipeline    splits, sequences, training, evaluation
    cli         the ``hrrp-lab`` command
"""

__version__ = "0.1.0"
