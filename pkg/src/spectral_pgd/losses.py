"""Training objectives for the two-stage pipeline.

The structural distillation loss compares low-pass gated views of the
stage-1 prediction and a pseudo-label teacher, so supervision flows only
through the trusted low band while the gate itself stays learnable. The
cross-stage consistency loss compares high-pass gated views of stage 2
against a frozen copy of stage 1, transferring detail without letting
the second stage drag the first. Plain mean-squared terms cover ground
truth, reconstruction, and the noise-prediction baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

from spectral_pgd.ndtensor.tensor import (
    ShapeError,
    Tensor,
    _coerce,
    mean,
    stop_gradient,
)
from spectral_pgd.spectral import GateParams, highpass_gate, lowpass_gate

__all__ = [
    "LossWeights",
    "depth_loss",
    "dm_loss",
    "mse",
    "recon_loss",
    "sgc_loss",
    "sgd_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: alpha scales distillation, beta consistency, gamma reconstruction."""

    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


def mse(a, b) -> Tensor:
    """Mean squared error over all elements; shapes must match exactly."""
    a = _coerce(a)
    b = _coerce(b, like=a)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse operands differ in shape: {a.data.shape} vs {b.data.shape}")
    return mean((a - b) ** 2)


def sgd_loss(z_prior, z_teacher, phi: GateParams) -> Tensor:
    """Low-band distillation of the stage-1 prediction toward a teacher.

    The teacher tensor is detached, so gradients reach the prediction and
    the gate parameters but never the pseudo labels.
    """
    z_prior = _coerce(z_prior)
    teacher = stop_gradient(_coerce(z_teacher, like=z_prior))
    return mse(lowpass_gate(z_prior, phi), lowpass_gate(teacher, phi))


def sgc_loss(z_geo, z_prior, psi: GateParams) -> Tensor:
    """High-band consistency between stages.

    Stage 1 acts as a frozen target: its gated view is detached in full,
    so neither the stage-1 activations nor the gate receive gradients
    through the target branch.
    """
    z_geo = _coerce(z_geo)
    z_prior = _coerce(z_prior, like=z_geo)
    target = stop_gradient(highpass_gate(z_prior, psi))
    return mse(highpass_gate(z_geo, psi), target)


def dm_loss(eps_pred, eps) -> Tensor:
    """Noise-prediction objective of the stochastic baseline."""
    return mse(eps_pred, eps)


def recon_loss(z_recon, z_x) -> Tensor:
    """Latent self-reconstruction error."""
    return mse(z_recon, z_x)


def depth_loss(z_geo, z_gt, sgd_term, sgc_term, weights: LossWeights) -> Tensor:
    """Supervised geometry error plus weighted distillation and consistency terms.

    ``sgd_term`` and ``sgc_term`` are scalar losses (or plain zeros when a
    batch carries no such supervision).
    """
    return mse(z_geo, z_gt) + weights.alpha * _coerce(sgd_term) \
        + weights.beta * _coerce(sgc_term)


def total_loss(depth_term, recon_term, weights: LossWeights) -> Tensor:
    """Full objective: depth branch plus gamma-weighted reconstruction."""
    return _coerce(depth_term) + weights.gamma * _coerce(recon_term)
