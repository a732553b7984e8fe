"""Differentiable radial spectral gates.

A gate blends a signal with a frequency-filtered copy of itself:

    gate(z) = z + s * (filter(z, M) - z)

where the mask ``M`` is a sigmoid in the radial frequency norm,
``M(w) = sigmoid(beta * (kappa - |w|))``, so low frequencies pass and the
cutoff ``kappa``, slope ``beta``, and blend strength ``s`` are all
learnable scalars. The high-pass variant uses the complementary mask
``1 - M``, which makes a strength-1 low/high pair sum back to the input.

``spectral_filter`` is the one custom autodiff primitive: its forward is
``real(ifft2(M * fft2(z)))`` and both adjoints are closed-form. For a
real mask the filter operator is self-adjoint, so the input gradient is
the same filter applied to the upstream gradient; the mask gradient is
the normalized cross-spectrum of input and upstream gradient.
"""

from __future__ import annotations

import numpy as np

from spectral_pgd.ndtensor.fourier import fft2_array, frequency_grid, ifft2_array
from spectral_pgd.ndtensor.tensor import (
    ShapeError,
    Tensor,
    _coerce,
    _make,
    clip,
    get_default_dtype,
    sigmoid,
    softplus,
    softplus_inverse,
)

__all__ = [
    "KAPPA_MAX",
    "GateParams",
    "gate_mask",
    "highpass_gate",
    "lowpass_gate",
    "spectral_filter",
]

# radial norm of the grid corner; no mask cutoff can usefully exceed it
KAPPA_MAX = float(np.sqrt(2.0) / 2.0)

# Lower clamp for the learnable cutoff. Early in training the distillation
# loss can be driven down by closing the passband entirely; a small floor
# keeps the gate operational without constraining any useful setting.
KAPPA_FLOOR = 0.02


def spectral_filter(z, mask) -> Tensor:
    """Apply a real radial mask to ``z`` in the frequency domain.

    ``z`` has shape ``(..., H, W)`` and ``mask`` has shape ``(H, W)``; the
    mask broadcasts over leading axes. Returns the real part of the
    inverse transform in the dtype of ``z``.
    """
    z = _coerce(z)
    mask = _coerce(mask, like=z)
    if mask.data.ndim != 2:
        raise ShapeError(f"mask must be rank 2, got shape {mask.data.shape}")
    if z.data.ndim < 2 or z.data.shape[-2:] != mask.data.shape:
        raise ShapeError(
            f"trailing extents of z {z.data.shape} must match mask {mask.data.shape}")
    height, width = mask.data.shape
    z_hat = fft2_array(z.data)
    out = np.ascontiguousarray(ifft2_array(mask.data * z_hat).real)
    out = out.astype(z.data.dtype, copy=False)

    def bwd(g):
        if z.requires_grad:
            # the operator is self-adjoint for a real mask
            gz = ifft2_array(mask.data * fft2_array(g)).real
            z._accumulate(np.ascontiguousarray(gz).astype(z.data.dtype, copy=False))
        if mask.requires_grad:
            g_hat = fft2_array(g)
            cross = (z_hat * np.conj(g_hat)).real / (height * width)
            if cross.ndim > 2:
                cross = cross.sum(axis=tuple(range(cross.ndim - 2)))
            mask._accumulate(cross.astype(mask.data.dtype, copy=False))

    return _make(out, (z, mask), bwd)


class GateParams:
    """Learnable gate parameters: cutoff, slope, and blend strength.

    The stored leaves are unconstrained; the effective slope goes through
    a softplus so it stays positive, and the effective cutoff is clamped
    to the representable radial band ``[0, sqrt(2)/2]``.
    """

    def __init__(self, kappa: float = 0.15, beta: float = 20.0,
                 strength: float = 1.0, dtype=None):
        dt = np.dtype(dtype) if dtype is not None else np.dtype(get_default_dtype())
        self.kappa_raw = Tensor(np.asarray(kappa, dtype=dt), requires_grad=True)
        self.beta_raw = Tensor(np.asarray(softplus_inverse(beta), dtype=dt),
                               requires_grad=True)
        self.strength = Tensor(np.asarray(strength, dtype=dt), requires_grad=True)

    def kappa(self) -> Tensor:
        return clip(self.kappa_raw, KAPPA_FLOOR, KAPPA_MAX)

    def beta(self) -> Tensor:
        return softplus(self.beta_raw)

    def parameters(self) -> dict[str, Tensor]:
        return {"kappa_raw": self.kappa_raw, "beta_raw": self.beta_raw,
                "strength": self.strength}

    def describe(self) -> dict[str, float]:
        return {
            "kappa": self.kappa().item(),
            "beta": self.beta().item(),
            "strength": self.strength.item(),
        }


def gate_mask(height: int, width: int, kappa, beta) -> Tensor:
    """Soft low-pass mask over the normalized frequency grid."""
    dt = kappa.data.dtype if isinstance(kappa, Tensor) else np.dtype(get_default_dtype())
    norms = Tensor(np.asarray(frequency_grid(height, width).norms, dtype=dt))
    return sigmoid((kappa - norms) * beta)


def lowpass_gate(z, params: GateParams) -> Tensor:
    """Blend ``z`` toward its low-frequency band."""
    z = _coerce(z)
    height, width = z.data.shape[-2:]
    mask = gate_mask(height, width, params.kappa(), params.beta())
    filtered = spectral_filter(z, mask)
    return z + params.strength * (filtered - z)


def highpass_gate(z, params: GateParams) -> Tensor:
    """Blend ``z`` toward its high-frequency band (complementary mask)."""
    z = _coerce(z)
    height, width = z.data.shape[-2:]
    mask = gate_mask(height, width, params.kappa(), params.beta())
    filtered = spectral_filter(z, 1.0 - mask)
    return z + params.strength * (filtered - z)
