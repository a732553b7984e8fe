"""2-D discrete Fourier transforms built from scratch on numpy arrays.

Power-of-two extents run through a vectorized iterative radix-2
Cooley-Tukey schedule; every other extent falls back to Bluestein's
chirp-z algorithm, which re-expresses the DFT as a circular convolution
of power-of-two length. Forward transforms are unnormalized and the
inverse divides by the element count, so ``ifft2(fft2(x)) == x`` up to
roundoff.

The transforms here back the spectral gating layers, so the module also
exposes the normalized frequency grid those gates are defined on and a
compact real/imag container for spectra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from spectral_pgd.ndtensor.tensor import ShapeError

__all__ = [
    "ComplexSpectrum",
    "FrequencyGrid",
    "fft2",
    "ifft2",
    "fft2_array",
    "ifft2_array",
    "frequency_grid",
    "radial_spectrum",
]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    """Bit-reversed index permutation for a power-of-two length ``n``."""
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size: int, sign: int) -> np.ndarray:
    half = size // 2
    w = np.exp(sign * 2j * np.pi * np.arange(half) / size)
    w.setflags(write=False)
    return w


def _fft_pow2(a: np.ndarray, sign: int) -> np.ndarray:
    """Iterative radix-2 transform along the last axis (length must be 2**k)."""
    n = a.shape[-1]
    if n == 1:
        return a.astype(np.complex128, copy=True)
    out = np.ascontiguousarray(a[..., _bit_reversal(n)], dtype=np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(size, sign)
        view = out.reshape(out.shape[:-1] + (n // size, size))
        even = view[..., :half]
        odd = view[..., half:] * tw
        lo = even + odd
        hi = even - odd
        view[..., :half] = lo
        view[..., half:] = hi
        size *= 2
    return out


@lru_cache(maxsize=None)
def _bluestein_tables(n: int, sign: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Chirp and pre-transformed filter spectrum for a length-``n`` Bluestein pass."""
    k = np.arange(n)
    # k*k mod 2n keeps the chirp phase argument small for accuracy
    chirp = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 2 * n - 1
    length = m if _is_pow2(m) else 1 << m.bit_length()
    filt = np.zeros(length, dtype=np.complex128)
    filt[:n] = np.conj(chirp)
    filt[length - n + 1:] = np.conj(chirp)[1:][::-1]
    filt_hat = _fft_pow2(filt, -1)
    chirp.setflags(write=False)
    filt_hat.setflags(write=False)
    return chirp, filt_hat, length


def _fft_bluestein(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    chirp, filt_hat, length = _bluestein_tables(n, sign)
    buf = np.zeros(a.shape[:-1] + (length,), dtype=np.complex128)
    buf[..., :n] = a * chirp
    spec = _fft_pow2(buf, -1) * filt_hat
    conv = _fft_pow2(spec, +1) / length
    return conv[..., :n] * chirp


def _fft1d(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    if _is_pow2(n):
        return _fft_pow2(a, sign)
    return _fft_bluestein(a, sign)


def fft2_array(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the trailing two axes.

    Accepts real or complex input of rank >= 2 and returns complex128.
    """
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError(f"fft2 needs rank >= 2, got shape {x.shape}")
    out = _fft1d(np.asarray(x, dtype=np.complex128), -1)
    out = _fft1d(np.swapaxes(out, -1, -2), -1)
    return np.swapaxes(out, -1, -2)


def ifft2_array(spec: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT over the trailing two axes, normalized by H*W."""
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.ndim < 2:
        raise ShapeError(f"ifft2 needs rank >= 2, got shape {spec.shape}")
    h, w = spec.shape[-2], spec.shape[-1]
    out = _fft1d(spec, +1)
    out = _fft1d(np.swapaxes(out, -1, -2), +1)
    return np.swapaxes(out, -1, -2) / (h * w)


@dataclass
class ComplexSpectrum:
    """Flat-packed complex 2-D spectrum with its spatial shape.

    ``re`` and ``im`` hold the row-major real and imaginary parts of a
    single-channel spectrum of shape ``shape``.
    """

    shape: tuple[int, int]
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        h, w = self.shape
        self.re = np.asarray(self.re, dtype=np.float64).reshape(h * w)
        self.im = np.asarray(self.im, dtype=np.float64).reshape(h * w)

    @classmethod
    def from_complex(cls, arr: np.ndarray) -> "ComplexSpectrum":
        arr = np.asarray(arr, dtype=np.complex128)
        if arr.ndim != 2:
            raise ShapeError(f"spectrum must be rank 2, got shape {arr.shape}")
        return cls(shape=(arr.shape[0], arr.shape[1]), re=arr.real.ravel().copy(),
                   im=arr.imag.ravel().copy())

    def to_complex(self) -> np.ndarray:
        return (self.re + 1j * self.im).reshape(self.shape)

    def is_hermitian(self, tol: float = 1e-9) -> bool:
        """True when the spectrum is conjugate-symmetric, i.e. comes from a real signal."""
        s = self.to_complex()
        mirrored = np.conj(s[(-np.arange(s.shape[0])) % s.shape[0]][:, (-np.arange(s.shape[1])) % s.shape[1]])
        return bool(np.max(np.abs(s - mirrored)) <= tol * max(1.0, float(np.max(np.abs(s)))))


def fft2(x) -> ComplexSpectrum:
    """Forward transform of a single rank-2 real tensor or array."""
    data = getattr(x, "data", x)
    data = np.asarray(data)
    if data.ndim != 2:
        raise ShapeError(f"fft2 takes a single 2-D channel, got shape {data.shape}")
    return ComplexSpectrum.from_complex(fft2_array(data))


def ifft2(spec: ComplexSpectrum) -> np.ndarray:
    """Inverse transform back to a real array; the imaginary residue is discarded."""
    return ifft2_array(spec.to_complex()).real


@dataclass(frozen=True)
class FrequencyGrid:
    """Normalized DFT frequency coordinates for an H x W grid.

    ``norms[u, v]`` is the Euclidean norm of the signed frequency pair
    ``(u/H, v/W)`` with indices above the Nyquist row/column mapped to
    their negative aliases. DC sits at ``norms[0, 0] == 0`` and, for even
    extents, the far corner reaches ``sqrt(0.5)``.
    """

    height: int
    width: int
    fy: np.ndarray
    fx: np.ndarray
    norms: np.ndarray


def _signed_freqs(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    return np.where(k <= n // 2, k, k - n) / n


@lru_cache(maxsize=None)
def frequency_grid(height: int, width: int) -> FrequencyGrid:
    if height < 2 or width < 2:
        raise ShapeError("frequency grid needs extents >= 2")
    fy = _signed_freqs(height)
    fx = _signed_freqs(width)
    norms = np.hypot(fy[:, None], fx[None, :])
    for arr in (fy, fx, norms):
        arr.setflags(write=False)
    return FrequencyGrid(height=height, width=width, fy=fy, fx=fx, norms=norms)


def radial_spectrum(x, num_bins: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative energy of a 2-D signal below equally spaced radial cutoffs.

    Returns ``(edges, cumulative)`` where ``cumulative[i]`` is the fraction
    of total squared spectral magnitude at frequencies with norm <= ``edges[i]``.
    The last bin edge is the corner frequency, so ``cumulative[-1] == 1``
    whenever the signal is nonzero.
    """
    data = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"radial spectrum takes a 2-D signal, got shape {data.shape}")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    grid = frequency_grid(*data.shape)
    corner = float(np.max(grid.norms))
    edges = corner * np.arange(1, num_bins + 1) / num_bins
    power = np.abs(fft2_array(data)) ** 2
    # side='left' keeps frequencies sitting exactly on an edge inside that bin
    idx = np.searchsorted(edges, grid.norms.ravel(), side="left")
    per_bin = np.bincount(idx, weights=power.ravel(), minlength=num_bins)[:num_bins]
    total = float(power.sum())
    if total == 0.0:
        return edges, np.zeros(num_bins)
    return edges, np.cumsum(per_bin) / total
