"""Array-backed autodiff tensors, Fourier transforms, and tensor serialization."""

from spectral_pgd.ndtensor.tensor import (  # noqa: F401
    GraphError,
    ShapeError,
    Tensor,
    backward,
    concat,
    conv2d,
    clip,
    downsample_nearest,
    get_default_dtype,
    matmul,
    mean,
    reshape,
    set_default_dtype,
    sigmoid,
    silu,
    softplus,
    softplus_inverse,
    stop_gradient,
    tensor_sum,
    upsample_nearest,
)
from spectral_pgd.ndtensor.fourier import (  # noqa: F401
    ComplexSpectrum,
    FrequencyGrid,
    fft2,
    fft2_array,
    frequency_grid,
    ifft2,
    ifft2_array,
    radial_spectrum,
)
from spectral_pgd.ndtensor.tensorio import load_tensor, save_tensor  # noqa: F401
