"""Shared-weight two-stage predictor with timestep/task conditioning.

One convolutional encoder-decoder ``f`` realizes both stages of the
prior-to-geometry pipeline: a coarse pass at a high timestep produces a
structural prior from the image latent, and a second pass of the same
weights at a low timestep refines that prior into geometry,

    z_prior = f(z_x, t_high, task)
    z_geo   = f(z_prior, t_low, task)

The timestep enters as a sinusoidal embedding, summed with a learned
per-task embedding, pushed through a small MLP, and added as a per-channel
bias at the bottleneck. Latent codecs, the diffusion variance schedule
used by the stochastic baseline, and checkpoint (de)serialization live
here too.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from spectral_pgd.ndtensor.tensor import (
    ShapeError,
    Tensor,
    concat,
    conv2d,
    downsample_nearest,
    matmul,
    reshape,
    silu,
    upsample_nearest,
)
from spectral_pgd.ndtensor.tensorio import load_tensor, save_tensor
from spectral_pgd.spectral import GateParams

__all__ = [
    "IdentityCodec",
    "PredictorConfig",
    "PredictorWeights",
    "SpaceToDepthCodec",
    "Task",
    "VarianceSchedule",
    "forward_diffuse",
    "init_predictor",
    "latent_to_target",
    "load_checkpoint",
    "pgd_forward",
    "predict",
    "save_checkpoint",
    "sinusoidal_embedding",
    "target_to_latent",
]


class Task(enum.Enum):
    RECONSTRUCT = "reconstruct"
    DEPTH = "depth"
    NORMAL = "normal"


@dataclass(frozen=True)
class PredictorConfig:
    """Architecture hyperparameters; three resolution levels are fixed."""

    in_channels: int = 3
    out_channels: int = 3
    base_channels: tuple[int, int, int] = (16, 32, 64)
    emb_dim: int = 64
    concat_conditioning: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "base_channels", tuple(self.base_channels))
        if len(self.base_channels) != 3 or min(self.base_channels) < 1:
            raise ValueError("base_channels must be three positive widths")
        if self.emb_dim % 2:
            raise ValueError("emb_dim must be even")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def stem_channels(self) -> int:
        return self.in_channels * (2 if self.concat_conditioning else 1)


class PredictorWeights:
    """Named parameter tensors for one predictor instance."""

    def __init__(self, config: PredictorConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


def _conv_layer_specs(config: PredictorConfig) -> list[tuple[str, int, int]]:
    c0, c1, c2 = config.base_channels
    return [
        ("stem", config.stem_channels, c0),
        ("enc0", c0, c0),
        ("down1", c0, c1),
        ("enc1", c1, c1),
        ("down2", c1, c2),
        ("mid1", c2, c2),
        ("mid2", c2, c2),
        ("up1", c2, c1),
        ("dec1", 2 * c1, c1),
        ("up0", c1, c0),
        ("dec0", 2 * c0, c0),
        ("head", c0, config.out_channels),
    ]


def init_predictor(config: PredictorConfig, seed: int) -> PredictorWeights:
    """He-normal convolution kernels, zero biases, small task embeddings."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    params: dict[str, Tensor] = {}

    def leaf(arr):
        return Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

    for name, cin, cout in _conv_layer_specs(config):
        fan_in = cin * 9
        std = np.sqrt((1.0 if name == "head" else 2.0) / fan_in)
        params[f"{name}_w"] = leaf(rng.normal(0.0, std, size=(cout, cin, 3, 3)))
        params[f"{name}_b"] = leaf(np.zeros(cout))

    d = config.emb_dim
    c2 = config.base_channels[2]
    for name, nin, nout in [("temb1", d, d), ("temb2", d, d), ("temb_proj", d, c2)]:
        std = np.sqrt(1.0 / nin)
        params[f"{name}_w"] = leaf(rng.normal(0.0, std, size=(nout, nin)))
        params[f"{name}_b"] = leaf(np.zeros(nout))

    for task in Task:
        params[f"task_{task.value}"] = leaf(0.1 * rng.standard_normal(d))

    return PredictorWeights(config, params)


def sinusoidal_embedding(t: float, dim: int) -> np.ndarray:
    """Classic interleaved sin/cos position code for a scalar timestep."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _conditioning_bias(t: float, task: Task, weights: PredictorWeights) -> Tensor:
    cfg = weights.config
    code = Tensor(np.asarray(sinusoidal_embedding(t, cfg.emb_dim), dtype=np.dtype(cfg.dtype)))
    e = code + weights[f"task_{task.value}"]
    h = silu(matmul(weights["temb1_w"], e) + weights["temb1_b"])
    h = silu(matmul(weights["temb2_w"], h) + weights["temb2_b"])
    return matmul(weights["temb_proj_w"], h) + weights["temb_proj_b"]


def _block(x: Tensor, weights: PredictorWeights, name: str) -> Tensor:
    return silu(conv2d(x, weights[f"{name}_w"], weights[f"{name}_b"]))


def predict(z, t: float, task: Task, weights: PredictorWeights, cond=None) -> Tensor:
    """One conditioned pass of the predictor.

    ``z`` is a latent of shape ``(C, H, W)`` or ``(N, C, H, W)`` with H and
    W divisible by 4. When the config declares concatenated conditioning,
    ``cond`` of the same shape is stacked on the channel axis.
    """
    cfg = weights.config
    z = z if isinstance(z, Tensor) else Tensor(z)
    squeeze = z.data.ndim == 3
    if squeeze:
        z = reshape(z, (1,) + z.data.shape)
    if z.data.ndim != 4:
        raise ShapeError(f"latent must be (C,H,W) or (N,C,H,W), got {z.data.shape}")
    n, c, h, w = z.data.shape
    if c != cfg.in_channels:
        raise ShapeError(f"latent has {c} channels, config expects {cfg.in_channels}")
    if h % 4 or w % 4:
        raise ShapeError(f"spatial extents must be divisible by 4, got {h}x{w}")
    if not isinstance(task, Task):
        raise TypeError(f"task must be a Task, got {task!r}")
    if cfg.concat_conditioning:
        if cond is None:
            raise ValueError("config uses concatenated conditioning, cond is required")
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        if cond.data.ndim == 3:
            cond = reshape(cond, (1,) + cond.data.shape)
        if cond.data.shape != z.data.shape:
            raise ShapeError(
                f"cond shape {cond.data.shape} must match latent {z.data.shape}")
        x = concat([z, cond], axis=1)
    else:
        if cond is not None:
            raise ValueError("config has no concatenated conditioning input")
        x = z

    bias = _conditioning_bias(t, task, weights)
    c2 = cfg.base_channels[2]

    h0 = _block(_block(x, weights, "stem"), weights, "enc0")
    h1 = _block(_block(downsample_nearest(h0, 2), weights, "down1"), weights, "enc1")
    h2 = _block(downsample_nearest(h1, 2), weights, "down2")
    h2 = silu(conv2d(h2, weights["mid1_w"], weights["mid1_b"])
              + reshape(bias, (1, c2, 1, 1)))
    h2 = _block(h2, weights, "mid2")
    u1 = _block(upsample_nearest(h2, 2), weights, "up1")
    u1 = _block(concat([u1, h1], axis=1), weights, "dec1")
    u0 = _block(upsample_nearest(u1, 2), weights, "up0")
    u0 = _block(concat([u0, h0], axis=1), weights, "dec0")
    out = conv2d(u0, weights["head_w"], weights["head_b"])

    return reshape(out, out.data.shape[1:]) if squeeze else out


def pgd_forward(z_x, weights: PredictorWeights, t_high: float = 1000.0,
                t_low: float = 500.0, task: Task = Task.DEPTH) -> tuple[Tensor, Tensor]:
    """Two chained passes of the same weights: prior stage then geometry stage."""
    cond = z_x if weights.config.concat_conditioning else None
    z_prior = predict(z_x, t_high, task, weights, cond=cond)
    z_geo = predict(z_prior, t_low, task, weights, cond=cond)
    return z_prior, z_geo


# -- latent codecs -------------------------------------------------------------

class IdentityCodec:
    """Latents are the signals themselves, validated to the [-1, 1] range."""

    factor = 1

    def latent_channels(self, channels: int) -> int:
        return channels

    def encode(self, x) -> np.ndarray:
        arr = np.asarray(getattr(x, "data", x))
        if arr.size and (arr.min() < -1.0 - 1e-9 or arr.max() > 1.0 + 1e-9):
            warnings.warn("encoder input outside [-1, 1]; clamping", RuntimeWarning,
                          stacklevel=2)
            arr = np.clip(arr, -1.0, 1.0)
        return arr

    def decode(self, z) -> np.ndarray:
        return np.asarray(getattr(z, "data", z))


class SpaceToDepthCodec:
    """Lossless pixel-shuffle codec: trades spatial extent for channels."""

    def __init__(self, factor: int = 2):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = int(factor)

    def latent_channels(self, channels: int) -> int:
        return channels * self.factor * self.factor

    def encode(self, x) -> np.ndarray:
        arr = np.asarray(getattr(x, "data", x))
        if arr.ndim != 3:
            raise ShapeError(f"expected (C,H,W), got {arr.shape}")
        c, h, w = arr.shape
        f = self.factor
        if h % f or w % f:
            raise ShapeError(f"extents {h}x{w} not divisible by factor {f}")
        blocks = arr.reshape(c, h // f, f, w // f, f)
        return blocks.transpose(0, 2, 4, 1, 3).reshape(c * f * f, h // f, w // f)

    def decode(self, z) -> np.ndarray:
        arr = np.asarray(getattr(z, "data", z))
        if arr.ndim != 3:
            raise ShapeError(f"expected (C,H,W), got {arr.shape}")
        cf, h, w = arr.shape
        f = self.factor
        if cf % (f * f):
            raise ShapeError(f"{cf} channels not divisible by factor^2 = {f * f}")
        c = cf // (f * f)
        blocks = arr.reshape(c, f, f, h, w)
        return blocks.transpose(0, 3, 1, 4, 2).reshape(c, h * f, w * f)


def target_to_latent(target: np.ndarray, codec, latent_base_channels: int = 3) -> np.ndarray:
    """Lift a 1- or 3-channel target map into the image latent space.

    Single-channel targets are replicated across channels so the same
    predictor width serves images and dense maps alike.
    """
    arr = np.asarray(getattr(target, "data", target))
    if arr.ndim != 3:
        raise ShapeError(f"target must be (C,H,W), got {arr.shape}")
    if arr.shape[0] == 1 and latent_base_channels > 1:
        arr = np.repeat(arr, latent_base_channels, axis=0)
    elif arr.shape[0] != latent_base_channels:
        raise ShapeError(
            f"target has {arr.shape[0]} channels, expected 1 or {latent_base_channels}")
    return codec.encode(arr)


def latent_to_target(z, codec, channels: int = 1) -> np.ndarray:
    """Invert ``target_to_latent``: decode, then pool replicated channels."""
    arr = codec.decode(np.asarray(getattr(z, "data", z)))
    if channels == 1:
        return arr.mean(axis=0, keepdims=True)
    if arr.shape[0] != channels:
        raise ShapeError(f"decoded latent has {arr.shape[0]} channels, wanted {channels}")
    return arr


# -- diffusion schedule (stochastic baseline) ----------------------------------

@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step noise variances and their cumulative signal retention."""

    betas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "VarianceSchedule":
        if steps < 1:
            raise ValueError("schedule needs at least one step")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ValueError("betas must satisfy 0 < start <= end < 1")
        betas = np.linspace(beta_start, beta_end, steps)
        alpha_bars = np.cumprod(1.0 - betas)
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        return cls(betas=betas, alpha_bars=alpha_bars)

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of (1 - beta) through step ``t`` (1-indexed)."""
        if not 1 <= t <= self.steps:
            raise ValueError(f"t must be in [1, {self.steps}], got {t}")
        return float(self.alpha_bars[t - 1])


def forward_diffuse(x0, t: int, noise, schedule: VarianceSchedule):
    """Noised sample sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    ab = schedule.alpha_bar(t)
    x0_t = x0 if isinstance(x0, Tensor) else Tensor(x0)
    eps_t = noise if isinstance(noise, Tensor) else Tensor(noise)
    if eps_t.data.shape != x0_t.data.shape:
        raise ShapeError(
            f"noise shape {eps_t.data.shape} must match signal {x0_t.data.shape}")
    return float(np.sqrt(ab)) * x0_t + float(np.sqrt(1.0 - ab)) * eps_t


# -- checkpointing --------------------------------------------------------------

_MANIFEST = "manifest.json"


def save_checkpoint(directory, weights: PredictorWeights, phi: GateParams,
                    psi: GateParams, step: int, extra: dict | None = None) -> Path:
    """Write every parameter tensor plus a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {"theta": sorted(weights.params)}
    for prefix, group in [("theta", weights.params),
                          ("phi", phi.parameters()), ("psi", psi.parameters())]:
        for name, tensor in sorted(group.items()):
            save_tensor(directory / f"{prefix}.{name}", tensor.data)
    manifest = {
        "format_version": 1,
        "step": int(step),
        "predictor_config": asdict(weights.config),
        "theta_names": names["theta"],
        "extra": extra or {},
    }
    (directory / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[PredictorWeights, GateParams, GateParams, dict]:
    """Rebuild weights and gate parameters bit-exactly from ``save_checkpoint``."""
    directory = Path(directory)
    manifest = json.loads((directory / _MANIFEST).read_text())
    cfg_dict = dict(manifest["predictor_config"])
    cfg_dict["base_channels"] = tuple(cfg_dict["base_channels"])
    config = PredictorConfig(**cfg_dict)
    params = {
        name: Tensor(load_tensor(directory / f"theta.{name}"), requires_grad=True)
        for name in manifest["theta_names"]
    }
    weights = PredictorWeights(config, params)
    gates = []
    for prefix in ("phi", "psi"):
        gate = GateParams(dtype=config.dtype)
        gate.kappa_raw.data = load_tensor(directory / f"{prefix}.kappa_raw")
        gate.beta_raw.data = load_tensor(directory / f"{prefix}.beta_raw")
        gate.strength.data = load_tensor(directory / f"{prefix}.strength")
        gates.append(gate)
    return weights, gates[0], gates[1], manifest
