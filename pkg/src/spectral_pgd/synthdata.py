"""Procedural scene generator, pseudo-label teacher, and data streams.

Scenes are layouts of flat rectangles and ellipses floating over a
smooth background depth field, shaded with a Lambertian model so image
appearance correlates with geometry. Three streams share the generator
but differ in lighting, palette, and sensor quirks:

* ``syn_indoor`` and ``syn_outdoor`` are the labeled domains; samples
  carry ground-truth disparity (or normals).
* ``real_proxy`` is the unlabeled domain: its samples carry only
  pseudo labels from a simulated teacher whose output is band-limited,
  low-frequency biased, and speckled with high-frequency artifacts.
  Ground truth for this stream exists solely inside evaluation sets.

All randomness flows from explicit integer seeds, so every sample is a
pure function of ``(seed, config)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from spectral_pgd.model import Task
from spectral_pgd.ndtensor.fourier import fft2_array, frequency_grid, ifft2_array
from spectral_pgd.ndtensor.tensor import Tensor
from spectral_pgd.ndtensor.tensorio import load_tensor, save_tensor
from spectral_pgd.spectral import KAPPA_MAX

__all__ = [
    "EvalSample",
    "Sample",
    "SceneConfig",
    "SceneLayout",
    "SceneObject",
    "Stream",
    "TargetNorm",
    "denormalize_target",
    "depth_to_disparity",
    "depth_to_normals",
    "gen_scene",
    "hard_lowpass",
    "make_eval_samples",
    "make_sample",
    "mix_streams",
    "normalize_target",
    "read_dataset",
    "render_depth",
    "render_image",
    "sample_layout",
    "teacher_pseudo",
    "write_dataset",
]


class Stream(enum.Enum):
    SYN_INDOOR = "syn_indoor"
    SYN_OUTDOOR = "syn_outdoor"
    REAL_PROXY = "real_proxy"


STREAM_ORDER = (Stream.SYN_INDOOR, Stream.SYN_OUTDOOR, Stream.REAL_PROXY)


@dataclass(frozen=True)
class SceneConfig:
    """Knobs of the procedural generator and the teacher simulator."""

    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 8
    depth_range: tuple[float, float] = (2.0, 12.0)
    texture_amplitude: float = 0.05
    style: str = "indoor"
    attenuation: float = 1.2
    haze: tuple[float, float, float] = (0.0, 0.0, 0.0)
    teacher_cutoff: float = 0.1
    teacher_bias_amplitude: float = 0.05
    teacher_artifact_amplitude: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(self.depth_range))
        d_lo, d_hi = self.depth_range
        if d_lo <= 0 or d_hi <= d_lo:
            raise ValueError(f"depth range must satisfy 0 < near < far, got {self.depth_range}")
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ValueError("object count range is empty")
        if self.height < 8 or self.width < 8:
            raise ValueError("scene extents must be at least 8")
        if self.style not in ("indoor", "outdoor", "field"):
            raise ValueError(f"unknown style {self.style!r}")
        if self.attenuation < 0.0:
            raise ValueError("attenuation must be nonnegative")
        object.__setattr__(self, "haze", tuple(self.haze))
        if len(self.haze) != 3 or any(not 0.0 <= h <= 1.0 for h in self.haze):
            raise ValueError("haze color must be three channels in [0, 1]")
        if not 0.0 < self.teacher_cutoff:
            raise ValueError("teacher cutoff must be positive")
        if not 0.0 <= self.teacher_bias_amplitude <= 0.1:
            raise ValueError("teacher bias amplitude must lie in [0, 0.1]")
        if not 0.0 <= self.teacher_artifact_amplitude <= 0.05:
            raise ValueError("teacher artifact amplitude must lie in [0, 0.05]")

    @classmethod
    def for_stream(cls, stream: Stream, height: int = 64, width: int = 64) -> "SceneConfig":
        if stream is Stream.SYN_INDOOR:
            return cls(height=height, width=width, min_objects=3, max_objects=7,
                       depth_range=(2.0, 10.0), texture_amplitude=0.03, style="indoor")
        if stream is Stream.SYN_OUTDOOR:
            return cls(height=height, width=width, min_objects=2, max_objects=5,
                       depth_range=(4.0, 14.0), texture_amplitude=0.05, style="outdoor")
        # field scenes recede into a red haze while the synthetic styles
        # darken neutrally, so field depth rides on a chroma contrast the
        # synthetic streams train models to ignore; layouts stay sparse so
        # the transferable structure is low-dimensional; the teacher stays
        # reliable below its cutoff (small bias) but keeps the full speckle
        # budget above it
        return cls(height=height, width=width, min_objects=2, max_objects=3,
                   depth_range=(2.0, 8.0), texture_amplitude=0.04, style="field",
                   attenuation=1.6, haze=(0.95, 0.15, 0.15),
                   teacher_bias_amplitude=0.03, teacher_artifact_amplitude=0.05)


@dataclass(frozen=True)
class SceneObject:
    """A flat shape at constant depth, in normalized [0,1) scene coordinates."""

    kind: str
    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float
    depth: float
    albedo: tuple[float, float, float]

    def covers(self, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        dy = yy - self.center[0]
        dx = xx - self.center[1]
        c, s = np.cos(self.angle), np.sin(self.angle)
        ry = c * dy - s * dx
        rx = s * dy + c * dx
        if self.kind == "rect":
            return (np.abs(ry) <= self.axes[0]) & (np.abs(rx) <= self.axes[1])
        return (ry / self.axes[0]) ** 2 + (rx / self.axes[1]) ** 2 <= 1.0


@dataclass(frozen=True)
class SceneLayout:
    """Everything needed to render one scene deterministically."""

    config: SceneConfig
    objects: tuple[SceneObject, ...]
    bg_near: float
    bg_gradient: tuple[float, float]
    bg_curvature: float
    light: tuple[float, float, float]
    ambient: float
    base_albedo: tuple[float, float, float]
    color_gain: tuple[float, float, float]
    vignette: float
    texture_seed: int


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def sample_layout(seed: int, config: SceneConfig) -> SceneLayout:
    rng = np.random.default_rng(seed)
    d_lo, d_hi = config.depth_range
    span = d_hi - d_lo

    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    # field shapes stay small so the scene's low band is carried almost
    # entirely by the shared overlook profile
    ax_lo, ax_hi = (0.04, 0.1) if config.style == "field" else (0.05, 0.24)
    objects = []
    for i in range(count):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        center = (float(rng.uniform(0.12, 0.88)), float(rng.uniform(0.12, 0.88)))
        axes = (float(rng.uniform(ax_lo, ax_hi)), float(rng.uniform(ax_lo, ax_hi)))
        angle = float(rng.uniform(0.0, np.pi))
        # spread object planes through the near 80% of the range; a small
        # index-dependent offset keeps any two planes distinct
        depth = float(rng.uniform(d_lo + 0.05 * span, d_lo + 0.8 * span)
                      + 1e-3 * span * i)
        albedo = tuple(float(a) for a in rng.uniform(0.2, 0.95, size=3))
        objects.append(SceneObject(kind, center, axes, angle, depth, albedo))

    if config.style == "outdoor":
        # ground-plane flavour: strongly far at the top of the frame
        bg_near = float(rng.uniform(d_lo + 0.5 * span, d_lo + 0.7 * span))
        bg_gradient = (float(rng.uniform(-0.9, -0.5) * span),
                       float(rng.uniform(-0.1, 0.1) * span))
        ambient = float(rng.uniform(0.5, 0.7))
        elevation = rng.uniform(0.6, 1.2)
    elif config.style == "indoor":
        bg_near = float(rng.uniform(d_lo + 0.4 * span, d_lo + 0.8 * span))
        theta = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0.15, 0.45) * span
        bg_gradient = (float(mag * np.sin(theta)), float(mag * np.cos(theta)))
        ambient = float(rng.uniform(0.35, 0.5))
        elevation = rng.uniform(0.5, 1.1)
    else:  # field
        # overlook profile: every field scene runs near at the top of the
        # frame to far at the bottom with a consistent bowl curvature, a
        # layout prior the synthetic streams never establish; the ranges are
        # kept narrow so the profile is nearly shared across the domain
        bg_near = float(rng.uniform(d_lo + 0.14 * span, d_lo + 0.22 * span))
        bg_gradient = (float(rng.uniform(0.62, 0.78) * span),
                       float(rng.uniform(-0.04, 0.04) * span))
        ambient = float(rng.uniform(0.2, 0.35))
        elevation = rng.uniform(0.15, 0.6)

    azimuth = rng.uniform(0, 2 * np.pi)
    horiz = np.cos(elevation)
    light = _unit(np.array([horiz * np.cos(azimuth), horiz * np.sin(azimuth),
                            np.sin(elevation)]))
    if config.style == "field":
        curvature = float(rng.uniform(0.3, 0.4) * span)
    else:
        curvature = float(rng.uniform(-0.2, 0.2) * span)
    base_albedo = tuple(float(a) for a in rng.uniform(0.25, 0.85, size=3))
    if config.style == "field":
        color_gain = tuple(float(g) for g in rng.uniform(0.65, 1.35, size=3))
        vignette = float(rng.uniform(0.3, 0.5))
    else:
        color_gain = (1.0, 1.0, 1.0)
        vignette = 0.0
    texture_seed = int(rng.integers(0, 2**63 - 1))

    return SceneLayout(config=config, objects=tuple(objects), bg_near=bg_near,
                       bg_gradient=bg_gradient, bg_curvature=curvature,
                       light=(float(light[0]), float(light[1]), float(light[2])),
                       ambient=ambient, base_albedo=base_albedo,
                       color_gain=color_gain, vignette=vignette,
                       texture_seed=texture_seed)


def _pixel_grid(config: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    yy = (np.arange(config.height) + 0.5) / config.height
    xx = (np.arange(config.width) + 0.5) / config.width
    return np.meshgrid(yy, xx, indexing="ij")


def _background_depth(layout: SceneLayout, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    d_lo, d_hi = layout.config.depth_range
    gy, gx = layout.bg_gradient
    raw = layout.bg_near + gy * yy + gx * xx \
        + layout.bg_curvature * ((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
    return np.clip(raw, d_lo, d_hi)


def render_depth(layout: SceneLayout) -> np.ndarray:
    """Per-pixel minimum over the background and every covering object."""
    yy, xx = _pixel_grid(layout.config)
    depth = _background_depth(layout, yy, xx)
    for obj in layout.objects:
        mask = obj.covers(yy, xx)
        depth = np.where(mask, np.minimum(depth, obj.depth), depth)
    return depth


def depth_to_normals(depth: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Unit surface normals (nx, ny, nz) from a depth map's finite differences."""
    depth = np.asarray(depth, dtype=np.float64)
    gy, gx = np.gradient(depth * scale)
    n = np.stack([-gx, -gy, np.ones_like(depth)])
    return n / np.linalg.norm(n, axis=0, keepdims=True)


def render_image(layout: SceneLayout, depth: np.ndarray) -> np.ndarray:
    """Shaded 3-channel image in [-1, 1]."""
    cfg = layout.config
    yy, xx = _pixel_grid(cfg)

    albedo = np.empty((3, cfg.height, cfg.width))
    for c in range(3):
        albedo[c] = layout.base_albedo[c]
    # paint far-to-near so the nearest object owns each pixel
    for obj in sorted(layout.objects, key=lambda o: -o.depth):
        mask = obj.covers(yy, xx)
        for c in range(3):
            albedo[c][mask] = obj.albedo[c]

    d_lo, d_hi = cfg.depth_range
    normals = depth_to_normals(depth, scale=4.0 / (d_hi - d_lo))
    light = np.asarray(layout.light).reshape(3, 1, 1)
    lambert = np.maximum((normals * light).sum(axis=0), 0.0)
    shade = layout.ambient + (1.0 - layout.ambient) * lambert

    img = albedo * shade[None]
    if cfg.attenuation > 0.0:
        # depth-dependent extinction toward the style's far color: black for
        # the synthetic streams, red haze for field scenes
        t = np.exp(-cfg.attenuation * (depth - d_lo) / (d_hi - d_lo))
        far = np.asarray(cfg.haze).reshape(3, 1, 1)
        img = img * t[None] + far * (1.0 - t)[None]
    if layout.vignette > 0.0:
        r2 = (yy - 0.5) ** 2 + (xx - 0.5) ** 2
        img = img * (1.0 - layout.vignette * 2.0 * r2)[None]
    gain = np.asarray(layout.color_gain).reshape(3, 1, 1)
    img = img * gain

    noise_rng = np.random.default_rng(layout.texture_seed)
    img = img + cfg.texture_amplitude * noise_rng.standard_normal(img.shape)
    return np.clip(2.0 * img - 1.0, -1.0, 1.0)


def gen_scene(seed: int, config: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, depth) pair for a seed."""
    layout = sample_layout(seed, config)
    depth = render_depth(layout)
    return render_image(layout, depth), depth


# -- dense target plumbing ------------------------------------------------------

def depth_to_disparity(depth: np.ndarray) -> np.ndarray:
    """Reciprocal depth; rejects nonpositive input. The map is its own inverse."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive everywhere")
    return 1.0 / depth


@dataclass(frozen=True)
class TargetNorm:
    """Per-sample affine map used to place a target into [-1, 1]."""

    lo: float
    hi: float
    degenerate: bool = False


def normalize_target(arr: np.ndarray) -> tuple[np.ndarray, TargetNorm]:
    """Min-max map onto [-1, 1]; constant inputs map to zeros and are flagged."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < 1e-12:
        return np.zeros_like(arr), TargetNorm(lo=lo, hi=hi, degenerate=True)
    return 2.0 * (arr - lo) / (hi - lo) - 1.0, TargetNorm(lo=lo, hi=hi)


def denormalize_target(arr: np.ndarray, norm: TargetNorm) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if norm.degenerate:
        return np.full_like(arr, norm.lo)
    return (arr + 1.0) / 2.0 * (norm.hi - norm.lo) + norm.lo


def hard_lowpass(arr: np.ndarray, cutoff: float) -> np.ndarray:
    """Zero every spectral bin with radial norm strictly above ``cutoff``."""
    arr = np.asarray(arr, dtype=np.float64)
    grid = frequency_grid(*arr.shape[-2:])
    spec = fft2_array(arr)
    spec = np.where(grid.norms <= cutoff, spec, 0.0)
    return ifft2_array(spec).real


def teacher_pseudo(depth_gt: np.ndarray, seed: int, config: SceneConfig) -> np.ndarray:
    """Simulated pseudo-label disparity: band-limited, biased, artifacted.

    The teacher sees only frequencies below ``teacher_cutoff``, drifts by a
    smooth low-frequency bias field, and sprinkles high-frequency speckle
    supported strictly above radial norm 0.25.
    """
    disp = depth_to_disparity(depth_gt)
    h, w = disp.shape
    if config.teacher_cutoff >= KAPPA_MAX:
        pseudo = disp.copy()
    else:
        pseudo = hard_lowpass(disp, config.teacher_cutoff)

    rng = np.random.default_rng([seed, 0x7EAC])
    if config.teacher_bias_amplitude > 0.0:
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        bias = np.zeros((h, w))
        for _ in range(int(rng.integers(2, 4))):
            radius = rng.uniform(0.01, 0.045)
            theta = rng.uniform(0, 2 * np.pi)
            fy, fx = radius * np.sin(theta), radius * np.cos(theta)
            phase = rng.uniform(0, 2 * np.pi)
            bias += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        peak = np.abs(bias).max()
        if peak > 0:
            pseudo = pseudo + config.teacher_bias_amplitude * bias / peak

    if config.teacher_artifact_amplitude > 0.0:
        grid = frequency_grid(h, w)
        speckle_spec = fft2_array(rng.standard_normal((h, w)))
        speckle_spec = np.where(grid.norms > 0.25, speckle_spec, 0.0)
        speckle = ifft2_array(speckle_spec).real
        peak = np.abs(speckle).max()
        if peak > 0:
            pseudo = pseudo + config.teacher_artifact_amplitude * speckle / peak

    return pseudo


# -- samples and streams ---------------------------------------------------------

@dataclass
class Sample:
    """One training example; ``real_proxy`` samples never carry ground truth."""

    image: Tensor
    target: Tensor
    stream: Stream
    task: Task
    norm: TargetNorm
    scene_seed: int


@dataclass
class EvalSample:
    """Held-out example with the ground truth the trainer never sees."""

    image: Tensor
    gt_disparity: np.ndarray
    stream: Stream
    scene_seed: int


def make_sample(seed: int, stream: Stream, config: SceneConfig | None = None,
                task: Task = Task.DEPTH) -> Sample:
    if task is Task.RECONSTRUCT:
        raise ValueError("reconstruction uses the image itself; no sample target exists")
    cfg = config or SceneConfig.for_stream(stream)
    image, depth = gen_scene(seed, cfg)
    if task is Task.NORMAL:
        target = depth_to_normals(depth)
        norm = TargetNorm(lo=-1.0, hi=1.0)
    else:
        if stream is Stream.REAL_PROXY:
            raw = teacher_pseudo(depth, seed, cfg)
        else:
            raw = depth_to_disparity(depth)
        flat, norm = normalize_target(raw)
        target = flat[None]
    return Sample(image=Tensor(image), target=Tensor(target), stream=stream,
                  task=task, norm=norm, scene_seed=seed)


def make_eval_samples(seeds, stream: Stream,
                      config: SceneConfig | None = None) -> list[EvalSample]:
    cfg = config or SceneConfig.for_stream(stream)
    out = []
    for seed in seeds:
        image, depth = gen_scene(int(seed), cfg)
        out.append(EvalSample(image=Tensor(image),
                              gt_disparity=depth_to_disparity(depth),
                              stream=stream, scene_seed=int(seed)))
    return out


def mix_streams(probs, rng: np.random.Generator) -> Stream:
    """Draw one stream; ``probs`` follows (syn_indoor, syn_outdoor, real_proxy)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError("probs must have one entry per stream")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be nonnegative and sum to 1")
    return STREAM_ORDER[int(rng.choice(3, p=p))]


# -- dataset materialization ------------------------------------------------------

def write_dataset(directory, seeds, stream: Stream, config: SceneConfig | None = None,
                  task: Task = Task.DEPTH) -> Path:
    """Materialize samples under ``directory`` with a JSON index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = config or SceneConfig.for_stream(stream)
    entries = []
    for i, seed in enumerate(int(s) for s in seeds):
        sample = make_sample(seed, stream, cfg, task)
        save_tensor(directory / f"sample_{i:05d}_image", sample.image.data)
        save_tensor(directory / f"sample_{i:05d}_target", sample.target.data)
        entries.append({
            "index": i,
            "seed": seed,
            "stream": stream.value,
            "task": task.value,
            "norm": [sample.norm.lo, sample.norm.hi, sample.norm.degenerate],
        })
    index = {
        "format_version": 1,
        "count": len(entries),
        "scene_config": asdict(cfg),
        "samples": entries,
    }
    (directory / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return directory


def read_dataset(directory) -> tuple[list[Sample], SceneConfig]:
    """Load a dataset written by ``write_dataset``."""
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    cfg_dict = dict(index["scene_config"])
    cfg_dict["depth_range"] = tuple(cfg_dict["depth_range"])
    cfg = SceneConfig(**cfg_dict)
    samples = []
    for entry in index["samples"]:
        i = entry["index"]
        image = load_tensor(directory / f"sample_{i:05d}_image")
        target = load_tensor(directory / f"sample_{i:05d}_target")
        lo, hi, degenerate = entry["norm"]
        samples.append(Sample(
            image=Tensor(image), target=Tensor(target),
            stream=Stream(entry["stream"]), task=Task(entry["task"]),
            norm=TargetNorm(lo=lo, hi=hi, degenerate=degenerate),
            scene_seed=int(entry["seed"])))
    return samples, cfg
