"""Optimization loop for the two-stage spectral-gated depth objective.

One shared predictor is trained over mixed synthetic and pseudo-labeled
streams. Synthetic batches supervise the geometry stage directly; proxy-real
batches contribute the low-pass distillation and high-pass consistency terms.
A reconstruction pass regularizes both. Experiment variants toggle each
ingredient so the ablation table can be regenerated end to end.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, fields, replace, asdict
from pathlib import Path

import numpy as np

from .ndtensor import Tensor, backward
from .spectral import GateParams
from .model import (
    Task,
    PredictorConfig,
    PredictorWeights,
    IdentityCodec,
    SpaceToDepthCodec,
    VarianceSchedule,
    forward_diffuse,
    init_predictor,
    latent_to_target,
    pgd_forward,
    predict,
    save_checkpoint,
    load_checkpoint,
    target_to_latent,
)
from .losses import LossWeights, mse, sgd_loss, sgc_loss, dm_loss, recon_loss
from .synthdata import (
    EvalSample,
    SceneConfig,
    Stream,
    STREAM_ORDER,
    make_eval_samples,
    make_sample,
    mix_streams,
)
from .evalkit import MetricsReport, evaluate

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Scene seeds: training pools live in a fixed namespace at 2^30 (one
# 2^17 block per stream), held-out eval scenes above 2^40, so the two
# can never collide and the pools never depend on the run seed.
STREAM_SEED_SPAN = 1 << 17
POOL_SEED_BASE = 1 << 30
EVAL_SEED_BASE = 1 << 40

_CODECS = ("identity", "space_to_depth")


class TrainingDiverged(RuntimeError):
    """A gradient or loss stopped being finite."""


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and variant switches for one training run.

    The deterministic two-stage objective with distillation, consistency,
    and reconstruction enabled is the default. ``lr`` defaults to a
    desk-scale value; the production fine-tuning rate 7.5e-6 applies to
    a far larger pretrained backbone and remains selectable.
    """

    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    gate_lr: float = 2e-5
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 1.0
    t_high: float = 1000.0
    t_low: float = 500.0
    stream_probs: tuple[float, float, float] = (0.6, 0.1, 0.3)
    seed: int = 0
    image_size: int = 64
    base_channels: tuple[int, int, int] = (16, 32, 64)
    emb_dim: int = 64
    dtype: str = "float64"
    codec: str = "identity"
    stochastic_baseline: bool = False
    single_stage: bool = False
    vanilla_distill: bool = False
    use_sgd: bool = True
    use_sgc: bool = True
    pool_sizes: tuple[int, int, int] = (384, 96, 192)
    eval_size: int = 24
    diffusion_steps: int = 1000
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "stream_probs", tuple(float(p) for p in self.stream_probs))
        object.__setattr__(self, "base_channels", tuple(int(c) for c in self.base_channels))
        object.__setattr__(self, "pool_sizes", tuple(int(n) for n in self.pool_sizes))
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0 or self.gate_lr <= 0:
            raise ValueError("lr and gate_lr must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0 < self.t_low <= self.t_high:
            raise ValueError("timesteps must satisfy 0 < t_low <= t_high")
        if len(self.stream_probs) != 3:
            raise ValueError("stream_probs needs one entry per stream")
        if any(p < 0 for p in self.stream_probs) or abs(sum(self.stream_probs) - 1.0) > 1e-9:
            raise ValueError("stream_probs must be nonnegative and sum to 1")
        if self.codec not in _CODECS:
            raise ValueError(f"codec must be one of {_CODECS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        factor = 2 if self.codec == "space_to_depth" else 1
        if self.image_size % (4 * factor):
            raise ValueError(f"image_size must be divisible by {4 * factor}")
        if len(self.pool_sizes) != 3 or min(self.pool_sizes) < 1:
            raise ValueError("pool_sizes needs three positive entries")
        if max(self.pool_sizes) > STREAM_SEED_SPAN:
            raise ValueError(f"pool sizes are capped at {STREAM_SEED_SPAN}")
        if self.eval_size < 1:
            raise ValueError("eval_size must be positive")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")
        if self.stochastic_baseline:
            if not self.single_stage:
                raise ValueError("the stochastic baseline is a single-pass variant")
            if self.use_sgd or self.use_sgc or self.vanilla_distill:
                raise ValueError("the stochastic baseline trains only the noise objective")
            if (self.alpha, self.beta, self.gamma) != (0.0, 0.0, 0.0):
                raise ValueError("the stochastic baseline ignores loss weights; set them to 0")
        if self.single_stage and self.use_sgc:
            raise ValueError("consistency needs two stages")
        if self.vanilla_distill and not self.use_sgd:
            raise ValueError("vanilla_distill replaces the gated distillation; enable use_sgd")

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)

    def to_json_dict(self) -> dict:
        out = asdict(self)
        for key in ("stream_probs", "base_channels", "pool_sizes"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("stream_probs", "base_channels", "pool_sizes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def make_codec(name: str):
    if name == "identity":
        return IdentityCodec()
    if name == "space_to_depth":
        return SpaceToDepthCodec(2)
    raise ValueError(f"codec must be one of {_CODECS}")


# -- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment estimates with a shared step counter."""

    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr: float) -> "AdamState":
        state = cls(lr=float(lr))
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update in place; missing gradients count as zero."""
    for name, tensor in params.items():
        if state.m[name].shape != tensor.data.shape:
            raise ValueError(f"moment shape mismatch for {name}")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, tensor in params.items():
        grad = tensor.grad
        if grad is None:
            grad = np.zeros_like(tensor.data)
        elif not np.all(np.isfinite(grad)):
            raise TrainingDiverged(
                f"non-finite gradient for {name} at optimizer step {state.step}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        tensor.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


# -- trainer ---------------------------------------------------------------------

def build_parameters(weights: PredictorWeights, phi: GateParams,
                     psi: GateParams) -> dict[str, Tensor]:
    """Flat registry over predictor and both gates; one optimizer serves all."""
    out = {f"theta.{name}": t for name, t in weights.parameters().items()}
    out.update({f"phi.{name}": t for name, t in phi.parameters().items()})
    out.update({f"psi.{name}": t for name, t in psi.parameters().items()})
    return out


def _pool_seed(stream: Stream, index: int) -> int:
    # pools are a fixed dataset: the run seed varies init, mixing, and noise
    # draws, never the scenes a configuration trains on
    return POOL_SEED_BASE + STREAM_ORDER.index(stream) * STREAM_SEED_SPAN + index


def make_eval_sets(image_size: int, count: int) -> dict[str, list[EvalSample]]:
    """Held-out scenes from a seed range disjoint from every training pool."""
    real_cfg = SceneConfig.for_stream(Stream.REAL_PROXY, image_size, image_size)
    syn_cfg = SceneConfig.for_stream(Stream.SYN_INDOOR, image_size, image_size)
    return {
        "real_holdout": make_eval_samples(
            range(EVAL_SEED_BASE, EVAL_SEED_BASE + count), Stream.REAL_PROXY, real_cfg),
        "syn_holdout": make_eval_samples(
            range(EVAL_SEED_BASE + 100_000, EVAL_SEED_BASE + 100_000 + count),
            Stream.SYN_INDOOR, syn_cfg),
    }


class Trainer:
    """Owns parameters, optimizer state, data pools, and the step loop."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.codec = make_codec(cfg.codec)
        latent_ch = self.codec.latent_channels(3)
        self.predictor_config = PredictorConfig(
            in_channels=latent_ch,
            out_channels=latent_ch,
            base_channels=cfg.base_channels,
            emb_dim=cfg.emb_dim,
            concat_conditioning=cfg.stochastic_baseline,
            dtype=cfg.dtype,
        )
        self.weights = init_predictor(self.predictor_config, seed=cfg.seed)
        self.phi = GateParams(dtype=cfg.dtype)
        self.psi = GateParams(dtype=cfg.dtype)
        self.params = build_parameters(self.weights, self.phi, self.psi)
        # Adam moves each scalar by about lr per step, so at desk-scale rates
        # the six gate scalars could sweep their whole domain within one run;
        # a separate small rate keeps the gates near their operating band.
        self._net_params = {k: t for k, t in self.params.items()
                            if k.startswith("theta.")}
        self._gate_params = {k: t for k, t in self.params.items()
                             if not k.startswith("theta.")}
        self.opt = AdamState.for_params(self._net_params, cfg.lr)
        self.gate_opt = AdamState.for_params(self._gate_params, cfg.gate_lr)
        self.schedule = (VarianceSchedule.linear(cfg.diffusion_steps)
                         if cfg.stochastic_baseline else None)
        self._stream_rng = np.random.default_rng([cfg.seed, 11])
        self._index_rng = np.random.default_rng([cfg.seed, 13])
        self._noise_rng = np.random.default_rng([cfg.seed, 17])
        self._pools = self._build_pools()
        self._eval_sets: dict[str, list[EvalSample]] | None = None
        self.history: list[dict] = []
        self.steps_done = 0

    def _build_pools(self) -> dict[Stream, tuple[np.ndarray, np.ndarray]]:
        """Pre-encoded image and target latents per stream, cast once."""
        cfg = self.cfg
        dt = np.dtype(cfg.dtype)
        pools = {}
        for stream, size in zip(STREAM_ORDER, cfg.pool_sizes):
            scene_cfg = SceneConfig.for_stream(stream, cfg.image_size, cfg.image_size)
            images, targets = [], []
            for i in range(size):
                sample = make_sample(_pool_seed(stream, i), stream, scene_cfg)
                images.append(self.codec.encode(sample.image.data))
                targets.append(target_to_latent(sample.target.data, self.codec))
            pools[stream] = (np.stack(images).astype(dt, copy=False),
                            np.stack(targets).astype(dt, copy=False))
        return pools

    def draw_batch(self) -> tuple[Stream, np.ndarray, np.ndarray]:
        stream = mix_streams(self.cfg.stream_probs, self._stream_rng)
        images, targets = self._pools[stream]
        idx = self._index_rng.integers(0, images.shape[0], size=self.cfg.batch_size)
        return stream, images[idx], targets[idx]

    def _zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def train_step(self, stream: Stream, images: np.ndarray,
                   targets: np.ndarray) -> dict[str, float]:
        """One optimization step on a stream-homogeneous batch.

        Returns the unweighted loss components plus the weighted total.
        A batch whose variant produces no loss term (for example a proxy-real
        batch under a synthetic-only configuration) leaves every parameter
        and moment untouched.
        """
        cfg = self.cfg
        z_x = Tensor(images)
        z_t = Tensor(targets)
        terms: dict[str, Tensor] = {}

        if cfg.stochastic_baseline:
            if stream is not Stream.REAL_PROXY:
                t = int(self._noise_rng.integers(1, self.schedule.steps + 1))
                eps = self._noise_rng.standard_normal(targets.shape).astype(cfg.dtype)
                noisy = forward_diffuse(z_t, t, Tensor(eps), self.schedule)
                eps_hat = predict(noisy, float(t), Task.DEPTH, self.weights, cond=z_x)
                terms["dm"] = dm_loss(eps_hat, Tensor(eps))
        else:
            if cfg.single_stage:
                z_prior = predict(z_x, cfg.t_low, Task.DEPTH, self.weights)
                z_geo = z_prior
            else:
                z_prior, z_geo = pgd_forward(z_x, self.weights, cfg.t_high, cfg.t_low)
            if stream is Stream.REAL_PROXY:
                if cfg.use_sgd:
                    if cfg.vanilla_distill:
                        terms["distill"] = mse(z_prior, z_t)
                    else:
                        terms["distill"] = sgd_loss(z_prior, z_t, self.phi)
                if cfg.use_sgc:
                    terms["consistency"] = sgc_loss(z_geo, z_prior, self.psi)
            else:
                terms["depth_mse"] = mse(z_geo, z_t)
            if cfg.gamma > 0:
                z_rec = predict(z_x, cfg.t_low, Task.RECONSTRUCT, self.weights)
                terms["recon"] = recon_loss(z_rec, z_x)

        weight = {"depth_mse": 1.0, "dm": 1.0, "distill": cfg.alpha,
                  "consistency": cfg.beta, "recon": cfg.gamma}
        active = {k: t for k, t in terms.items() if weight[k] > 0}
        out = {key: 0.0 for key in ("total", "depth_mse", "dm", "distill",
                                    "consistency", "recon")}
        for key, term in terms.items():
            out[key] = term.item()
        if active:
            total = None
            for key, term in active.items():
                piece = weight[key] * term
                total = piece if total is None else total + piece
            if not np.isfinite(total.item()):
                raise TrainingDiverged(f"non-finite loss at step {self.steps_done + 1}")
            # reported total is recomposed from the logged components at
            # float64 so the bookkeeping identity holds at either dtype
            out["total"] = float(sum(weight[k] * out[k] for k in active))
            self._zero_grads()
            backward(total)
            adam_step(self._net_params, self.opt)
            adam_step(self._gate_params, self.gate_opt)
        self.steps_done += 1
        return out

    def predict_fn(self):
        """Closure mapping an eval image tensor to a (H, W) disparity map.

        Affine-invariant scoring absorbs the normalization frame, so the
        prediction is returned in the network's own output scale.
        """
        cfg = self.cfg
        weights = self.weights
        codec = self.codec
        if cfg.stochastic_baseline:
            schedule = self.schedule
            shape = (codec.latent_channels(3), cfg.image_size // codec.factor,
                     cfg.image_size // codec.factor)
            # One fixed noise draw keeps the single-step inversion deterministic
            # and shared across checkpoints, so scores stay comparable.
            x_t = np.random.default_rng(0xE0A1).standard_normal(shape).astype(cfg.dtype)
            ab = schedule.alpha_bar(schedule.steps)

            def fn(image):
                z_x = codec.encode(image.data).astype(cfg.dtype, copy=False)
                eps_hat = predict(Tensor(x_t), float(schedule.steps), Task.DEPTH,
                                  weights, cond=Tensor(z_x))
                z0 = (x_t - np.sqrt(1.0 - ab) * eps_hat.data) / np.sqrt(ab)
                return latent_to_target(z0, codec)[0]
        elif cfg.single_stage:
            def fn(image):
                z_x = codec.encode(image.data).astype(cfg.dtype, copy=False)
                z_geo = predict(Tensor(z_x), cfg.t_low, Task.DEPTH, weights)
                return latent_to_target(z_geo.data, codec)[0]
        else:
            def fn(image):
                z_x = codec.encode(image.data).astype(cfg.dtype, copy=False)
                _, z_geo = pgd_forward(Tensor(z_x), weights, cfg.t_high, cfg.t_low)
                return latent_to_target(z_geo.data, codec)[0]
        return fn

    def evaluate(self) -> MetricsReport:
        if self._eval_sets is None:
            self._eval_sets = make_eval_sets(self.cfg.image_size, self.cfg.eval_size)
        return evaluate(self.predict_fn(), self._eval_sets)

    def run(self, out_dir=None, quiet: bool = True) -> dict:
        """Train to cfg.steps, evaluate, and optionally write artifacts."""
        cfg = self.cfg
        started = time.perf_counter()
        for step in range(1, cfg.steps + 1):
            stream, images, targets = self.draw_batch()
            row = self.train_step(stream, images, targets)
            row = {"step": step, "stream": stream.value, **row}
            self.history.append(row)
            if not quiet and (step % cfg.log_every == 0 or step == cfg.steps):
                print(f"step {step:>6d} [{stream.value:>11s}] total={row['total']:.6f}")
        report = self.evaluate()
        runtime = time.perf_counter() - started
        result = {
            "config": cfg.to_json_dict(),
            "config_hash": cfg.config_hash(),
            "param_count": int(self.weights.param_count),
            "steps": self.steps_done,
            "runtime_seconds": runtime,
            "gates": {"phi": self.phi.describe(), "psi": self.psi.describe()},
            "final_loss": {k: v for k, v in self.history[-1].items() if k != "stream"},
            "metrics": report.to_dict(),
        }
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(out_dir / "checkpoint", self.weights, self.phi, self.psi,
                            step=self.steps_done,
                            extra={"train_config": cfg.to_json_dict(),
                                   "config_hash": cfg.config_hash()})
            write_train_log(out_dir / "train_log.csv", self.history, cfg.config_hash())
            (out_dir / "report.json").write_text(
                json.dumps(result, indent=2, sort_keys=True) + "\n")
        return result


def write_train_log(path, history: list[dict], config_hash: str) -> Path:
    path = Path(path)
    columns = ["step", "stream", "total", "depth_mse", "dm", "distill",
               "consistency", "recon"]
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in columns})
    return path


def run_experiment(cfg: TrainConfig, out_dir=None, quiet: bool = True) -> dict:
    """Train one configuration end to end and return its JSON-ready report."""
    return Trainer(cfg).run(out_dir=out_dir, quiet=quiet)


def predict_fn_from_checkpoint(directory):
    """Rebuild the variant-appropriate inference closure from saved artifacts."""
    weights, phi, psi, manifest = load_checkpoint(directory)
    cfg = TrainConfig.from_json_dict(manifest["extra"]["train_config"])
    trainer = object.__new__(Trainer)
    trainer.cfg = cfg
    trainer.codec = make_codec(cfg.codec)
    trainer.weights = weights
    trainer.phi = phi
    trainer.psi = psi
    trainer.schedule = (VarianceSchedule.linear(cfg.diffusion_steps)
                        if cfg.stochastic_baseline else None)
    return Trainer.predict_fn(trainer)


# -- experiment variants -----------------------------------------------------------

# Rows of the component ablation: every entry overrides the full default
# configuration, and no variant introduces a second parameter set.
VARIANTS: dict[str, dict] = {
    "a": dict(stochastic_baseline=True, single_stage=True, use_sgd=False,
              use_sgc=False, alpha=0.0, beta=0.0, gamma=0.0),
    "b": dict(single_stage=True, use_sgd=False, use_sgc=False,
              alpha=0.0, beta=0.0, gamma=0.0),
    "c": dict(single_stage=True, use_sgd=True, use_sgc=False,
              alpha=1.0, beta=0.0, gamma=0.0),
    "d": dict(use_sgd=False, use_sgc=False, alpha=0.0, beta=0.0, gamma=1.0),
    "e": dict(use_sgd=True, vanilla_distill=True, use_sgc=False,
              alpha=1.0, beta=0.0, gamma=1.0),
    "f": dict(use_sgd=True, use_sgc=False, alpha=1.0, beta=0.0, gamma=1.0),
    "g": dict(use_sgd=True, use_sgc=True, alpha=1.0, beta=0.1, gamma=1.0),
}

VARIANT_LABELS = {
    "a": "stochastic noise-prediction baseline",
    "b": "deterministic single-stage",
    "c": "single-stage + gated distillation",
    "d": "two-stage, no distillation",
    "e": "two-stage + vanilla distillation",
    "f": "two-stage + gated distillation",
    "g": "two-stage + gated distillation + consistency",
}

# Loss-weight grid over the full two-stage model; (1, 0.1, 1) is the default.
WEIGHT_GRID: tuple[tuple[float, float, float], ...] = (
    (0.0, 0.0, 0.0),
    (0.5, 0.0, 0.0),
    (1.0, 0.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 0.0, 1.0),
    (1.0, 1.0, 1.0),
    (1.0, 0.1, 1.0),
)


def variant_config(base: TrainConfig, key: str) -> TrainConfig:
    if key not in VARIANTS:
        raise ValueError(f"variant must be one of {sorted(VARIANTS)}")
    return replace(base, **VARIANTS[key])


def weight_grid_config(base: TrainConfig, weights: tuple[float, float, float]) -> TrainConfig:
    alpha, beta, gamma = weights
    return replace(base, alpha=alpha, beta=beta, gamma=gamma,
                   stochastic_baseline=False, single_stage=False,
                   vanilla_distill=False, use_sgd=alpha > 0, use_sgc=beta > 0)


def ablation_base_config(seed: int = 0) -> TrainConfig:
    """Sizing used for the directional ablation: small widths, float32."""
    return TrainConfig(seed=seed, batch_size=4, base_channels=(6, 12, 24),
                       dtype="float32", pool_sizes=(192, 48, 144), eval_size=24)


def run_ablation(base: TrainConfig | None = None, seeds=(0, 1, 2), out_dir=None,
                 quiet: bool = True, include_grid: bool = False,
                 variants: tuple[str, ...] | None = None) -> dict:
    """Run the requested variants across seeds; medians feed the ordering checks.

    Returns a report with per-variant per-seed metrics, seed-median AbsRel
    on the proxy-real holdout, and whichever directional comparisons the
    executed variants support.
    """
    base = base or ablation_base_config()
    seeds = tuple(int(s) for s in seeds)
    keys = sorted(VARIANTS) if variants is None else sorted(variants)
    unknown = set(keys) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variants: {sorted(unknown)}")
    variants = {}
    for key in keys:
        runs = []
        for seed in seeds:
            cfg = replace(variant_config(base, key), seed=seed)
            result = run_experiment(cfg, quiet=quiet)
            runs.append(result)
            if not quiet:
                rel = result["metrics"]["real_holdout"]["absrel"]
                print(f"variant {key} seed {seed}: real AbsRel {rel:.3f} "
                      f"({result['runtime_seconds']:.1f}s)")
        med = float(np.median([r["metrics"]["real_holdout"]["absrel"] for r in runs]))
        variants[key] = {
            "label": VARIANT_LABELS[key],
            "median_real_absrel": med,
            "runs": runs,
        }
    med = {k: v["median_real_absrel"] for k, v in variants.items()}
    wanted = {
        "g_better_than_e": ("g", "e"),
        "e_better_than_b": ("e", "b"),
        "f_better_than_b": ("f", "b"),
        "g_better_than_b": ("g", "b"),
    }
    orderings = {name: med[lhs] < med[rhs] for name, (lhs, rhs) in wanted.items()
                 if lhs in med and rhs in med}
    report = {
        "config_hash": base.config_hash(),
        "base_config": base.to_json_dict(),
        "seeds": list(seeds),
        "variants": variants,
        "median_real_absrel": med,
        "orderings": orderings,
    }
    if include_grid:
        grid = []
        for weights in WEIGHT_GRID:
            cfg = replace(weight_grid_config(base, weights), seed=seeds[0])
            result = run_experiment(cfg, quiet=quiet)
            grid.append({"weights": list(weights), "report": result})
            if not quiet:
                rel = result["metrics"]["real_holdout"]["absrel"]
                print(f"weights {weights}: real AbsRel {rel:.3f}")
        report["weight_grid"] = grid
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
        write_ablation_summary(out_dir / "ablation_summary.csv", report)
    return report


def write_ablation_summary(path, report: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={report['config_hash']}\n")
        writer = csv.writer(fh)
        writer.writerow(["variant", "label", "median_real_absrel"])
        for key, entry in report["variants"].items():
            writer.writerow([key, entry["label"], f"{entry['median_real_absrel']:.6f}"])
    return path
