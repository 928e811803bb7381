"""Siamese fine-tuning loop: paired (clean, distorted) inputs through a
shared-weight encoder, cosine loss, SGD with classical momentum, one encoder
snapshot per epoch.

The default loss mode ("attract") minimizes the negative normalized dot
product so that distorted partners are pulled together in feature space;
"repel" keeps the positive sign for experiments with the opposite objective.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import NoiseSpec, Rng, apply_noise, jitter_spec
from .encoder import (
    Encoder,
    EncoderConfig,
    backward,
    forward,
    forward_pair,
    init_encoder,
    load_checkpoint,
    preprocess,
    save_checkpoint,
)
from .errors import (
    DivergenceDetected,
    EmptyTrainDir,
    InvalidConfig,
    LengthMismatch,
    NonFiniteGradient,
    ZeroVector,
)
from .imagecore import Image, load_image

# substream namespaces under the training seed
NS_SHUFFLE = 1
NS_NOISE = 2
NS_EVAL = 3

LOSS_MODES = ("attract", "repel")


@dataclass(frozen=True)
class TrainConfig:
    noise: NoiseSpec = field(default_factory=lambda: jitter_spec(0.5, 0.3))
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    loss_mode: str = "attract"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfig("momentum must lie in [0, 1)")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidConfig(f"loss_mode must be one of {LOSS_MODES}")


def cosine_loss(f_a: np.ndarray, f_b: np.ndarray, mode: str = "attract") -> float:
    """Half the normalized dot product; negated in attract mode. Range [-1/2, 1/2]."""
    loss, _, _ = cosine_loss_grad(f_a, f_b, mode)
    return loss


def cosine_loss_grad(
    f_a: np.ndarray, f_b: np.ndarray, mode: str = "attract"
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus its exact gradients w.r.t. both feature vectors."""
    if mode not in LOSS_MODES:
        raise InvalidConfig(f"loss_mode must be one of {LOSS_MODES}")
    f_a = np.asarray(f_a, dtype=np.float64)
    f_b = np.asarray(f_b, dtype=np.float64)
    norm_a = np.linalg.norm(f_a)
    norm_b = np.linalg.norm(f_b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine loss undefined for zero feature vectors")
    u = f_a / norm_a
    v = f_b / norm_b
    cos = float(u @ v)
    sign = -1.0 if mode == "attract" else 1.0
    grad_a = sign * 0.5 * (v - cos * u) / norm_a
    grad_b = sign * 0.5 * (u - cos * v) / norm_b
    return sign * 0.5 * cos, grad_a, grad_b


def sgd_step(
    params: np.ndarray,
    grads: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical momentum: v' = momentum * v + g; p' = p - lr * v'."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if not (params.shape == grads.shape == velocity.shape):
        raise LengthMismatch("params, grads, and velocity must have equal shapes")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains non-finite entries")
    new_velocity = momentum * velocity + grads
    return params - lr * new_velocity, new_velocity


@dataclass
class CheckpointSeries:
    """Initial parameters plus one snapshot per epoch, with the training log."""

    config: TrainConfig
    initial_params: np.ndarray
    checkpoints: list[np.ndarray]
    losses: list[float]
    cov_traces: list[float]

    @property
    def epochs(self) -> int:
        return len(self.checkpoints)

    def params_at(self, epoch: int) -> np.ndarray:
        """Epoch 0 is the untrained initial state; e >= 1 is after epoch e."""
        if epoch == 0:
            return self.initial_params
        return self.checkpoints[epoch - 1]

    def encoder_at(self, epoch: int) -> Encoder:
        return Encoder(self.config.encoder, self.params_at(epoch).copy())

    def save(self, out_dir) -> list[Path]:
        """One checkpoint file per epoch (000 = initial) plus the training log."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tag = self.config.noise.tag
        written = []
        for epoch in range(self.epochs + 1):
            path = out_dir / f"{tag}_{epoch:03d}.ckpt"
            meta = {
                "noise": {"kind": self.config.noise.kind, "params": dict(self.config.noise.params)},
                "epoch": epoch,
                "seed": self.config.seed,
                "loss_mode": self.config.loss_mode,
            }
            save_checkpoint(self.encoder_at(epoch), path, meta)
            written.append(path)
        log_path = out_dir / f"{tag}_train_log.csv"
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "feature_covariance_trace"])
            for e, (loss, trace) in enumerate(zip(self.losses, self.cov_traces), start=1):
                writer.writerow([e, f"{loss:.17g}", f"{trace:.17g}"])
        written.append(log_path)
        return written


def load_series(ckpt_dir, noise_tag: str) -> "CheckpointSeries":
    """Rebuild a series from {tag}_{epoch:03d}.ckpt files written by save()."""
    ckpt_dir = Path(ckpt_dir)
    paths = sorted(ckpt_dir.glob(f"{noise_tag}_[0-9][0-9][0-9].ckpt"))
    if not paths:
        raise FileNotFoundError(f"no checkpoints for tag {noise_tag!r} in {ckpt_dir}")
    params = []
    noise = None
    seed = 0
    loss_mode = "attract"
    enc_config = None
    for path in paths:
        enc, meta = load_checkpoint(path)
        params.append(enc.params)
        enc_config = enc.config
        if meta.get("noise"):
            noise = NoiseSpec(meta["noise"]["kind"], meta["noise"]["params"])
        seed = meta.get("seed", 0)
        loss_mode = meta.get("loss_mode", "attract")
    cfg = TrainConfig(
        noise=noise if noise is not None else jitter_spec(0.5, 0.3),
        epochs=max(1, len(params) - 1),
        seed=seed,
        loss_mode=loss_mode,
        encoder=enc_config,
    )
    losses: list[float] = []
    traces: list[float] = []
    log_path = ckpt_dir / f"{noise_tag}_train_log.csv"
    if log_path.exists():
        with open(log_path, newline="") as fh:
            for row in csv.DictReader(fh):
                losses.append(float(row["mean_loss"]))
                traces.append(float(row["feature_covariance_trace"]))
    return CheckpointSeries(
        config=cfg,
        initial_params=params[0],
        checkpoints=params[1:],
        losses=losses,
        cov_traces=traces,
    )


def _noised_partner(img: Image, cfg: TrainConfig, root: Rng, epoch: int, index: int) -> Image:
    rng = root.substream(NS_NOISE, epoch, index)
    noised = apply_noise(cfg.noise, img, rng)
    return preprocess(noised, cfg.encoder.input_side)


def epoch_mean_loss(enc: Encoder, originals, prepped, cfg: TrainConfig, epoch: int) -> float:
    """Mean pair loss over the epoch's pairs, evaluated at the given parameters.

    Reuses the epoch's noise substreams, so a reloaded epoch-e checkpoint
    reproduces the logged epoch-e loss.
    """
    root = Rng(cfg.seed)
    total = 0.0
    for i, img in enumerate(originals):
        partner = _noised_partner(img, cfg, root, epoch, i)
        loss, _, _ = cosine_loss_grad(forward(enc, prepped[i]), forward(enc, partner), cfg.loss_mode)
        total += loss
    return total / len(originals)


def mean_pair_cosine(enc: Encoder, images, noise: NoiseSpec, seed: int = 0) -> float:
    """Mean cosine similarity between each image and a fresh noised partner.

    Evaluation-only: draws come from a dedicated substream so the measurement
    is identical whenever (images, noise, seed) are identical.
    """
    root = Rng(seed)
    side = enc.config.input_side
    total = 0.0
    for i, img in enumerate(images):
        rng = root.substream(NS_EVAL, i)
        partner = preprocess(apply_noise(noise, img, rng), side)
        f_a = forward(enc, preprocess(img, side))
        f_b = forward(enc, partner)
        na, nb = np.linalg.norm(f_a), np.linalg.norm(f_b)
        if na == 0.0 or nb == 0.0:
            raise ZeroVector("zero feature vector during cosine evaluation")
        total += float((f_a / na) @ (f_b / nb))
    return total / len(images)


def train_on_images(images, cfg: TrainConfig) -> CheckpointSeries:
    """Run the fine-tuning loop on in-memory images. Deterministic per seed."""
    if not images:
        raise EmptyTrainDir("no training images")
    side = cfg.encoder.input_side
    originals = list(images)
    prepped = [preprocess(img, side) for img in originals]

    enc = init_encoder(cfg.encoder)
    initial_params = enc.params.copy()
    velocity = np.zeros_like(enc.params)
    root = Rng(cfg.seed)
    n = len(originals)

    checkpoints: list[np.ndarray] = []
    losses: list[float] = []
    traces: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        order = root.substream(NS_SHUFFLE, epoch).gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad_sum = np.zeros_like(enc.params)
            loss_sum = 0.0
            for idx in batch:
                idx = int(idx)
                partner = _noised_partner(originals[idx], cfg, root, epoch, idx)
                cache = forward_pair(enc, prepped[idx], partner)
                loss, g_a, g_b = cosine_loss_grad(*cache.features, cfg.loss_mode)
                grad_sum += backward(enc, cache, g_a, g_b)
                loss_sum += loss
            if not np.isfinite(loss_sum):
                raise DivergenceDetected(f"non-finite loss in epoch {epoch}")
            params, velocity = sgd_step(
                enc.params, grad_sum / len(batch), velocity, cfg.learning_rate, cfg.momentum
            )
            enc.update_params(params)
        losses.append(epoch_mean_loss(enc, originals, prepped, cfg, epoch))
        feats = np.stack([forward(enc, p) for p in prepped])
        traces.append(float(np.trace(np.atleast_2d(np.cov(feats, rowvar=False)))) if n > 1 else 0.0)
        checkpoints.append(enc.params.copy())

    return CheckpointSeries(
        config=cfg,
        initial_params=initial_params,
        checkpoints=checkpoints,
        losses=losses,
        cov_traces=traces,
    )


def train(train_dir, cfg: TrainConfig) -> CheckpointSeries:
    """Load every decodable image under train_dir and fine-tune on them."""
    from .augment import list_images

    paths = list_images(train_dir)
    if not paths:
        raise EmptyTrainDir(f"no training images under {train_dir}")
    return train_on_images([load_image(p) for p in paths], cfg)
