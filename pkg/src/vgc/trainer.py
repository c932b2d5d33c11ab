"""Desk-scale multi-rate training: dataset pipeline, Adam, the per-step
rate loop, and bit-exact checkpointing.

Each step runs the analysis transform once, then for every bit depth B in
the rate set quantizes the code map stochastically, decodes, and
accumulates 2 * ||x - x'_B|| - MS-SSIM(x, x'_B). Decoder gradients flow
back per rate; the straight-through estimator carries them across the
quantizer (zeroing clamped positions), and the summed cotangent drives a
single encoder backward pass. After the optimizer step the normalization
parameters are projected back onto their positivity constraints.

The learning rate stays constant for the first half of the epochs (or
`constant_epochs` if set) and then decays linearly, reaching zero exactly
one epoch past the last one.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images
from .errors import DecodeError, VgcError
from .metrics import MsSsimConfig, l2_loss, l2_loss_grad, ms_ssim_with_grad
from .network import CodecConfig, build_codec
from .quantizer import quantize_dequantize_batch, ste_backward

CHECKPOINT_VERSION = 1


class TrainingDiverged(VgcError):
    pass


@dataclass
class TrainConfig:
    rates: tuple = (2, 4, 8)
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    constant_epochs: int | None = None  # default: first half of the run
    patch: int = 64
    seed: int = 0
    ms_scales: int = 3
    mask_clamped_gradients: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.rates:
            raise ValueError("rate set must be non-empty")
        if any(not 1 <= b <= 8 for b in self.rates):
            raise ValueError("every rate must be in [1, 8]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patch % 8:
            raise ValueError("patch size must be a multiple of 8")

    def lr_at(self, epoch: int) -> float:
        const = self.constant_epochs
        if const is None:
            const = self.epochs // 2
        const = min(const, self.epochs - 1)
        if epoch < const:
            return self.learning_rate
        span = self.epochs - const + 1
        return self.learning_rate * max(self.epochs - epoch, 0) / span

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["rates"] = list(self.rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["rates"] = tuple(d["rates"])
        return cls(**d)


class Dataset:
    """Eagerly loaded image folder with a deterministic patch stream."""

    def __init__(self, items: list[np.ndarray], patch: int, seed: int):
        if not items:
            raise VgcError("dataset is empty")
        self.items = items
        self.patch = patch
        self.seed = seed

    def __len__(self):
        return len(self.items)

    def _crop(self, img: np.ndarray, rng) -> np.ndarray:
        p = self.patch
        h, w = img.shape[:2]
        if h < p or w < p:
            img = np.pad(
                img,
                ((0, max(0, p - h)), (0, max(0, p - w)), (0, 0)),
                mode="reflect",
            )
            h, w = img.shape[:2]
        top = int(rng.integers(0, h - p + 1))
        left = int(rng.integers(0, w - p + 1))
        return img[top : top + p, left : left + p]

    def batches(self, batch_size: int, epoch: int):
        """Full batches of normalized patches; order fixed by (seed, epoch)."""
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(len(self.items))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            patches = [
                images.to_unit(self._crop(self.items[i], rng)) for i in idx
            ]
            yield np.stack(patches)

    def batches_per_epoch(self, batch_size: int) -> int:
        return len(self.items) // batch_size


def load_dataset(path, patch: int, seed: int) -> Dataset:
    """Read every supported raster image under `path` (sorted order)."""
    root = Path(path)
    items = []
    for p in sorted(root.iterdir()):
        if p.suffix.lower() not in (".png", ".ppm"):
            continue
        try:
            items.append(images.load_image(p))
        except Exception as e:  # unreadable file: skip, keep training
            warnings.warn(f"skipping unreadable image {p}: {e}")
    if not items:
        raise VgcError(f"no usable images found in {root}")
    return Dataset(items, patch, seed)


class Adam:
    def __init__(self, named_params, lr, beta1, beta2, eps):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepReport:
    step: int
    loss: float
    l2_by_rate: dict = field(default_factory=dict)
    ms_by_rate: dict = field(default_factory=dict)


class Trainer:
    def __init__(self, codec_config: CodecConfig, train_config: TrainConfig,
                 dtype=np.float32):
        self.codec_config = codec_config
        self.config = train_config
        self.encoder, self.decoder = build_codec(
            codec_config, seed=train_config.seed, dtype=dtype
        )
        self.opt = Adam(
            list(self.encoder.named_params_prefixed("enc"))
            + list(self.decoder.named_params_prefixed("dec")),
            train_config.learning_rate,
            train_config.adam_beta1,
            train_config.adam_beta2,
            train_config.adam_eps,
        )
        self.noise_rng = np.random.default_rng([train_config.seed, 0xD1CE])
        self.ms_cfg = MsSsimConfig(scales=train_config.ms_scales)
        self.epoch = 0
        self.step_count = 0

    def train_step(self, batch: np.ndarray, lr: float | None = None) -> StepReport:
        cfg = self.config
        dtype = self.encoder.dtype
        self.encoder.zero_grads()
        self.decoder.zero_grads()

        code = self.encoder.forward(batch)
        dcode = np.zeros(code.shape, dtype=np.float64)
        report = StepReport(step=self.step_count, loss=0.0)
        for bits in cfg.rates:
            deq, mask = quantize_dequantize_batch(code, bits, rng=self.noise_rng)
            recon = self.decoder.forward(deq.astype(dtype))
            l2 = l2_loss(batch, recon)
            ms, ms_grad = ms_ssim_with_grad(batch, recon, self.ms_cfg)
            drecon = 2.0 * l2_loss_grad(batch, recon) - ms_grad
            ddeq = self.decoder.backward(drecon.astype(dtype))
            dcode += ste_backward(
                ddeq.astype(np.float64),
                mask if cfg.mask_clamped_gradients else None,
            )
            report.l2_by_rate[bits] = l2
            report.ms_by_rate[bits] = ms
            report.loss += 2.0 * l2 - ms
        self.encoder.backward(dcode.astype(dtype))

        if not np.isfinite(report.loss):
            stats = (
                f"last reconstruction min={recon.min():.4g} "
                f"max={recon.max():.4g} mean={recon.mean():.4g}"
            )
            raise TrainingDiverged(
                f"non-finite loss at step {self.step_count}: {stats}"
            )

        self.opt.step(cfg.lr_at(self.epoch) if lr is None else lr)
        self.encoder.project_constraints()
        self.decoder.project_constraints()
        self.step_count += 1
        return report

    def run_epoch(self, dataset: Dataset) -> list[StepReport]:
        reports = [
            self.train_step(batch)
            for batch in dataset.batches(self.config.batch_size, self.epoch)
        ]
        self.epoch += 1
        return reports

    def fit(self, dataset: Dataset, log_path=None) -> list[StepReport]:
        if dataset.batches_per_epoch(self.config.batch_size) == 0:
            raise VgcError(
                f"batch size {self.config.batch_size} exceeds the dataset "
                f"({len(dataset)} images); no full batch can be formed"
            )
        history = []
        writer = None
        handle = None
        if log_path is not None:
            handle = open(log_path, "w", newline="")
            writer = csv.writer(handle)
            writer.writerow(
                ["step"]
                + [f"l2_b{b}" for b in self.config.rates]
                + [f"ms_ssim_b{b}" for b in self.config.rates]
                + ["loss"]
            )
        try:
            while self.epoch < self.config.epochs:
                for rep in self.run_epoch(dataset):
                    history.append(rep)
                    if writer is not None:
                        writer.writerow(
                            [rep.step]
                            + [rep.l2_by_rate[b] for b in self.config.rates]
                            + [rep.ms_by_rate[b] for b in self.config.rates]
                            + [rep.loss]
                        )
        finally:
            if handle is not None:
                handle.close()
        return history


# --- checkpointing -----------------------------------------------------------


def save_checkpoint(path, trainer: Trainer):
    """Whole training state; reloading resumes bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "codec_config": trainer.codec_config.to_dict(),
        "config_hash": trainer.codec_config.digest().hex(),
        "train_config": trainer.config.to_dict(),
        "epoch": trainer.epoch,
        "step_count": trainer.step_count,
        "adam_t": trainer.opt.t,
        "rng_state": trainer.noise_rng.bit_generator.state,
        "dtype": np.dtype(trainer.encoder.dtype).name,
    }
    arrays = {}
    for name, p in trainer.opt.params:
        arrays[f"param/{name}"] = p.data
        arrays[f"adam_m/{name}"] = trainer.opt.m[name]
        arrays[f"adam_v/{name}"] = trainer.opt.v[name]
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path) -> Trainer:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except Exception as e:
        raise DecodeError(f"unreadable checkpoint {path}: {e}") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DecodeError(
            f"checkpoint version {meta.get('version')} unsupported"
        )
    codec_config = CodecConfig.from_dict(meta["codec_config"])
    if codec_config.digest().hex() != meta["config_hash"]:
        raise DecodeError(
            "checkpoint config hash mismatch: stored architecture was "
            f"{meta['config_hash']}, reconstructed {codec_config.digest().hex()}"
        )
    trainer = Trainer(
        codec_config,
        TrainConfig.from_dict(meta["train_config"]),
        dtype=np.dtype(meta["dtype"]),
    )
    trainer.epoch = meta["epoch"]
    trainer.step_count = meta["step_count"]
    trainer.opt.t = meta["adam_t"]
    trainer.noise_rng.bit_generator.state = meta["rng_state"]
    for name, p in trainer.opt.params:
        key = f"param/{name}"
        if key not in arrays:
            raise DecodeError(f"checkpoint missing array {key}")
        if arrays[key].shape != p.data.shape:
            raise DecodeError(f"checkpoint array {key} has wrong shape")
        p.data[...] = arrays[key]
        trainer.opt.m[name][...] = arrays[f"adam_m/{name}"]
        trainer.opt.v[name][...] = arrays[f"adam_v/{name}"]
    return trainer


def load_codec(path):
    """Encoder/decoder only (for the encode/decode/eval commands)."""
    t = load_checkpoint(path)
    return t.encoder, t.decoder, t.codec_config
