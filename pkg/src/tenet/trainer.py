"""Two-stream (forward / time-reversed) training with one shared parameter set."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from .augment import AugmentSpec, TrainingPair, item_seed, make_siamese_inputs
from .compute import (OptimState, ParamStore, configure_threads, load_checkpoint,
                      optimizer_step, save_checkpoint)
from .data import Manifest, read_wav, write_wav
from .dsp import DEFAULT_SAMPLE_RATE, Waveform
from .errors import (ConfigurationError, EvaluationError, FormatError, InvalidArgumentError,
                     TenetError)
from .model import CDPT, ModelConfig, build_model
from .objectives import ConvFeatureEncoder, LossWeights, hybrid_loss, si_sdr

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "cdpt"
CHECKPOINT_VERSION = 1
ABLATION_VARIANTS = (  # (directory slug, table row, switches)
    ("full", "TENET", {}),
    ("no_sample_masking", "- sample masking", {"sample_masking": False}),
    ("no_time_shifting", "- time shifting", {"time_shifting": False}),
    ("no_speed_perturbation", "- speed perturbation", {"speed_perturbation": False}),
    ("no_time_reversal", "- time reversal (CDPT only)", {"time_reversal": False}),
)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0


@dataclass
class AblationSwitches:
    time_reversal: bool = True
    sample_masking: bool = True
    time_shifting: bool = True
    speed_perturbation: bool = True


@dataclass
class RunConfig:
    batch_size: int = 8
    crop_len_s: float = 2.0
    epochs: int = 30
    patience: int = 10
    seed: int = 0
    threads: int = 1
    encoder_seed: int = 0
    encoder_width: int = 64
    max_steps: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: RunConfig = field(default_factory=RunConfig)
    ablation: AblationSwitches = field(default_factory=AblationSwitches)

    SECTIONS = {"model": ModelConfig, "augment": AugmentSpec, "loss": LossWeights,
                "optim": OptimConfig, "train": RunConfig, "ablation": AblationSwitches}

    def __post_init__(self):
        if self.train.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.train.crop_len_s * self.train.sample_rate < self.model.frame_len:
            raise ConfigurationError("crop_len_s is shorter than one analysis frame")

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in self.SECTIONS}

    @classmethod
    def from_dict(cls, sections: dict) -> "TrainConfig":
        cfgio.check_sections(sections, cls.SECTIONS)
        return cls(**{name: cfgio.fill_dataclass(kind, sections.get(name, {}), name)
                      for name, kind in cls.SECTIONS.items()})

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(cfgio.read_config(path))

    def save(self, path):
        cfgio.write_config(path, self.to_dict())

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def effective_augment(self) -> AugmentSpec:
        ab = self.ablation
        return dataclasses.replace(
            self.augment,
            speed_perturbation=self.augment.speed_perturbation and ab.speed_perturbation,
            time_shifting=self.augment.time_shifting and ab.time_shifting,
            sample_masking=self.augment.sample_masking and ab.sample_masking)

    def effective_loss(self) -> LossWeights:
        if self.ablation.time_reversal:
            return self.loss
        return dataclasses.replace(self.loss, gamma=0.0)

    def with_ablation(self, **switches) -> "TrainConfig":
        return dataclasses.replace(self, ablation=dataclasses.replace(self.ablation, **switches))


def toy_config(**train_overrides) -> TrainConfig:
    """Small configuration that trains on a desk-scale CPU."""
    run = dataclasses.replace(RunConfig(batch_size=8, crop_len_s=1.0, epochs=30), **train_overrides)
    return TrainConfig(
        model=ModelConfig(feature_dim=32, chunk_len=50, num_blocks=2, num_heads=4, ff_hidden=64,
                          conv_filters=8),
        loss=LossWeights(alpha=1.0, beta=0.5, gamma=0.5),
        train=run)


# ---------------------------------------------------------------------------
# one step


def pad_batch(arrays, dtype) -> torch.Tensor:
    longest = max(a.size for a in arrays)
    out = np.zeros((len(arrays), longest))
    for i, a in enumerate(arrays):
        out[i, : a.size] = a
    return torch.as_tensor(out, dtype=dtype)


def stream_loss(model: CDPT, pairs, weight: float, weights: LossWeights, encoder=None):
    """``weight`` times the batch-mean hybrid loss of one stream.

    Items are padded to the longest one for the forward pass; each item's loss
    only sees its own unpadded span.
    """
    dtype = next(model.parameters()).dtype
    noisy = pad_batch([p.noisy.samples for p in pairs], dtype)
    estimate = model(noisy)
    losses = []
    for i, p in enumerate(pairs):
        n = len(p.clean)
        clean = torch.as_tensor(p.clean.samples, dtype=dtype)
        losses.append(hybrid_loss(clean, estimate[i, :n], weights, encoder))
    return weight * torch.stack(losses).mean()


def siamese_step(batch, model: CDPT, weights: LossWeights, encoder=None,
                 augment: AugmentSpec | None = None, seeds=None):
    """Loss and gradients of the two-stream objective on one batch.

    ``batch`` holds TrainingPairs; each is augmented with its seed and paired
    with its reversal.  Both streams run through the same ``model``, and the
    returned gradients are the sum of the per-stream gradients.  With
    ``weights.gamma == 0`` the reversed stream is skipped entirely.
    """
    if not batch:
        raise InvalidArgumentError("empty batch")
    augment = augment or AugmentSpec.disabled()
    seeds = seeds if seeds is not None else list(range(len(batch)))
    inputs = [make_siamese_inputs(p, augment, s) for p, s in zip(batch, seeds)]
    params = ParamStore(model).trainable()
    names, tensors = list(params), list(params.values())

    streams = [("forward", weights.beta)]
    if weights.gamma:
        streams.append(("reversed", weights.gamma))
    total, grads = 0.0, None
    for key, weight in streams:
        loss = stream_loss(model, [item[key] for item in inputs], weight, weights, encoder)
        if not torch.isfinite(loss):
            raise EvaluationError(f"non-finite {key}-stream loss for items with seeds {seeds}")
        g = torch.autograd.grad(loss, tensors, allow_unused=True)
        g = [torch.zeros_like(t) if gi is None else gi for t, gi in zip(tensors, g)]
        grads = g if grads is None else [a + b for a, b in zip(grads, g)]
        total += loss.item()
    return total, dict(zip(names, grads))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: CDPT
    runlog: list
    checkpoint: Path | None
    best_val_sisdr: float


def crop_pair(p: TrainingPair, crop_len: int, rng: np.random.Generator) -> TrainingPair:
    if len(p.noisy) <= crop_len:
        return p
    start = int(rng.integers(0, len(p.noisy) - crop_len + 1))
    return p.map(lambda s: s[start : start + crop_len])


@torch.no_grad()
def validate(model: CDPT, pairs, eps: float = 1e-8) -> float:
    """Mean forward-stream SI-SDR over full utterances."""
    if not pairs:
        return float("nan")
    dtype = next(model.parameters()).dtype
    scores = []
    for p in pairs:
        est = model(torch.as_tensor(p.noisy.samples, dtype=dtype)).double().numpy()
        scores.append(si_sdr(p.clean.samples, est, eps))
    return float(np.mean(scores))


def checkpoint_header(cfg: TrainConfig, **extra) -> dict:
    return {"kind": CHECKPOINT_KIND, "version": CHECKPOINT_VERSION,
            "model": cfg.model.to_dict(), "config": cfg.to_dict(), **extra}


def save_model(path, model: CDPT, cfg: TrainConfig, **extra):
    save_checkpoint(path, {k: v for k, v in model.state_dict().items()},
                    checkpoint_header(cfg, **extra))


def load_model(path) -> tuple[CDPT, dict]:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise FormatError(f"{path}: not a model checkpoint (kind={header.get('kind')!r})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {header.get('version')} unsupported")
    model = CDPT(ModelConfig.from_dict(header["model"]))
    expected = model.state_dict()
    if set(expected) != set(arrays):
        raise FormatError(f"{path}: parameter names do not match the model configuration")
    for name, tensor in expected.items():
        if tuple(tensor.shape) != arrays[name].shape:
            raise FormatError(f"{path}: {name} has shape {arrays[name].shape}, "
                              f"expected {tuple(tensor.shape)}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model, header


def epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch], spawn_key=(2,)))
    return rng.permutation(count)


def _order_digest(order) -> str:
    return hashlib.sha256(np.asarray(order, dtype=np.int64).tobytes()).hexdigest()[:16]


def train(cfg: TrainConfig, train_pairs, val_pairs=(), out_dir=None) -> TrainResult:
    """Train from in-memory pairs; keep the best-by-validation weights.

    Writes ``best.tnt`` and ``runlog.jsonl`` into ``out_dir`` when given.
    """
    if not train_pairs:
        raise InvalidArgumentError("no training items")
    run = cfg.train
    configure_threads(run.threads)
    model = build_model(cfg.model, seed=run.seed)
    weights = cfg.effective_loss()
    augment = cfg.effective_augment()
    encoder = ConvFeatureEncoder(run.encoder_seed, run.encoder_width) if weights.alpha else None
    params = ParamStore(model).trainable()
    state = OptimState(lr=cfg.optim.lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2,
                       eps=cfg.optim.eps, clip=cfg.optim.clip)
    crop_len = int(round(run.crop_len_s * run.sample_rate))
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        runlog_path = out_dir / "runlog.jsonl"
        runlog_path.write_text("")
        (out_dir / "timing.jsonl").write_text("")
    log.info("training %d items, config %s, %d threads, %d parameters", len(train_pairs),
             cfg.config_hash(), run.threads, params.num_elements)

    runlog, best, best_state, stale, steps = [], -np.inf, None, 0, 0
    ckpt = out_dir / "best.tnt" if out_dir else None
    for epoch in range(run.epochs):
        start = time.perf_counter()
        model.train()
        order = epoch_order(run.seed, epoch, len(train_pairs))
        losses = []
        for b in range(0, len(order), run.batch_size):
            idx = order[b : b + run.batch_size]
            # crops follow the run seed, augmentation draws the augment seed
            crop_seeds = [item_seed(run.seed, epoch, int(i)) for i in idx]
            seeds = [item_seed(augment.seed, epoch, int(i)) for i in idx]
            batch = [crop_pair(train_pairs[i], crop_len,
                               np.random.default_rng(np.random.SeedSequence(s, spawn_key=(1,))))
                     for i, s in zip(idx, crop_seeds)]
            try:
                loss, grads = siamese_step(batch, model, weights, encoder, augment, seeds)
            except EvaluationError as exc:
                log.warning("epoch %d: step aborted for items %s: %s", epoch, idx.tolist(), exc)
                continue
            optimizer_step(params, grads, state)
            losses.append(loss)
            steps += 1
            if run.max_steps and steps >= run.max_steps:
                break
        model.eval()
        val = validate(model, val_pairs, weights.eps) if val_pairs else float("nan")
        # wall-clock time goes to a side file so the run log itself is reproducible
        seconds = round(time.perf_counter() - start, 3)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
                  "val_sisdr": val, "config_hash": cfg.config_hash(),
                  "data_order": _order_digest(order), "step_losses": losses}
        runlog.append(record)
        if out_dir:
            with open(runlog_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
            with open(out_dir / "timing.jsonl", "a") as fh:
                fh.write(json.dumps({"epoch": epoch, "seconds": seconds}) + "\n")
        log.info("epoch %d  train_loss %.4f  val_sisdr %.3f dB  (%.1fs)", epoch,
                 record["train_loss"], val, seconds)
        score = val if np.isfinite(val) else -record["train_loss"]
        if score > best:
            best, stale = score, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if ckpt:
                save_model(ckpt, model, cfg, epoch=epoch, val_sisdr=val)
        else:
            stale += 1
            if stale >= run.patience:
                log.info("early stop after %d epochs without improvement", stale)
                break
        if run.max_steps and steps >= run.max_steps:
            break
    if best_state is None:
        raise EvaluationError("training produced no finite epoch; nothing to keep")
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, runlog, ckpt, float(best))


def load_manifest_pairs(manifest: Manifest, sample_rate=DEFAULT_SAMPLE_RATE) -> list:
    """Read aligned pairs; unreadable items are skipped with a warning."""
    pairs = []
    for item_id, noisy_rel, clean_rel in manifest.rows:
        try:
            noisy = read_wav(manifest.resolve(noisy_rel), sample_rate)
            clean = read_wav(manifest.resolve(clean_rel), sample_rate)
            pairs.append(TrainingPair(noisy, clean))
        except (OSError, TenetError) as exc:
            log.warning("skipping %s: %s", item_id, exc)
    if manifest.rows and not pairs:
        raise FormatError("no readable items in manifest")
    return pairs


def train_from_manifests(cfg: TrainConfig, train_manifest: Manifest,
                         val_manifest: Manifest | None, out_dir) -> TrainResult:
    train_pairs = load_manifest_pairs(train_manifest, cfg.train.sample_rate)
    val_pairs = load_manifest_pairs(val_manifest, cfg.train.sample_rate) if val_manifest else []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.ini")
    return train(cfg, train_pairs, val_pairs, out_dir)


# ---------------------------------------------------------------------------
# inference


def enhance_file(model: CDPT, in_path, out_path) -> dict:
    """Forward-stream inference on one full utterance, written as 16-bit PCM."""
    noisy = read_wav(in_path, sample_rate=None)
    if noisy.sample_rate != DEFAULT_SAMPLE_RATE:
        raise InvalidArgumentError(
            f"{in_path}: sample rate {noisy.sample_rate} Hz, model expects {DEFAULT_SAMPLE_RATE} Hz")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(noisy.samples, dtype=dtype)).double().numpy()
    write_wav(out_path, Waveform(out, noisy.sample_rate))
    return {"input": str(in_path), "output": str(out_path), "samples": out.size,
            "peak": float(np.abs(out).max())}


def enhance(checkpoint, in_path, out_path) -> list:
    """Enhance one WAV, or every ``*.wav`` in a directory into ``out_path``."""
    model, _ = load_model(checkpoint)
    in_path, out_path = Path(in_path), Path(out_path)
    if in_path.is_dir():
        out_path.mkdir(parents=True, exist_ok=True)
        return [enhance_file(model, f, out_path / f.name) for f in sorted(in_path.glob("*.wav"))]
    return [enhance_file(model, in_path, out_path)]


# ---------------------------------------------------------------------------
# ablations


def run_ablation_matrix(cfg: TrainConfig, train_pairs, val_pairs, out_dir=None) -> list:
    """Train every ablation variant on identical data and seeds; one row per variant."""
    rows = []
    for slug, name, switches in ABLATION_VARIANTS:
        variant = cfg.with_ablation(**switches)
        sub = Path(out_dir) / slug if out_dir else None
        result = train(variant, train_pairs, val_pairs, sub)
        rows.append({"variant": name, "val_sisdr": result.best_val_sisdr,
                     "gamma": variant.effective_loss().gamma,
                     "final_train_loss": result.runlog[-1]["train_loss"],
                     "data_order": [r["data_order"] for r in result.runlog]})
        log.info("ablation %-28s val SI-SDR %.3f dB", name, result.best_val_sisdr)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.json").write_text(json.dumps(rows, indent=2))
        (Path(out_dir) / "ablation.txt").write_text(format_ablation(rows))
    return rows


def format_ablation(rows) -> str:
    lines = [f"{'variant':<30}{'val SI-SDR (dB)':>18}"]
    lines += [f"{r['variant']:<30}{r['val_sisdr']:>18.3f}" for r in rows]
    return "\n".join(lines)
