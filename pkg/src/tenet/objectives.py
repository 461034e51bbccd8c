"""Training objectives: SI-SDR, the feature-distance (PFP) loss, and their combinations."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .compute import l1_distance, load_checkpoint, log10, save_checkpoint
from .errors import DegenerateInputError, EvaluationError, FormatError, InvalidArgumentError

FEATURE_DIM = 512


@dataclass
class LossWeights:
    alpha: float = 1.0  # feature-distance weight
    beta: float = 0.5  # forward stream
    gamma: float = 0.5  # reversed stream
    eps: float = 1e-8
    zero_mean: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InvalidArgumentError("loss weights must be nonnegative")
        if self.eps <= 0:
            raise InvalidArgumentError("eps must be positive")


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def si_sdr(s, s_hat, eps: float = 1e-8, zero_mean: bool = False):
    """Scale-invariant SDR in dB along the last axis.

    ``10 log10((|s_t|^2 + eps) / (|e|^2 + eps))`` with ``s_t = <s^, s> s / |s|^2``
    and ``e = s^ - s_t``.  No mean removal unless ``zero_mean``.  Returns a
    float (or ndarray) for array inputs and a tensor (batch-shaped) for tensor inputs.
    """
    plain = not isinstance(s, torch.Tensor) and not isinstance(s_hat, torch.Tensor)
    s, s_hat = _as_tensor(s), _as_tensor(s_hat)
    if s.shape != s_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {tuple(s.shape)} vs {tuple(s_hat.shape)}")
    if s.shape[-1] < 1:
        raise InvalidArgumentError("signals must have at least one sample")
    if zero_mean:
        s = s - s.mean(dim=-1, keepdim=True)
        s_hat = s_hat - s_hat.mean(dim=-1, keepdim=True)
    energy = (s * s).sum(dim=-1, keepdim=True)
    if bool((energy == 0).any()):
        raise DegenerateInputError("reference signal is silent; SI-SDR undefined")
    target = (s_hat * s).sum(dim=-1, keepdim=True) / energy * s
    noise = s_hat - target
    ratio = ((target * target).sum(dim=-1) + eps) / ((noise * noise).sum(dim=-1) + eps)
    value = 10.0 * log10(ratio, floor=0.0)
    if plain:
        return value.item() if value.dim() == 0 else value.numpy()
    return value


def si_sdr_loss(s, s_hat, eps: float = 1e-8, zero_mean: bool = False):
    return -si_sdr(s, s_hat, eps, zero_mean)


class ConvFeatureEncoder(nn.Module):
    """Frozen strided 1-D convolution stack, 512-dimensional output every 160 samples.

    Kernel/stride geometry (10/5, 8/4, 4/2, 4/2, 4/2) gives a receptive field of
    465 samples (about 29 ms at 16 kHz).  Weights are drawn once from ``seed``
    and never trained; the encoder only supplies a fixed feature space for the
    distance loss.
    """

    kernels = (10, 8, 4, 4, 4)
    strides = (5, 4, 2, 2, 2)

    def __init__(self, seed: int = 0, width: int = 64, out_dim: int = FEATURE_DIM):
        super().__init__()
        self.seed, self.width, self.out_dim = seed, width, out_dim
        gen = torch.Generator().manual_seed(seed)
        chans = [1] + [width] * (len(self.kernels) - 1) + [out_dim]
        self.layers = nn.ModuleList()
        for cin, cout, k, st in zip(chans[:-1], chans[1:], self.kernels, self.strides):
            conv = nn.Conv1d(cin, cout, k, stride=st, bias=False)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (cin * k)) ** 0.5)
            conv.weight.requires_grad_(False)
            self.layers.append(conv)

    @property
    def identity(self) -> str:
        return f"conv5-stride160-w{self.width}-d{self.out_dim}-seed{self.seed}"

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, st in zip(self.kernels, self.strides):
            rf += (k - 1) * jump
            jump *= st
        return rf

    def forward(self, x):
        """(batch, L) or (L,) waveform -> (batch, frames, 512) features."""
        if x.dim() == 1:
            x = x.unsqueeze(0)
        x = x.to(self.layers[0].weight.dtype)
        if x.shape[-1] < self.receptive_field:
            x = F.pad(x, (0, self.receptive_field - x.shape[-1]))
        h = x.unsqueeze(1)
        for i, conv in enumerate(self.layers):
            h = conv(h)
            if i < len(self.layers) - 1:
                h = F.gelu(h)
        return h.transpose(1, 2)

    def save(self, path):
        save_checkpoint(path, dict(self.named_parameters()),
                        {"identity": self.identity, "kind": "feature-encoder",
                         "seed": self.seed, "width": self.width, "out_dim": self.out_dim})

    @classmethod
    def load(cls, path) -> "ConvFeatureEncoder":
        header, params = load_checkpoint(path)
        if header.get("kind") != "feature-encoder":
            raise FormatError(f"{path} is not a feature-encoder checkpoint")
        enc = cls(header["seed"], header["width"], header["out_dim"])
        if enc.identity != header["identity"]:
            raise FormatError(f"{path}: identity {header['identity']!r} does not match weights")
        with torch.no_grad():
            for name, p in enc.named_parameters():
                p.copy_(torch.from_numpy(params[name]))
        return enc


class PrecomputedEncoder:
    """Lookup of externally computed embeddings, keyed by a hash of the waveform.

    The ``.npz`` file maps ``sha1(float32 little-endian samples)`` to a
    (frames, 512) array.  Lookups are constants, so gradients do not flow
    through this encoder; it serves evaluation with real pretrained features.
    """

    def __init__(self, path, identity: str | None = None):
        with np.load(path) as data:
            self.table = {k: data[k] for k in data.files}
        self.identity = identity or f"precomputed:{path}"

    @staticmethod
    def key(samples) -> str:
        arr = np.asarray(samples, dtype="<f4")
        return hashlib.sha1(arr.tobytes()).hexdigest()

    def __call__(self, x):
        rows = x.detach().double().numpy()
        rows = rows[None] if rows.ndim == 1 else rows
        feats = []
        for row in rows:
            k = self.key(row)
            if k not in self.table:
                raise KeyError(f"no precomputed embedding for waveform {k}")
            feats.append(self.table[k])
        return torch.as_tensor(np.stack(feats), dtype=x.dtype)


def pfp_loss(s, s_hat, encoder):
    """Mean absolute difference between encoder features of ``s_hat`` and ``s``."""
    s, s_hat = _as_tensor(s), _as_tensor(s_hat)
    if s.shape != s_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {tuple(s.shape)} vs {tuple(s_hat.shape)}")
    ref = encoder(s)
    est = encoder(s_hat)
    if ref.shape != est.shape:
        raise EvaluationError(
            f"encoder produced {tuple(est.shape)} features for the estimate vs {tuple(ref.shape)}")
    return l1_distance(est, ref)


def hybrid_loss(s, s_hat, weights: LossWeights, encoder=None):
    """``-SI-SDR + alpha * PFP`` for a single pair of 1-D signals."""
    loss = si_sdr_loss(s, s_hat, weights.eps, weights.zero_mean)
    if weights.alpha:
        if encoder is None:
            raise InvalidArgumentError("alpha > 0 requires a feature encoder")
        loss = loss + weights.alpha * pfp_loss(s, s_hat, encoder)
    return loss


def total_loss(forward, reversed_, weights: LossWeights, encoder=None):
    """``beta * hybrid(forward) + gamma * hybrid(reversed)``.

    Each stream is an ``(s, s_hat)`` pair.  With ``gamma == 0`` (or no reversed
    pair) the reversed term is not evaluated at all.
    """
    loss = weights.beta * hybrid_loss(*forward, weights, encoder)
    if weights.gamma and reversed_ is not None:
        loss = loss + weights.gamma * hybrid_loss(*reversed_, weights, encoder)
    return loss
