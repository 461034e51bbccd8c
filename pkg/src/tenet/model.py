"""Complex dual-path transformer (CDPT) mask estimator.

Pipeline for a batch of waveforms ``x`` of shape (batch, L)::

    W   = encode(x)                          # (batch, 2F, K) stacked re/im STFT
    f   = front_end(W)                       # (batch, N, K)
    T   = segment(f, Q)                      # (batch, N, Q, S)
    T   = blocks(T)                          # B dual-path blocks
    M   = overlap_add_chunks(T, K)           # (batch, 2F, K) mask logits
    W^  = tanh(M) * W
    s^  = decode(W^)                         # (batch, L)
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import dsp
from .compute import multi_head_attention
from .errors import EvaluationError, InvalidArgumentError, ShapeError

FF_KINDS = ("recurrent", "standard")


@dataclass
class ModelConfig:
    dft_size: int = 512
    frame_len: int = 400
    hop: int = 100
    window: str = "hanning"
    feature_dim: int = 128
    chunk_len: int = 100
    num_blocks: int = 5
    num_heads: int = 8
    ff_hidden: int = 256
    conv_filters: int = 128
    conv_kernel: int = 3
    improved_ff: str = "recurrent"
    envelope_floor: float = 0.01

    def __post_init__(self):
        if self.chunk_len < 2 or self.chunk_len % 2:
            raise InvalidArgumentError(f"chunk_len must be even and >= 2, got {self.chunk_len}")
        if self.feature_dim % self.num_heads:
            raise InvalidArgumentError(
                f"feature_dim {self.feature_dim} not divisible by num_heads {self.num_heads}")
        if self.improved_ff not in FF_KINDS:
            raise InvalidArgumentError(f"improved_ff must be one of {FF_KINDS}")
        if self.conv_kernel % 2 == 0:
            raise InvalidArgumentError("conv_kernel must be odd for same-padding")
        if self.dft_size < self.frame_len:
            raise InvalidArgumentError("dft_size must be >= frame_len")
        dsp.check_overlap_add(self.window, self.frame_len, self.hop)

    @property
    def chunk_hop(self) -> int:
        return self.chunk_len // 2

    @property
    def num_bins(self) -> int:
        return self.dft_size // 2 + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgumentError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class STFTCodec(nn.Module):
    """Matrix STFT encoder and weighted overlap-add decoder.

    The window and DFT bases are fixed; they are kept in float64 and
    materialised at the dtype of each input, so a float64 model gets exact
    float64 bases rather than upcast float32 ones.
    """

    def __init__(self, dft_size=512, frame_len=400, hop=100, window="hanning",
                 envelope_floor=0.0):
        super().__init__()
        self.frame_len, self.hop, self.dft_size = frame_len, hop, dft_size
        self.envelope_floor = envelope_floor
        self._window_np = dsp.get_window(window, frame_len)
        self._analysis_np = dsp.analysis_basis(dft_size)[:, :frame_len]
        self._synthesis_np = dsp.synthesis_basis(dft_size)[:frame_len]
        self._cache: dict = {}

    def _consts(self, dtype):
        if dtype not in self._cache:
            self._cache[dtype] = tuple(torch.as_tensor(a, dtype=dtype) for a in
                                       (self._window_np, self._analysis_np, self._synthesis_np))
        return self._cache[dtype]

    def num_frames(self, length: int) -> int:
        return dsp.num_frames(length, self.frame_len, self.hop)

    def encode(self, x):
        window, analysis, _ = self._consts(x.dtype)
        length = x.shape[-1]
        count = self.num_frames(length)
        padded = F.pad(x, (0, (count - 1) * self.hop + self.frame_len - length))
        frames = padded.unfold(-1, self.frame_len, self.hop) * window  # (B, K, frame_len)
        return torch.matmul(analysis, frames.transpose(-1, -2))

    def decode(self, w, length: int):
        window, _, synthesis = self._consts(w.dtype)
        count = w.shape[-1]
        frames = torch.matmul(synthesis, w) * window[:, None]  # (B, frame_len, K)
        span = (count - 1) * self.hop + self.frame_len
        out = F.fold(frames, output_size=(1, span), kernel_size=(1, self.frame_len),
                     stride=(1, self.hop))
        env = dsp.floored_envelope(dsp.window_envelope(self._window_np, self.hop, count),
                                   self.envelope_floor)
        out = out.reshape(w.shape[0], span) / torch.as_tensor(env, dtype=w.dtype)
        return out[:, :length]


class FrontEnd(nn.Module):
    """Conv-2D over the (2F x K) spectrogram image, then a frequency-collapsing linear."""

    def __init__(self, num_rows, feature_dim, filters, kernel):
        super().__init__()
        self.conv = nn.Conv2d(1, filters, kernel, stride=1, padding=kernel // 2)
        self.proj = nn.Linear(filters * num_rows, feature_dim)
        self.num_rows = num_rows

    def forward(self, w):
        if w.dim() != 3 or w.shape[1] != self.num_rows:
            raise ShapeError(f"front_end: expected (batch, {self.num_rows}, K), got {tuple(w.shape)}")
        batch, _, frames = w.shape
        h = F.gelu(self.conv(w.unsqueeze(1)))  # (B, C, 2F, K)
        h = h.permute(0, 3, 1, 2).reshape(batch, frames, -1)
        return self.proj(h).transpose(1, 2)  # (B, N, K)


@dataclass
class ChunkTensor:
    data: torch.Tensor  # (batch, N, Q, S)
    pad_len: int


def num_chunks(frames: int, chunk_len: int) -> int:
    hop = chunk_len // 2
    return math.ceil(max(frames - chunk_len, 0) / hop) + 1


def segment(f, chunk_len: int) -> ChunkTensor:
    """Split (batch, N, K) features into half-overlapping chunks of length ``chunk_len``."""
    if chunk_len < 2 or chunk_len % 2:
        raise InvalidArgumentError(f"chunk length must be even and >= 2, got {chunk_len}")
    hop = chunk_len // 2
    frames = f.shape[-1]
    count = num_chunks(frames, chunk_len)
    pad_len = (count - 1) * hop + chunk_len - frames
    padded = F.pad(f, (0, pad_len))
    chunks = padded.unfold(-1, chunk_len, hop)  # (B, N, S, Q)
    return ChunkTensor(chunks.transpose(-1, -2), pad_len)


def overlap_add(t: ChunkTensor, out_len: int):
    """Inverse of :func:`segment`: average overlapping chunk columns, drop the padding."""
    data = t.data
    batch, dim, chunk_len, count = data.shape
    hop = chunk_len // 2
    span = (count - 1) * hop + chunk_len
    if span - t.pad_len != out_len:
        raise InvalidArgumentError(
            f"out_K={out_len} inconsistent with {count} chunks and pad_len={t.pad_len}")
    cols = data.reshape(batch, dim * chunk_len, count)
    summed = F.fold(cols, output_size=(1, span), kernel_size=(1, chunk_len), stride=(1, hop))
    summed = summed.reshape(batch, dim, span)
    overlap = np.zeros(span)
    for i in range(count):
        overlap[i * hop : i * hop + chunk_len] += 1.0
    summed = summed / torch.as_tensor(overlap, dtype=data.dtype)
    return summed[..., :out_len]


class ImprovedTransformer(nn.Module):
    """Post-norm self-attention layer whose feed-forward opens with a bidirectional GRU."""

    def __init__(self, dim, num_heads, ff_hidden, improved_ff="recurrent"):
        super().__init__()
        self.num_heads = num_heads
        self.in_weight = nn.Parameter(torch.empty(3 * dim, dim))
        self.in_bias = nn.Parameter(torch.zeros(3 * dim))
        self.out_weight = nn.Parameter(torch.empty(dim, dim))
        self.out_bias = nn.Parameter(torch.zeros(dim))
        nn.init.xavier_uniform_(self.in_weight)
        nn.init.xavier_uniform_(self.out_weight)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.improved_ff = improved_ff
        if improved_ff == "recurrent":
            self.rnn = nn.GRU(dim, ff_hidden, batch_first=True, bidirectional=True)
            self.ff_out = nn.Linear(2 * ff_hidden, dim)
        else:
            self.ff_in = nn.Linear(dim, ff_hidden)
            self.ff_out = nn.Linear(ff_hidden, dim)

    def forward(self, x):
        attn = multi_head_attention(x, self.in_weight, self.in_bias, self.out_weight,
                                    self.out_bias, self.num_heads)
        x = self.norm1(x + attn)
        if self.improved_ff == "recurrent":
            h = self.rnn(x)[0]
        else:
            h = self.ff_in(x)
        x = self.norm2(x + self.ff_out(F.gelu(h)))
        return x


class DualPathBlock(nn.Module):
    """Intra-chunk pass over Q, then inter-chunk pass over S, on (batch, N, Q, S)."""

    def __init__(self, dim, num_heads, ff_hidden, improved_ff="recurrent"):
        super().__init__()
        self.intra = ImprovedTransformer(dim, num_heads, ff_hidden, improved_ff)
        self.inter = ImprovedTransformer(dim, num_heads, ff_hidden, improved_ff)

    def intra_pass(self, t):
        batch, dim, chunk_len, count = t.shape
        seq = t.permute(0, 3, 2, 1).reshape(batch * count, chunk_len, dim)
        out = self.intra(seq).reshape(batch, count, chunk_len, dim)
        return out.permute(0, 3, 2, 1)

    def inter_pass(self, u):
        batch, dim, chunk_len, count = u.shape
        seq = u.permute(0, 2, 3, 1).reshape(batch * chunk_len, count, dim)
        out = self.inter(seq).reshape(batch, chunk_len, count, dim)
        return out.permute(0, 3, 1, 2)

    def forward(self, t):
        return self.inter_pass(self.intra_pass(t))


def apply_mask(mask_logits, w):
    if mask_logits.shape != w.shape:
        raise ShapeError(f"apply_mask: logits {tuple(mask_logits.shape)} vs spectrogram {tuple(w.shape)}")
    return torch.tanh(mask_logits) * w


class CDPT(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        rows = 2 * cfg.num_bins
        self.codec = STFTCodec(cfg.dft_size, cfg.frame_len, cfg.hop, cfg.window,
                               cfg.envelope_floor)
        self.front_end = FrontEnd(rows, cfg.feature_dim, cfg.conv_filters, cfg.conv_kernel)
        self.blocks = nn.ModuleList(
            DualPathBlock(cfg.feature_dim, cfg.num_heads, cfg.ff_hidden, cfg.improved_ff)
            for _ in range(cfg.num_blocks))
        self.out_proj = nn.Linear(cfg.feature_dim, rows)
        # start from a near-uniform positive mask; random signs would scramble phase
        nn.init.normal_(self.out_proj.weight, std=0.01)
        nn.init.constant_(self.out_proj.bias, 1.0)

    def encode(self, x):
        return self.codec.encode(x)

    def run_blocks(self, t: ChunkTensor) -> ChunkTensor:
        data = t.data
        for b, block in enumerate(self.blocks):
            data = block(data)
            if not torch.isfinite(data).all():
                raise EvaluationError(f"non-finite activation in dual-path block {b}")
        return ChunkTensor(data, t.pad_len)

    def overlap_add_chunks(self, t: ChunkTensor, out_len: int):
        feats = overlap_add(t, out_len)  # (B, N, K)
        return self.out_proj(feats.transpose(1, 2)).transpose(1, 2)  # (B, 2F, K)

    def mask_logits(self, w):
        frames = w.shape[-1]
        t = segment(self.front_end(w), self.cfg.chunk_len)
        return self.overlap_add_chunks(self.run_blocks(t), frames)

    def enhance_spectrogram(self, w):
        logits = self.mask_logits(w)
        return apply_mask(logits, w), logits

    def forward(self, x):
        """Enhance a batch of waveforms (batch, L) -> (batch, L)."""
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        w = self.encode(x)
        w_hat, _ = self.enhance_spectrogram(w)
        out = self.codec.decode(w_hat, x.shape[-1])
        return out.squeeze(0) if squeeze else out


def build_model(cfg: ModelConfig | None = None, seed: int = 0) -> CDPT:
    """Construct a CDPT with weights drawn from a private generator seeded by ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CDPT(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


@torch.no_grad()
def enhance_forward(x, model: CDPT) -> np.ndarray:
    """Single-stream inference on one waveform; output has the input's length."""
    samples = x.samples if isinstance(x, dsp.Waveform) else np.asarray(x, dtype=np.float64)
    dtype = next(model.parameters()).dtype
    out = model(torch.as_tensor(samples, dtype=dtype).unsqueeze(0))
    return out.squeeze(0).double().numpy()
