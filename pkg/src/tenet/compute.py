"""Differentiable-computation substrate.

Tensors, reverse-mode differentiation and the dense kernels come from torch's
dynamically recorded autograd tape.  This module adds what the rest of the
package needs on top of it: a catalogue of the operations the model is built
from (each with explicit shape checks), an independent central-difference
gradient checker, a named parameter store, an adaptive-moment optimizer with
global-norm clipping, and the ``TNT1`` checkpoint container.
"""

from __future__ import annotations

import json
import math
import os
import struct
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EvaluationError, FormatError, InvalidArgumentError, ShapeError

LOG_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"TNT1"


def configure_threads(threads: int = 1):
    """Pin the kernel thread count and request deterministic kernels."""
    torch.set_num_threads(int(threads))
    torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------------------
# operation catalogue


def _shape_error(op, msg):
    return ShapeError(f"{op}: {msg}")


def matmul(a, b):
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def bmm(a, b):
    if a.dim() < 3 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise _shape_error("bmm", f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return torch.matmul(a, b)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    if x.dim() != 4 or weight.dim() != 4 or x.shape[1] != weight.shape[1]:
        raise _shape_error(
            "conv2d", f"input {tuple(x.shape)} incompatible with kernel {tuple(weight.shape)}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def conv1d(x, weight, bias=None, stride=1, padding=0):
    if x.dim() != 3 or weight.dim() != 3 or x.shape[1] != weight.shape[1]:
        raise _shape_error(
            "conv1d", f"input {tuple(x.shape)} incompatible with kernel {tuple(weight.shape)}")
    if x.shape[-1] + 2 * padding < weight.shape[-1]:
        raise _shape_error(
            "conv1d", f"length {x.shape[-1]} shorter than kernel {weight.shape[-1]}")
    return F.conv1d(x, weight, bias, stride=stride, padding=padding)


def _broadcastable(op, a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise _shape_error(op, f"cannot broadcast {tuple(a.shape)} with {tuple(b.shape)}") from None


def add(a, b):
    _broadcastable("add", a, b)
    return a + b


def mul(a, b):
    _broadcastable("mul", a, b)
    return a * b


def tanh(x):
    return torch.tanh(x)


def softmax(x, dim=-1):
    return torch.softmax(x, dim=dim)


def layer_norm(x, weight, bias, eps=1e-5):
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise _shape_error(
            "layer_norm", f"affine {tuple(weight.shape)} does not match last axis of {tuple(x.shape)}")
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)


def multi_head_attention(x, in_weight, in_bias, out_weight, out_bias, num_heads):
    """Scaled dot-product self-attention over ``x`` of shape (batch, seq, dim)."""
    batch, seq, dim = x.shape
    if dim % num_heads:
        raise _shape_error("multi_head_attention", f"dim {dim} not divisible by {num_heads} heads")
    if in_weight.shape != (3 * dim, dim) or out_weight.shape != (dim, dim):
        raise _shape_error(
            "multi_head_attention",
            f"projections {tuple(in_weight.shape)}/{tuple(out_weight.shape)} do not fit dim {dim}")
    head_dim = dim // num_heads
    qkv = F.linear(x, in_weight, in_bias).view(batch, seq, 3, num_heads, head_dim)
    q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each (batch, heads, seq, head_dim)
    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(head_dim)
    ctx = torch.matmul(torch.softmax(scores, dim=-1), v)
    ctx = ctx.transpose(1, 2).reshape(batch, seq, dim)
    return F.linear(ctx, out_weight, out_bias)


_GRU_CACHE: dict = {}


def gru(x, weights: Mapping[str, torch.Tensor], hidden_size, bidirectional=True):
    """Gated recurrent layer over ``x`` of shape (batch, seq, features).

    ``weights`` uses torch's GRU parameter names (``weight_ih_l0`` and so on).
    """
    key = (x.shape[-1], hidden_size, bidirectional)
    if key not in _GRU_CACHE:
        _GRU_CACHE[key] = torch.nn.GRU(x.shape[-1], hidden_size, batch_first=True,
                                       bidirectional=bidirectional)
    skeleton = _GRU_CACHE[key]
    expected = dict(skeleton.named_parameters())
    for name, tensor in weights.items():
        if name not in expected or tensor.shape != expected[name].shape:
            raise _shape_error("gru", f"unexpected weight {name} {tuple(tensor.shape)}")
    out, _ = torch.func.functional_call(skeleton, dict(weights), (x,))
    return out


def reshape(x, shape):
    if math.prod(shape) != x.numel() and -1 not in shape:
        raise _shape_error("reshape", f"cannot view {tuple(x.shape)} as {tuple(shape)}")
    return x.reshape(shape)


def transpose(x, dim0, dim1):
    return x.transpose(dim0, dim1)


def slice_(x, dim, start, stop):
    if not 0 <= start <= stop <= x.shape[dim]:
        raise _shape_error("slice", f"[{start}:{stop}] out of range for extent {x.shape[dim]}")
    return x.narrow(dim, start, stop - start)


def concat(tensors, dim=0):
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other))
                                         if i != dim % len(ref)):
            raise _shape_error("concat", f"{tuple(ref)} and {tuple(other)} differ off axis {dim}")
    return torch.cat(list(tensors), dim=dim)


def mean(x, dim=None):
    return x.mean() if dim is None else x.mean(dim=dim)


def l1_distance(a, b):
    """Mean absolute difference."""
    if a.shape != b.shape:
        raise _shape_error("l1_distance", f"{tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def log10(x, floor=LOG_FLOOR):
    """log10 of a positive quantity, floored at ``floor``."""
    return torch.log10(torch.clamp(x, min=floor))


OPS: dict[str, Callable] = {
    "matmul": matmul,
    "bmm": bmm,
    "conv2d": conv2d,
    "conv1d": conv1d,
    "add": add,
    "mul": mul,
    "tanh": tanh,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "multi_head_attention": multi_head_attention,
    "gru": gru,
    "reshape": reshape,
    "transpose": transpose,
    "slice": slice_,
    "concat": concat,
    "mean": mean,
    "l1_distance": l1_distance,
    "log10": log10,
}


def op_set() -> dict[str, Callable]:
    return dict(OPS)


# ---------------------------------------------------------------------------
# parameters


class ParamStore(Mapping):
    """Named parameters in lexicographic order.

    Wraps an ``nn.Module`` (or a plain mapping) without copying, so every
    consumer of the store reads and writes the very same tensors.
    """

    def __init__(self, params):
        if isinstance(params, torch.nn.Module):
            params = dict(params.named_parameters())
        self._params = {name: params[name] for name in sorted(params)}

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    @property
    def num_elements(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def trainable(self) -> "ParamStore":
        return ParamStore({k: v for k, v in self._params.items() if v.requires_grad})


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    checked: int
    max_error: float
    tol: float
    worst: list = field(default_factory=list)  # (name, flat_index, analytic, numeric, error)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def _pick_elements(params, num_samples, rng):
    sizes = {name: p.numel() for name, p in params.items()}
    total = sum(sizes.values())
    if num_samples is None or num_samples >= total:
        return [(name, i) for name, n in sizes.items() for i in range(n)]
    # one element from every tensor, the rest uniformly over all elements
    picks = {(name, int(rng.integers(n))) for name, n in sizes.items()}
    names = list(sizes)
    offsets = np.cumsum([0] + [sizes[n] for n in names])
    while len(picks) < max(num_samples, len(names)):
        flat = int(rng.integers(total))
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.add((names[j], flat - int(offsets[j])))
    return sorted(picks)


def grad_check(f: Callable[[], torch.Tensor], params, eps: float = 1e-4, tol: float = 1e-4,
               num_samples: int | None = None, max_full: int = 10_000, seed: int = 0,
               report_worst: int = 5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``params`` maps names to leaf tensors that ``f`` reads.  Every element is
    checked when there are at most ``max_full`` of them; otherwise a random
    subsample of ``num_samples`` (default 1000) elements.  The error measure is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  Run in float64:
    float32 rounding swamps a 1e-4 tolerance.
    """
    params = ParamStore(params)
    loss = f()
    if not torch.isfinite(loss):
        raise EvaluationError(f"loss is not finite at the evaluation point: {loss.item()}")
    analytic = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    analytic = {name: (g if g is not None else torch.zeros_like(p))
                for (name, p), g in zip(params.items(), analytic)}

    total = params.num_elements
    if total > max_full and num_samples is None:
        num_samples = 1000
    picks = _pick_elements(params, num_samples, np.random.default_rng(seed))

    rows = []
    with torch.no_grad():
        for name, idx in picks:
            flat = params[name].view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + eps
            plus = f().item()
            flat[idx] = orig - eps
            minus = f().item()
            flat[idx] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise EvaluationError(f"non-finite loss while perturbing {name}[{idx}]")
            numeric = (plus - minus) / (2 * eps)
            a = analytic[name].reshape(-1)[idx].item()
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            rows.append((name, idx, a, numeric, err))
    rows.sort(key=lambda r: -r[4])
    max_error = rows[0][4] if rows else 0.0
    return GradCheckReport(len(rows), max_error, tol, rows[:report_worst])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def clip_by_global_norm(grads: Mapping[str, torch.Tensor], threshold: float):
    norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if threshold and norm > threshold:
        scale = threshold / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


@torch.no_grad()
def optimizer_step(params, grads: Mapping[str, torch.Tensor], state: OptimState) -> float:
    """One bias-corrected adaptive-moment update, in place.  Returns the pre-clip norm."""
    params = ParamStore(params)
    for name, g in grads.items():
        if name not in params:
            raise InvalidArgumentError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ShapeError(f"optimizer_step: gradient {name} {tuple(g.shape)} "
                             f"vs parameter {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            raise EvaluationError(f"non-finite gradient for parameter {name}")
    grads, norm = clip_by_global_norm(grads, state.clip)
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name in sorted(grads):
        p, g = params[name], grads[name]
        m = state.first.setdefault(name, torch.zeros_like(p))
        v = state.second.setdefault(name, torch.zeros_like(p))
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m / bc1, denom, value=-state.lr)
    return norm


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: b"TNT1" | u64 little-endian header length | UTF-8 JSON header |
#         float32 little-endian parameter data in manifest order


def save_checkpoint(path, params: Mapping[str, torch.Tensor], header: dict | None = None):
    header = dict(header or {})
    manifest, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].detach().cpu().numpy(), dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header["manifest"] = manifest
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (size,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12 : 12 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    data = raw[12 + size :]
    params = {}
    for entry in header["manifest"]:
        count = math.prod(entry["shape"])
        start = entry["offset"]
        if start + 4 * count > len(data):
            raise FormatError(f"{path}: parameter {entry['name']} runs past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        params[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, params
