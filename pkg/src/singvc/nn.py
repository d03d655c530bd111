"""Differentiable primitives the networks are built from, plus the gradient harness.

The ops are thin functional wrappers over torch (the autodiff engine behind
this contract); each one is verified against central finite differences by
:func:`grad_check`.  Tensors are float32 during training and float64 in
gradient tests.  This module also owns the `SVC1` flat binary container
used to serialize named parameter tensors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F


class ShapeError(ValueError):
    """Operands with incompatible shapes, reported with the offending op's name."""


def conv1d(x, weight, bias=None, dilation=1, causal=True):
    """1-D convolution over (..., C_in, T) with zero padding keeping T fixed.

    Causal mode pads (kernel_size-1)*dilation zeros on the left only, so
    output t sees inputs <= t.  Non-causal mode pads symmetrically (left
    gets the extra sample for even kernels).  `weight` is (C_out, C_in, K).
    """
    if dilation < 1:
        raise ValueError(f"conv1d: dilation must be >= 1, got {dilation}")
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[-2] != weight.shape[1]:
        raise ShapeError(f"conv1d: input has {x.shape[-2]} channels, weight expects {weight.shape[1]}")
    pad_total = (weight.shape[-1] - 1) * dilation
    if causal:
        pad = (pad_total, 0)
    else:
        pad = (pad_total - pad_total // 2, pad_total // 2)
    out = F.conv1d(F.pad(x, pad), weight, bias=bias, dilation=dilation)
    return out.squeeze(0) if squeeze else out


def gated_unit(a, b):
    """Gated tanh activation: tanh(a) * sigmoid(b), elementwise."""
    if a.shape != b.shape:
        raise ShapeError(f"gated_unit: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.tanh(a) * torch.sigmoid(b)


def relu(x):
    return torch.relu(x)


def elu(x):
    """x for x > 0, exp(x) - 1 otherwise."""
    return F.elu(x)


def avg_pool(x, kernel, stride):
    """Window means over the trailing time axis of (..., C, T)."""
    if x.shape[-1] < kernel:
        raise ShapeError(f"avg_pool: time length {x.shape[-1]} shorter than kernel {kernel}")
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    out = F.avg_pool1d(x, kernel_size=kernel, stride=stride)
    return out.squeeze(0) if squeeze else out


def upsample_repeat(x, factor: int):
    """Repeat each time step `factor` times along the trailing axis."""
    if factor < 1:
        raise ValueError(f"upsample_repeat: factor must be >= 1, got {factor}")
    return torch.repeat_interleave(x, factor, dim=-1)


def softmax_cross_entropy(logits, targets):
    """Mean over time of -log softmax(logits)[target_t].

    `logits` is (Q, T) or (B, Q, T); `targets` is (T,) or (B, T) of class
    indices in [0, Q).
    """
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
        targets = targets.unsqueeze(0)
    q = logits.shape[1]
    if targets.shape != (logits.shape[0], logits.shape[2]):
        raise ShapeError(
            f"softmax_cross_entropy: targets shape {tuple(targets.shape)} does not match logits {tuple(logits.shape)}"
        )
    if targets.numel() and (targets.min() < 0 or targets.max() >= q):
        raise ValueError(f"softmax_cross_entropy: target index out of range [0, {q})")
    flat = logits.permute(0, 2, 1).reshape(-1, q)
    return F.cross_entropy(flat, targets.reshape(-1))


def grad_check(op, input_point, eps=1e-3):
    """Max relative error between analytic gradients and central finite differences.

    `op` maps one tensor (or a tuple of tensors) to a tensor; gradients are
    taken of a fixed random linear functional of the output, with respect to
    every input.  Inputs are evaluated in float64.  The relative error is
    ||g_analytic - g_fd||_inf normalized by the largest gradient magnitude.
    """
    if isinstance(input_point, torch.Tensor):
        input_point = (input_point,)
    leaves = [t.detach().to(torch.float64).clone().requires_grad_(True) for t in input_point]
    out = op(*leaves)
    probe_gen = torch.Generator().manual_seed(12345)
    probe = torch.randn(out.shape, generator=probe_gen, dtype=torch.float64)

    scalar = (out * probe).sum()
    analytic = torch.autograd.grad(scalar, leaves, allow_unused=False)

    detached = [t.detach().clone() for t in leaves]

    def objective():
        with torch.no_grad():
            return (op(*detached) * probe).sum().item()

    worst = 0.0
    for k, grad in enumerate(analytic):
        flat = detached[k].reshape(-1)
        fd = torch.zeros_like(grad).reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = objective()
            flat[i] = orig - eps
            lo = objective()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * eps)
        fd = fd.reshape(grad.shape)
        diff = (grad - fd).abs().max().item()
        scale = max(grad.abs().max().item(), fd.abs().max().item(), 1e-12)
        worst = max(worst, diff / scale)
    return worst


# --- SVC1 parameter container ------------------------------------------------
#
# Layout (all little-endian): magic "SVC1", u32 version, u32 tensor count,
# then per tensor: u16 name length, utf-8 name, u8 dtype code (0 = float32),
# u8 ndim, ndim * u64 extents, raw values.

_MAGIC = b"SVC1"
_VERSION = 1
_DTYPE_F32 = 0


class ContainerError(Exception):
    """SVC1 container missing, corrupt, or of an unknown version."""


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors to an SVC1 container."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read an SVC1 container back into a name -> float32 array mapping."""
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"no such parameter container: {path}")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise ContainerError(f"{path}: bad magic, not an SVC1 container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            dtype_code, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            if dtype_code != _DTYPE_F32:
                raise ContainerError(f"{path}: unknown dtype code {dtype_code} for tensor {name!r}")
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
            data = np.frombuffer(blob, dtype="<f4", count=n_bytes // 4, offset=offset)
            offset += n_bytes
            tensors[name] = data.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise ContainerError(f"{path}: truncated or corrupt container ({exc})") from exc
    return tensors
