"""The conversion networks: content encoder, conditional WaveNet decoder,
singer-confusion classifier, and the singer embedding table.

One encoder serves all singers (it never sees a singer id); the decoder is
an autoregressive mu-law model conditioned, at every time step, on the
latent frame concatenated with the target singer's embedding.  The
confusion network tries to identify the singer from the latent alone and
is what the encoder is trained to defeat.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn as tnn

from . import nn as ops

START_INDEX = 128  # autoregressive start value: companded zero


@dataclass(frozen=True)
class EncoderSpec:
    blocks: int = 3
    layers_per_block: int = 10
    channels: int = 128
    latent_dim: int = 64
    pool_kernel: int = 800
    pool_stride: int = 800
    kernel_size: int = 3

    def dilations(self):
        return [2**i for _ in range(self.blocks) for i in range(self.layers_per_block)]


@dataclass(frozen=True)
class DecoderSpec:
    blocks: int = 4
    layers_per_block: int = 10
    kernel_size: int = 2
    residual_channels: int = 128
    skip_channels: int = 128
    quant_levels: int = 256
    conditioning_dim: int = 128

    def dilations(self):
        return [2**i for _ in range(self.blocks) for i in range(self.layers_per_block)]


@dataclass(frozen=True)
class ConfusionSpec:
    channels: tuple[int, int, int] = (128, 128, 128)
    kernel_size: int = 3


def receptive_field(spec: DecoderSpec) -> int:
    """Number of past-and-present samples that can influence one decoder output."""
    return spec.blocks * (spec.kernel_size - 1) * (2**spec.layers_per_block - 1) + 1


class EncoderLayer(tnn.Module):
    """Residual layer: ReLU, non-causal dilated conv, ReLU, 1x1, residual sum."""

    def __init__(self, channels, kernel_size, dilation):
        super().__init__()
        self.dilation = dilation
        self.conv = tnn.Conv1d(channels, channels, kernel_size, dilation=dilation)
        self.proj = tnn.Conv1d(channels, channels, 1)

    def forward(self, x):
        h = ops.conv1d(torch.relu(x), self.conv.weight, self.conv.bias, dilation=self.dilation, causal=False)
        h = self.proj(torch.relu(h))
        return x + h


class Encoder(tnn.Module):
    """Fully convolutional, singer-blind content encoder.

    Produces one `latent_dim` frame per `pool_kernel` input samples from the
    real-valued companded signal.
    """

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        self.input_proj = tnn.Conv1d(1, spec.channels, 1)
        self.layers = tnn.ModuleList(
            EncoderLayer(spec.channels, spec.kernel_size, d) for d in spec.dilations()
        )
        self.output_proj = tnn.Conv1d(spec.channels, spec.latent_dim, 1)

    def forward(self, x):
        # x: (B, 1, T) with T a multiple of pool_kernel
        h = self.input_proj(x)
        for layer in self.layers:
            h = layer(h)
        h = self.output_proj(h)
        return ops.avg_pool(h, self.spec.pool_kernel, self.spec.pool_stride)


class DecoderLayer(tnn.Module):
    """WaveNet residual layer: causal dilated conv plus a per-layer 1x1 of the
    conditioning added pre-activation, gated tanh, then 1x1 residual and skip."""

    def __init__(self, residual_channels, skip_channels, conditioning_dim, kernel_size, dilation):
        super().__init__()
        self.dilation = dilation
        self.conv = tnn.Conv1d(residual_channels, 2 * residual_channels, kernel_size, dilation=dilation)
        self.cond_proj = tnn.Conv1d(conditioning_dim, 2 * residual_channels, 1)
        self.res_proj = tnn.Conv1d(residual_channels, residual_channels, 1)
        self.skip_proj = tnn.Conv1d(residual_channels, skip_channels, 1)

    def forward(self, x, cond):
        z = ops.conv1d(x, self.conv.weight, self.conv.bias, dilation=self.dilation, causal=True)
        z = z + self.cond_proj(cond)
        a, b = torch.chunk(z, 2, dim=-2)
        g = ops.gated_unit(a, b)
        return x + self.res_proj(g), self.skip_proj(g)


class Decoder(tnn.Module):
    """Autoregressive mu-law decoder over 256 classes, conditioned per time step."""

    def __init__(self, spec: DecoderSpec):
        super().__init__()
        self.spec = spec
        self.embed = tnn.Embedding(spec.quant_levels, spec.residual_channels)
        self.layers = tnn.ModuleList(
            DecoderLayer(
                spec.residual_channels,
                spec.skip_channels,
                spec.conditioning_dim,
                spec.kernel_size,
                d,
            )
            for d in spec.dilations()
        )
        self.cond_head = tnn.Conv1d(spec.conditioning_dim, spec.skip_channels, 1)
        self.head1 = tnn.Conv1d(spec.skip_channels, spec.skip_channels, 1)
        self.head2 = tnn.Conv1d(spec.skip_channels, spec.quant_levels, 1)

    def forward(self, inputs, cond):
        # inputs: (B, T) long indices already shifted (position 0 is the start value)
        x = self.embed(inputs).transpose(1, 2)
        skips = None
        for layer in self.layers:
            x, skip = layer(x, cond)
            skips = skip if skips is None else skips + skip
        h = torch.relu(skips + self.cond_head(cond))
        h = torch.relu(self.head1(h))
        return self.head2(h)


class ConfusionNet(tnn.Module):
    """Classifies the singer from latent frames: three 1-D conv layers with ELU,
    a projection to k logits per frame, then temporal averaging."""

    def __init__(self, latent_dim: int, k: int, spec: ConfusionSpec):
        super().__init__()
        self.spec = spec
        widths = [latent_dim, *spec.channels]
        self.convs = tnn.ModuleList(
            tnn.Conv1d(widths[i], widths[i + 1], spec.kernel_size) for i in range(3)
        )
        self.proj = tnn.Conv1d(widths[-1], k, 1)

    def forward(self, latent):
        h = latent
        for conv in self.convs:
            h = ops.elu(ops.conv1d(h, conv.weight, conv.bias, causal=False))
        return self.proj(h).mean(dim=-1)


class EmbeddingTable(tnn.Module):
    """k learnable singer vectors, kept inside the unit ball after every step."""

    def __init__(self, k: int, dim: int = 64):
        super().__init__()
        self.vectors = tnn.Parameter(torch.empty(k, dim))
        tnn.init.uniform_(self.vectors, -0.1, 0.1)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    def vector(self, index: int) -> torch.Tensor:
        return self.vectors[index]

    def max_norm(self) -> float:
        return self.vectors.detach().norm(dim=1).max().item()


def project_embeddings(table: EmbeddingTable) -> EmbeddingTable:
    """Rescale any embedding with L2 norm > 1 back to norm exactly 1."""
    with torch.no_grad():
        norms = table.vectors.norm(dim=1, keepdim=True)
        table.vectors.mul_(torch.where(norms > 1.0, 1.0 / norms, torch.ones_like(norms)))
    return table


class SvcModel(tnn.Module):
    """Bundle of the three networks, the embedding table and dataset identity."""

    def __init__(self, encoder_spec, decoder_spec, confusion_spec, singer_ids, sample_rate):
        super().__init__()
        if decoder_spec.conditioning_dim != encoder_spec.latent_dim + _embedding_dim(encoder_spec):
            raise ValueError(
                f"conditioning_dim {decoder_spec.conditioning_dim} must equal latent_dim "
                f"{encoder_spec.latent_dim} plus embedding dim {_embedding_dim(encoder_spec)}"
            )
        self.encoder_spec = encoder_spec
        self.decoder_spec = decoder_spec
        self.confusion_spec = confusion_spec
        self.singer_ids = tuple(singer_ids)
        self.sample_rate = sample_rate
        self.encoder = Encoder(encoder_spec)
        self.decoder = Decoder(decoder_spec)
        self.confusion = ConfusionNet(encoder_spec.latent_dim, len(self.singer_ids), confusion_spec)
        self.table = EmbeddingTable(len(self.singer_ids), _embedding_dim(encoder_spec))

    @property
    def k(self) -> int:
        return len(self.singer_ids)

    def singer_index(self, singer_id: str) -> int:
        try:
            return self.singer_ids.index(singer_id)
        except ValueError:
            raise KeyError(
                f"unknown singer id {singer_id!r}; known ids: {', '.join(self.singer_ids)}"
            ) from None


def _embedding_dim(encoder_spec: EncoderSpec) -> int:
    # Embeddings share the latent dimensionality; conditioning concatenates both.
    return encoder_spec.latent_dim


def build_model(encoder_spec, decoder_spec, confusion_spec, singer_ids, sample_rate, seed=0) -> SvcModel:
    """Construct a model with deterministic, seed-controlled initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SvcModel(encoder_spec, decoder_spec, confusion_spec, singer_ids, sample_rate)
    return model


def encode(companded, encoder: Encoder) -> torch.Tensor:
    """Latent frames (latent_dim x T/pool) of a companded signal of length T.

    T must be a positive multiple of the pooling period; callers pad.
    """
    x = torch.as_tensor(np.asarray(companded), dtype=next(encoder.parameters()).dtype)
    if x.dim() != 1:
        raise ValueError(f"encode expects a 1-D signal, got shape {tuple(x.shape)}")
    period = encoder.spec.pool_kernel
    if len(x) == 0 or len(x) % period != 0:
        raise ValueError(f"encode input length {len(x)} is not a positive multiple of {period}")
    with torch.no_grad():
        return encoder(x.reshape(1, 1, -1)).squeeze(0)


def build_conditioning(latent: torch.Tensor, v: torch.Tensor, upsample_factor: int) -> torch.Tensor:
    """Concatenate each latent frame with the singer vector and repeat to audio rate."""
    n = latent.shape[-1]
    stacked = torch.cat([latent, v.reshape(-1, 1).expand(-1, n)], dim=0)
    return ops.upsample_repeat(stacked, upsample_factor)


def shifted_inputs(target_indices: torch.Tensor) -> torch.Tensor:
    """Teacher-forcing inputs: targets shifted right by one, start value first."""
    start = torch.full_like(target_indices[..., :1], START_INDEX)
    return torch.cat([start, target_indices[..., :-1]], dim=-1)


def decoder_logits(prev_samples, cond: torch.Tensor, decoder: Decoder) -> torch.Tensor:
    """Per-step logits (quant_levels x T): logits at t predict sample t from samples < t.

    `prev_samples` is the index sequence being predicted (a MuLawClip or a
    long tensor); it is shifted internally so position 0 is fed the
    constant start value.
    """
    indices = prev_samples.indices if hasattr(prev_samples, "indices") else prev_samples
    idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
    if idx.shape[-1] != cond.shape[-1]:
        raise ValueError(
            f"decoder_logits: {idx.shape[-1]} samples vs conditioning of length {cond.shape[-1]}"
        )
    with torch.no_grad():
        return decoder(shifted_inputs(idx).unsqueeze(0), cond.unsqueeze(0)).squeeze(0)


def classify_singer(latent: torch.Tensor, confusion: ConfusionNet) -> torch.Tensor:
    """Confusion-network logits (one per singer) for a latent sequence."""
    with torch.no_grad():
        return confusion(latent.unsqueeze(0)).squeeze(0)


# --- checkpoints --------------------------------------------------------------
#
# A checkpoint is a pair of files sharing one stem: `<stem>.svc1` (the flat
# parameter container) and `<stem>.meta` (plain-text key = value metadata:
# specs, singer ids, sample rate, training phase and epoch).

CHECKPOINT_FORMAT = 1


def save_checkpoint(model: SvcModel, stem, phase: int, epoch: int) -> Path:
    from . import nn as nnmod

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    nnmod.save_tensors(stem.with_suffix(".svc1"), tensors)

    meta = {
        "format": CHECKPOINT_FORMAT,
        "phase": phase,
        "epoch": epoch,
        "k": model.k,
        "singer_ids": json.dumps(list(model.singer_ids)),
        "sample_rate": model.sample_rate,
    }
    for prefix, spec in (
        ("encoder", model.encoder_spec),
        ("decoder", model.decoder_spec),
        ("confusion", model.confusion_spec),
    ):
        for key, value in asdict(spec).items():
            meta[f"{prefix}.{key}"] = json.dumps(value) if isinstance(value, (list, tuple)) else value
    lines = [f"{key} = {value}" for key, value in meta.items()]
    stem.with_suffix(".meta").write_text("\n".join(lines) + "\n")
    return stem


class CheckpointError(Exception):
    pass


def _parse_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed metadata line {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def load_checkpoint(stem) -> tuple[SvcModel, dict]:
    """Rebuild a model from `<stem>.svc1` + `<stem>.meta`; returns (model, metadata)."""
    from . import nn as nnmod

    stem = Path(stem)
    if stem.suffix in (".svc1", ".meta"):
        stem = stem.with_suffix("")
    meta_path = stem.with_suffix(".meta")
    params_path = stem.with_suffix(".svc1")
    if not meta_path.exists() or not params_path.exists():
        raise CheckpointError(f"checkpoint {stem} is missing {meta_path.name} or {params_path.name}")
    meta = _parse_meta(meta_path)
    if int(meta.get("format", -1)) != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{meta_path}: unsupported checkpoint format {meta.get('format')}")

    def spec_args(prefix, cls):
        out = {}
        for field in cls.__dataclass_fields__:
            raw = meta[f"{prefix}.{field}"]
            if raw.startswith("["):
                out[field] = tuple(json.loads(raw))
            else:
                out[field] = int(raw)
        return cls(**out)

    encoder_spec = spec_args("encoder", EncoderSpec)
    decoder_spec = spec_args("decoder", DecoderSpec)
    confusion_spec = spec_args("confusion", ConfusionSpec)
    singer_ids = json.loads(meta["singer_ids"])
    model = SvcModel(encoder_spec, decoder_spec, confusion_spec, singer_ids, int(meta["sample_rate"]))

    tensors = nnmod.load_tensors(params_path)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    model.load_state_dict(state, strict=True)
    info = {"phase": int(meta["phase"]), "epoch": int(meta["epoch"]), "stem": stem}
    return model, info
