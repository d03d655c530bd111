"""Autoregressive generation and the user-facing conversion entry point.

Two engines produce mu-law samples from a conditioning signal:

* `generate_naive` re-runs the full decoder on the whole generated prefix
  for every output sample - the O(T^2) reference implementation.
* `generate_incremental` advances one decoder step per sample through
  per-layer ring buffers (a compiled kernel when built, numpy otherwise)
  and must agree with the naive engine given the same uniform draw stream.

Both engines share one sampling rule: inverse CDF over softmax(logits /
temperature) against a seeded uniform stream, so their outputs are
directly comparable.
"""

from __future__ import annotations

import copy
import os

import numpy as np
import torch

from . import _stepgen_py, audio, model as modeling
from ._stepgen_py import GenerationState, sample_index  # noqa: F401  (re-exported)

try:
    from . import _stepgen as _compiled
except ImportError:  # pragma: no cover - build-environment dependent
    _compiled = None

HAVE_COMPILED = _compiled is not None
if os.environ.get("SINGVC_PURE_PYTHON"):
    DEFAULT_BACKEND = "python"
else:
    DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "python"


def _kernel(backend: str | None):
    name = backend or DEFAULT_BACKEND
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled generation kernel is not built; use backend='python'")
        return _compiled.generate
    if name == "python":
        return _stepgen_py.generate
    raise ValueError(f"unknown backend {name!r}, expected 'compiled' or 'python'")


class DecoderKernelWeights:
    """Decoder parameters flattened to contiguous arrays for the step kernel."""

    def __init__(self, decoder: modeling.Decoder, dtype=np.float32):
        spec = decoder.spec
        self.dtype = np.dtype(dtype)
        self.kernel_size = spec.kernel_size
        self.quant_levels = spec.quant_levels

        def arr(t):
            return t.detach().cpu().numpy().astype(self.dtype)

        self.embed = arr(decoder.embed.weight)
        layers = list(decoder.layers)
        # torch conv weight (C_out, C_in, K): kernel position K-1 is the current
        # sample under causal left padding, position j hits x[t - (K-1-j)*d]
        self.taps = np.ascontiguousarray(
            np.stack([arr(l.conv.weight).transpose(2, 0, 1) for l in layers])
        )
        self.conv_b = np.stack([arr(l.conv.bias) for l in layers])
        self.res_w = np.stack([arr(l.res_proj.weight)[:, :, 0] for l in layers])
        self.res_b = np.stack([arr(l.res_proj.bias) for l in layers])
        self.skip_w = np.stack([arr(l.skip_proj.weight)[:, :, 0] for l in layers])
        self.skip_b = np.stack([arr(l.skip_proj.bias) for l in layers])
        self.cond_w = np.stack([arr(l.cond_proj.weight)[:, :, 0] for l in layers])
        self.cond_bias = np.stack([arr(l.cond_proj.bias) for l in layers])
        self.dilations = np.asarray([l.dilation for l in layers], dtype=np.int64)

        self.cond_head_w = arr(decoder.cond_head.weight)[:, :, 0]
        self.cond_head_b = arr(decoder.cond_head.bias)
        self.head1_w = arr(decoder.head1.weight)[:, :, 0]
        self.head1_b = arr(decoder.head1.bias)
        self.head2_w = arr(decoder.head2.weight)[:, :, 0]
        self.head2_b = arr(decoder.head2.bias)

    def project_conditioning(self, cond: np.ndarray):
        """Per-layer and head conditioning contributions for all time steps."""
        cond = np.ascontiguousarray(cond, dtype=self.dtype)
        per_layer = np.einsum("lij,jt->lit", self.cond_w, cond) + self.cond_bias[:, :, None]
        head = self.cond_head_w @ cond + self.cond_head_b[:, None]
        return np.ascontiguousarray(per_layer), np.ascontiguousarray(head)


def _as_cond_array(cond, dtype) -> np.ndarray:
    if isinstance(cond, torch.Tensor):
        cond = cond.detach().cpu().numpy()
    cond = np.asarray(cond, dtype=dtype)
    if cond.ndim != 2:
        raise ValueError(f"conditioning must be (channels, T), got shape {cond.shape}")
    return cond


def uniform_stream(rng_seed: int, n: int) -> np.ndarray:
    """The shared per-step uniform draws both engines consume."""
    return np.random.Generator(np.random.PCG64(rng_seed)).random(n)


def generate_incremental(
    cond,
    decoder: modeling.Decoder,
    rng_seed: int = 0,
    temperature: float = 1.0,
    dtype=np.float32,
    weights: DecoderKernelWeights | None = None,
    return_logits: bool = False,
    backend: str | None = None,
):
    """Generate T mu-law indices with one cached decoder step per sample."""
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if weights is None:
        weights = DecoderKernelWeights(decoder, dtype=dtype)
    cond = _as_cond_array(cond, weights.dtype)
    T = cond.shape[1]
    cond_layer, cond_head = weights.project_conditioning(cond)
    uniforms = uniform_stream(rng_seed, T)
    out_indices = np.zeros(T, dtype=np.int64)
    out_logits = np.zeros((T if return_logits else 0, weights.quant_levels if return_logits else 0), dtype=weights.dtype)
    _kernel(backend)(
        weights.embed,
        weights.taps,
        weights.conv_b,
        weights.res_w,
        weights.res_b,
        weights.skip_w,
        weights.skip_b,
        cond_layer,
        cond_head,
        weights.head1_w,
        weights.head1_b,
        weights.head2_w,
        weights.head2_b,
        weights.dilations,
        weights.kernel_size,
        uniforms,
        float(temperature),
        modeling.START_INDEX,
        out_indices,
        out_logits,
    )
    if return_logits:
        return out_indices, out_logits
    return out_indices


def generate_naive(
    cond,
    decoder: modeling.Decoder,
    rng_seed: int = 0,
    temperature: float = 1.0,
    dtype=torch.float32,
    return_logits: bool = False,
    max_steps: int | None = None,
):
    """Reference generator: reruns the decoder on the full prefix per sample.

    O(T^2 * depth); exists as the oracle the incremental engine is checked
    against.  `max_steps` truncates generation (used by benchmarks, since
    full-length naive runs are quadratically expensive).
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    cond_t = torch.as_tensor(np.asarray(_as_cond_array(cond, np.float64)), dtype=dtype)
    T = cond_t.shape[1] if max_steps is None else min(int(max_steps), cond_t.shape[1])
    if next(decoder.parameters()).dtype != dtype:
        dec = copy.deepcopy(decoder).to(dtype)
    else:
        dec = decoder
    uniforms = uniform_stream(rng_seed, cond_t.shape[1])
    out = np.zeros(T, dtype=np.int64)
    logits_rows = []
    with torch.no_grad():
        for t in range(T):
            inputs = torch.full((1, t + 1), modeling.START_INDEX, dtype=torch.long)
            if t > 0:
                inputs[0, 1:] = torch.from_numpy(out[:t])
            logits = dec(inputs, cond_t[:, : t + 1].unsqueeze(0))[0, :, t]
            row = logits.numpy().copy()
            if return_logits:
                logits_rows.append(row)
            out[t] = sample_index(row, float(uniforms[t]), temperature)
    if return_logits:
        return out, np.stack(logits_rows)
    return out


def convert(
    clip: audio.AudioClip,
    target_singer_id: str,
    model: modeling.SvcModel,
    temperature: float = 1.0,
    rng_seed: int = 0,
    backend: str | None = None,
) -> audio.AudioClip:
    """Convert a clip to the target singer's voice; output length equals input length.

    The clip is zero-padded up to the encoder's pooling grid, companded to
    8-bit resolution, encoded, decoded autoregressively under the target
    embedding, and trimmed back.
    """
    period = model.encoder_spec.pool_kernel
    if len(clip) < period:
        raise ValueError(f"clip too short: {len(clip)} samples, need at least {period}")
    target = model.singer_index(target_singer_id)

    n = len(clip)
    padded_len = ((n + period - 1) // period) * period
    samples = np.zeros(padded_len, dtype=np.float64)
    samples[:n] = clip.samples
    companded = audio.quantized(samples)

    latent = modeling.encode(companded, model.encoder)
    v = model.table.vector(target).detach()
    cond = modeling.build_conditioning(latent, v, period)
    indices = generate_incremental(
        cond, model.decoder, rng_seed=rng_seed, temperature=temperature, backend=backend
    )
    out = audio.decode_samples(indices)[:n]
    return audio.AudioClip(out, clip.sample_rate)
