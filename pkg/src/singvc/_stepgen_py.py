"""Pure-numpy generation loop, arithmetic twin of the compiled kernel.

Selected at import time by `singvc.inference` when the extension is not
built (or when SINGVC_PURE_PYTHON=1).  Slower, but draws the same samples
for the same uniform stream up to floating-point accumulation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sample_index(logits: np.ndarray, u: float, temperature: float) -> int:
    """Inverse-CDF draw from softmax(logits / temperature); temperature 0 is argmax."""
    scores = np.asarray(logits, dtype=np.float64)
    if temperature == 0.0:
        return int(np.argmax(scores))
    scores = scores / temperature
    e = np.exp(scores - scores.max())
    p = e / e.sum()
    cum = np.cumsum(p)
    return int(min(np.searchsorted(cum, u, side="right"), scores.size - 1))


@dataclass
class GenerationState:
    """Mutable state of one incremental generation.

    One ring buffer per decoder layer holds that layer's past inputs; the
    buffer for a layer with dilation d spans (kernel_size-1)*d steps, which
    is exactly the history its causal convolution can still see.
    """

    buffers: list[np.ndarray]
    dilations: np.ndarray
    kernel_size: int
    draws: np.ndarray
    time_index: int = 0
    _sizes: list[int] = field(init=False)

    def __post_init__(self):
        self._sizes = [(self.kernel_size - 1) * int(d) for d in self.dilations]
        for buf, size in zip(self.buffers, self._sizes):
            if buf.shape[0] != max(size, 1):
                raise ValueError(
                    f"ring buffer spans {buf.shape[0]} steps, layer needs {max(size, 1)}"
                )

    def past_input(self, layer: int, tap: int) -> np.ndarray:
        """Layer input from `tap` conv positions back (tap 0 is the oldest)."""
        size = self._sizes[layer]
        pos = self.time_index - int(self.dilations[layer]) * (self.kernel_size - 1 - tap)
        return self.buffers[layer][pos % size]

    def push(self, layer: int, x: np.ndarray) -> None:
        self.buffers[layer][self.time_index % self._sizes[layer]] = x

    def advance(self) -> None:
        self.time_index += 1


def new_state(n_layers, dilations, kernel_size, channels, draws, dtype) -> GenerationState:
    buffers = [
        np.zeros((max((kernel_size - 1) * int(d), 1), channels), dtype=dtype) for d in dilations
    ]
    return GenerationState(
        buffers=buffers, dilations=np.asarray(dilations), kernel_size=kernel_size, draws=draws
    )


def generate(
    embed,
    taps,
    conv_b,
    res_w,
    res_b,
    skip_w,
    skip_b,
    cond_layer,
    cond_head,
    head1_w,
    head1_b,
    head2_w,
    head2_b,
    dilations,
    kernel_size,
    uniforms,
    temperature,
    start_index,
    out_indices,
    out_logits,
):
    """Same signature and semantics as the compiled `_stepgen.generate`."""
    L = taps.shape[0]
    K = int(kernel_size)
    C = res_b.shape[1]
    T = uniforms.shape[0]
    keep_logits = out_logits.shape[0] == T

    state = new_state(L, dilations, K, C, uniforms, embed.dtype)
    prev = int(start_index)
    for t in range(T):
        x = embed[prev].copy()
        skip_acc = None
        for l in range(L):
            z = conv_b[l] + cond_layer[l, :, t]
            for m in range(K - 1):
                z = z + taps[l, m] @ state.past_input(l, m)
            z = z + taps[l, K - 1] @ x
            state.push(l, x)
            g = np.tanh(z[:C]) / (1.0 + np.exp(-z[C:]))
            x = x + res_w[l] @ g + res_b[l]
            s = skip_w[l] @ g + skip_b[l]
            skip_acc = s if skip_acc is None else skip_acc + s
        h = np.maximum(skip_acc + cond_head[:, t], 0)
        h = np.maximum(head1_w @ h + head1_b, 0)
        logits = head2_w @ h + head2_b
        if keep_logits:
            out_logits[t] = logits
        idx = sample_index(logits, float(uniforms[t]), temperature)
        out_indices[t] = idx
        prev = idx
        state.advance()
