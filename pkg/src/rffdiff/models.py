"""Transformer networks: the diffusion noise predictor and the device classifier.

The noise predictor tokenizes a complex frame into patches, injects the
diffusion step through single-slot cross-attention, and emits the predicted
corruption noise. The classifier prepends one learnable token per device
class, encodes along time, transposes, encodes across class slots, and maps
the flattened feature plane to logits.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError
from .signals import ComplexSignal

_SINUSOID_BASE = 10000.0


@dataclass(frozen=True)
class NoisePredictorConfig:
    signal_len: int = 320
    model_dim: int = 128
    num_blocks: int = 4
    num_heads: int = 4
    step_embed_dim: int = 128
    patch_len: int = 4

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigError("model_dim must be divisible by num_heads")
        if self.signal_len % self.patch_len != 0:
            raise ConfigError("signal_len must be divisible by patch_len")
        if self.step_embed_dim % 2 != 0:
            raise ConfigError("step_embed_dim must be even")


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int = 6
    signal_len: int = 320
    temporal_depth: int = 2
    class_depth: int = 2
    num_heads: int = 4
    mlp_hidden: int = 256

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.signal_len < 1:
            raise ConfigError("signal_len must be >= 1")
        if self.signal_len % self.num_heads != 0:
            raise ConfigError("num_heads must divide signal_len")


def embed_diffusion_step(t: int, dim: int) -> np.ndarray:
    """Sinusoidal step embedding: interleaved sin/cos over geometric frequencies.

    Injective over integer steps while the slowest frequency stays monotonic,
    which holds for any practical (dim, T) pairing such as dim >= 8, T <= 1000.
    """
    if dim % 2 != 0:
        raise ConfigError("embedding dim must be even")
    if t < 0:
        raise ConfigError("step must be >= 0")
    half = dim // 2
    freqs = _SINUSOID_BASE ** (-np.arange(half) / half)
    angles = t * freqs
    out = np.empty(dim)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def phase_modulation_encoding(sig: ComplexSignal, period: float | None = None) -> ComplexSignal:
    """Encode position as a per-sample unit-modulus rotation e^{j*2*pi*n/period}.

    Magnitude-preserving and invertible by the conjugate rotation. The
    default period is twice the signal length.
    """
    n = np.arange(len(sig))
    lam = 2.0 * len(sig) if period is None else period
    return sig.with_samples(sig.samples * np.exp(2j * np.pi * n / lam))


def _zero_init(layer: nn.Linear):
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)


class _FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, zero_out: bool):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        if zero_out:
            _zero_init(self[2])


class _PredictorBlock(nn.Module):
    """Pre-norm block: self-attention, step cross-attention, feed-forward.

    The residual output projections start at zero so an untrained stack is
    the identity map.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim, 4 * dim, zero_out=True)
        _zero_init(self.self_attn.out_proj)
        _zero_init(self.cross_attn.out_proj)

    def forward(self, h, cond):
        a = self.norm_self(h)
        h = h + self.self_attn(a, a, a, need_weights=False)[0]
        a = self.norm_cross(h)
        h = h + self.cross_attn(a, cond, cond, need_weights=False)[0]
        h = h + self.ffn(self.norm_ffn(h))
        return h


class _EncoderBlock(nn.Module):
    """Plain pre-norm transformer encoder block."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim, 4 * dim, zero_out=False)

    def forward(self, h):
        a = self.norm_attn(h)
        h = h + self.attn(a, a, a, need_weights=False)[0]
        h = h + self.ffn(self.norm_ffn(h))
        return h


class NoisePredictor(nn.Module):
    """Predicts the corruption noise of a complex frame at a diffusion step.

    ``linear_probe`` bypasses the transformer stack, norms, and biases,
    leaving only the (linear) rotate/patchify/embed/head plumbing; used to
    validate shapes and data flow.
    """

    def __init__(self, config: NoisePredictorConfig, linear_probe: bool = False):
        super().__init__()
        self.config = config
        self.linear_probe = linear_probe
        d, p = config.model_dim, config.patch_len
        self.num_tokens = config.signal_len // p

        n = torch.arange(config.signal_len, dtype=torch.float32)
        phase = 2.0 * math.pi * n / (2.0 * config.signal_len)
        self.register_buffer("rot_cos", torch.cos(phase), persistent=False)
        self.register_buffer("rot_sin", torch.sin(phase), persistent=False)

        self.patch_embed = nn.Linear(2 * p, d)
        self.step_mlp = nn.Sequential(
            nn.Linear(config.step_embed_dim, d), nn.GELU(), nn.Linear(d, d)
        )
        self.blocks = nn.ModuleList(
            _PredictorBlock(d, config.num_heads) for _ in range(config.num_blocks)
        )
        self.final_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, 2 * p)
        _zero_init(self.head)

    def _param_dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def _sinusoid(self, t: torch.Tensor) -> torch.Tensor:
        half = self.config.step_embed_dim // 2
        freqs = _SINUSOID_BASE ** (
            -torch.arange(half, dtype=self._param_dtype(), device=t.device) / half
        )
        angles = t.to(self._param_dtype())[:, None] * freqs[None, :]
        emb = torch.empty(
            t.shape[0], self.config.step_embed_dim, dtype=angles.dtype, device=t.device
        )
        emb[:, 0::2] = torch.sin(angles)
        emb[:, 1::2] = torch.cos(angles)
        return emb

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        """x: complex [B, M]; t: int or int tensor [B]. Returns complex [B, M]."""
        if x.ndim != 2 or x.shape[1] != self.config.signal_len:
            raise ConfigError(
                f"expected [B, {self.config.signal_len}] input, got {tuple(x.shape)}"
            )
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long, device=x.device)

        dtype = self._param_dtype()
        xr = torch.view_as_real(x).to(dtype)
        re, im = xr.unbind(-1)
        cos = self.rot_cos.to(dtype)
        sin = self.rot_sin.to(dtype)
        rotated = torch.stack([re * cos - im * sin, re * sin + im * cos], dim=-1)
        tokens = rotated.reshape(x.shape[0], self.num_tokens, 2 * self.config.patch_len)

        if self.linear_probe:
            h = nn.functional.linear(tokens, self.patch_embed.weight)
            y = nn.functional.linear(h, self.head.weight)
        else:
            h = self.patch_embed(tokens)
            cond = self.step_mlp(self._sinusoid(t))[:, None, :]
            for block in self.blocks:
                h = block(h, cond)
            y = self.head(self.final_norm(h))

        y = y.reshape(x.shape[0], self.config.signal_len, 2)
        return torch.view_as_complex(y.contiguous())


class Classifier(nn.Module):
    """Dual-encoder device classifier with one learnable token per class.

    The class encoder runs single-headed because its token width is the
    (small) number of class slots.
    """

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        n, m = config.num_classes, config.signal_len
        self.class_tokens = nn.Parameter(torch.randn(n, m) * 0.02)
        self.input_proj = nn.Linear(2 * m, m)
        self.temporal_blocks = nn.ModuleList(
            _EncoderBlock(m, config.num_heads) for _ in range(config.temporal_depth)
        )
        self.temporal_norm = nn.LayerNorm(m)
        self.class_blocks = nn.ModuleList(
            _EncoderBlock(n + 1, 1) for _ in range(config.class_depth)
        )
        self.class_norm = nn.LayerNorm(n + 1)
        self.head = nn.Sequential(
            nn.Linear((n + 1) * m, config.mlp_hidden),
            nn.GELU(),
            nn.Linear(config.mlp_hidden, n),
        )

    def forward(self, x: torch.Tensor, return_intermediates: bool = False):
        """x: complex [B, M]. Returns logits [B, N] (plus shape probes)."""
        if x.ndim != 2 or x.shape[1] != self.config.signal_len:
            raise ConfigError(
                f"expected [B, {self.config.signal_len}] input, got {tuple(x.shape)}"
            )
        dtype = self.input_proj.weight.dtype
        interleaved = torch.view_as_real(x).to(dtype).reshape(x.shape[0], -1)
        sig_token = self.input_proj(interleaved)[:, None, :]

        tokens = self.class_tokens[None].expand(x.shape[0], -1, -1)
        z_temporal = torch.cat([tokens, sig_token], dim=1)  # [B, N+1, M]
        for block in self.temporal_blocks:
            z_temporal = block(z_temporal)
        z_temporal = self.temporal_norm(z_temporal)

        z_class = z_temporal.transpose(1, 2)  # [B, M, N+1]
        z = z_class
        for block in self.class_blocks:
            z = block(z)
        z = self.class_norm(z)

        logits = self.head(z.flatten(1))
        if return_intermediates:
            return logits, {"pre_transpose": z_temporal, "post_transpose": z_class}
        return logits


def predict_noise(model: NoisePredictor, x_t: ComplexSignal, t: int) -> ComplexSignal:
    """Inference wrapper: one frame in, predicted noise out."""
    model.eval()
    with torch.no_grad():
        xt = torch.from_numpy(np.ascontiguousarray(x_t.samples[None, :]))
        eps = model(xt, t)[0].detach().cpu().numpy().astype(np.complex128)
    return x_t.with_samples(eps)


def classify(model: Classifier, x_prime: ComplexSignal) -> np.ndarray:
    """Inference wrapper: one frame in, class logits out."""
    model.eval()
    with torch.no_grad():
        xp = torch.from_numpy(np.ascontiguousarray(x_prime.samples[None, :]))
        logits = model(xp)[0].detach().cpu().numpy().astype(np.float64)
    return logits


def as_denoise_fn(model: NoisePredictor):
    """Adapt a predictor to the batched callable the denoiser consumes."""

    def _predict(batch: np.ndarray, t: int) -> np.ndarray:
        model.eval()
        with torch.no_grad():
            xt = torch.from_numpy(np.ascontiguousarray(batch))
            eps = model(xt, t)
        return eps.detach().cpu().numpy().astype(np.complex128)

    return _predict


def permute_class_slots(model: Classifier, perm) -> Classifier:
    """Return a classifier whose class-indexed parameters follow ``perm``.

    Slot i of the new model holds what slot perm[i] held, consistently
    across the class tokens, every class-encoder weight, and the output
    head, so new_logits == old_logits[perm] exactly. Diagnostic utility for
    verifying that no hidden class-order dependence exists.
    """
    perm = list(perm)
    n = model.config.num_classes
    if sorted(perm) != list(range(n)):
        raise ConfigError("perm must be a permutation of range(num_classes)")
    # Channel permutation over the N+1 class-slot axis; the signal slot stays.
    chan = torch.tensor(perm + [n], dtype=torch.long)

    out = copy.deepcopy(model)
    sd = out.state_dict()
    sd["class_tokens"] = sd["class_tokens"][torch.tensor(perm)]

    width = n + 1
    for i in range(model.config.class_depth):
        pre = f"class_blocks.{i}."
        for ln in ("norm_attn", "norm_ffn"):
            sd[pre + f"{ln}.weight"] = sd[pre + f"{ln}.weight"][chan]
            sd[pre + f"{ln}.bias"] = sd[pre + f"{ln}.bias"][chan]
        w = sd[pre + "attn.in_proj_weight"]  # [3*(N+1), N+1]
        b = sd[pre + "attn.in_proj_bias"]
        wq, wk, wv = w[:width], w[width : 2 * width], w[2 * width :]
        bq, bk, bv = b[:width], b[width : 2 * width], b[2 * width :]
        sd[pre + "attn.in_proj_weight"] = torch.cat(
            [wq[:, chan], wk[:, chan], wv[chan][:, chan]], dim=0
        )
        sd[pre + "attn.in_proj_bias"] = torch.cat([bq, bk, bv[chan]], dim=0)
        sd[pre + "attn.out_proj.weight"] = sd[pre + "attn.out_proj.weight"][chan][:, chan]
        sd[pre + "attn.out_proj.bias"] = sd[pre + "attn.out_proj.bias"][chan]
        sd[pre + "ffn.0.weight"] = sd[pre + "ffn.0.weight"][:, chan]
        sd[pre + "ffn.2.weight"] = sd[pre + "ffn.2.weight"][chan]
        sd[pre + "ffn.2.bias"] = sd[pre + "ffn.2.bias"][chan]

    sd["class_norm.weight"] = sd["class_norm.weight"][chan]
    sd["class_norm.bias"] = sd["class_norm.bias"][chan]

    # Flatten order is position-major: column m*(N+1)+c reads slot c at time m.
    m = model.config.signal_len
    col_perm = (torch.arange(m)[:, None] * width + chan[None, :]).reshape(-1)
    sd["head.0.weight"] = sd["head.0.weight"][:, col_perm]
    sd["head.2.weight"] = sd["head.2.weight"][torch.tensor(perm)]
    sd["head.2.bias"] = sd["head.2.bias"][torch.tensor(perm)]

    out.load_state_dict(sd)
    return out
