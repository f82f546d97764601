"""The noise-prediction network: a small conv encoder-decoder with cross-attention.

Layout for the default widths ``(32, 64, 128)`` on 3x32x32 inputs::

    conv_in -> res@32 -> down -> res@16 + xattn@16 -> down -> res@8 + xattn@8
            -> up -> [cat skip16] conv, res@16 -> up -> [cat skip32] conv, res@32 -> conv_out

Activations are NHWC internally, so an attention layer's visual tokens are a
plain reshape of the feature map. There are no normalisation layers. The forward pass is written once against
:mod:`unimap.numerics.autodiff`; with plain-array parameters it runs without
a tape.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..attention import AttentionMode, CrossAttentionLayer, attention_update
from ..errors import ArgumentError, DimensionError
from ..numerics import autodiff as ad
from ..numerics.rng import Rng, randn
from ..numerics.tensor import DTYPE, check_finite
from .prompts import N_TOKENS, VOCAB, token_array


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    widths: tuple = (32, 64, 128)
    d_c: int = 32
    d: int = 64
    t_dim: int = 64
    heads: int = 1
    T: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.image_size % (2 ** (len(self.widths) - 1)):
            raise ArgumentError("image size must be divisible by the total downsampling factor")

    @property
    def attention_levels(self) -> tuple:
        return tuple(range(1, len(self.widths)))

    def to_dict(self) -> dict:
        return asdict(self)


def timestep_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape ``(B, dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(DTYPE)


def init_params(cfg: ModelConfig, rng: Rng) -> dict:
    p: dict = {}

    def normal(name, shape, fan_in, gain=1.0):
        p[name] = randn(rng.split(len(p)), shape) * DTYPE(gain / math.sqrt(fan_in))

    def zeros(name, shape):
        p[name] = np.zeros(shape, dtype=DTYPE)

    def conv(name, cin, cout, k=3, gain=1.0):
        normal(f"{name}.w", (k, k, cin, cout), cin * k * k, gain)
        zeros(f"{name}.b", (cout,))

    def res(name, c):
        conv(f"{name}.conv1", c, c, gain=math.sqrt(2.0))
        normal(f"{name}.temb.w", (cfg.t_dim, c), cfg.t_dim)
        zeros(f"{name}.temb.b", (c,))
        conv(f"{name}.conv2", c, c, gain=0.1)

    def attn(name, c):
        normal(f"{name}.w_q", (c, cfg.d), c)
        normal(f"{name}.w_k", (cfg.d_c, cfg.d), cfg.d_c)
        normal(f"{name}.w_v", (cfg.d_c, cfg.d), cfg.d_c)
        normal(f"{name}.w_o", (cfg.d, c), cfg.d, 0.1)

    normal("tok_emb", (len(VOCAB), cfg.d_c), 1.0)
    normal("pos_emb", (N_TOKENS, cfg.d_c), 1.0, 0.1)
    normal("time.w1", (cfg.t_dim, cfg.t_dim), cfg.t_dim)
    zeros("time.b1", (cfg.t_dim,))
    normal("time.w2", (cfg.t_dim, cfg.t_dim), cfg.t_dim)
    zeros("time.b2", (cfg.t_dim,))
    w = cfg.widths
    conv("conv_in", cfg.channels, w[0])
    for i, c in enumerate(w):
        if i > 0:
            conv(f"down{i}", w[i - 1], c)
        res(f"enc{i}", c)
        if i in cfg.attention_levels:
            attn(f"attn{i}", c)
    for i in range(len(w) - 2, -1, -1):
        conv(f"up{i}", w[i + 1] + w[i], w[i])
        res(f"dec{i}", w[i])
    conv("conv_out", w[0], cfg.channels, gain=0.1)
    return p


def _conv(p, name, x, stride=1):
    y = ad.conv2d(x, p[f"{name}.w"], stride=stride, padding=1)
    return ad.add(y, p[f"{name}.b"])


def _res(p, name, x, temb_act):
    h = _conv(p, f"{name}.conv1", ad.silu(x))
    tproj = ad.add(ad.matmul(temb_act, p[f"{name}.temb.w"]), p[f"{name}.temb.b"])
    bsz, c = ad.value(tproj).shape
    h = ad.add(h, ad.reshape(tproj, (bsz, 1, 1, c)))
    h = _conv(p, f"{name}.conv2", ad.silu(h))
    return ad.add(x, h)


def attention_layer(p, name, heads=1) -> CrossAttentionLayer:
    return CrossAttentionLayer(p[f"{name}.w_q"], p[f"{name}.w_k"], p[f"{name}.w_v"], p[f"{name}.w_o"], heads)


def _xattn(p, name, h, c_emb, mode, heads):
    b, hh, ww, c = ad.value(h).shape
    tokens = ad.reshape(h, (b, hh * ww, c))
    x_tilde, a = attention_update(attention_layer(p, name, heads), tokens, c_emb, mode)
    return ad.reshape(x_tilde, (b, hh, ww, c)), a


def prompt_embedding(p, token_ids: np.ndarray):
    """``(B, N, d_c)`` embedding: token table lookup plus slot position embedding."""
    onehot = np.eye(len(VOCAB), dtype=ad.value(p["tok_emb"]).dtype)[token_ids]
    return ad.add(ad.matmul(onehot, p["tok_emb"]), p["pos_emb"])


def forward_batch(p: dict, cfg: ModelConfig, z, t, token_ids: np.ndarray, mode):
    """Batched forward. Returns ``(eps, [A per attention layer])``.

    ``z`` is ``(B, C, H, W)``; ``t`` an int or ``(B,)`` ints; ``token_ids``
    ``(B, N)``. Captured update terms are ``(B, M, d_x)`` values.
    """
    mode = AttentionMode.parse(mode)
    zv = ad.value(z)
    bsz = zv.shape[0]
    t = np.broadcast_to(np.asarray(t), (bsz,))
    feats = timestep_features(t, cfg.t_dim).astype(zv.dtype)
    temb = ad.add(ad.matmul(feats, p["time.w1"]), p["time.b1"])
    temb = ad.add(ad.matmul(ad.silu(temb), p["time.w2"]), p["time.b2"])
    temb_act = ad.silu(temb)
    c_emb = prompt_embedding(p, token_ids)

    captured = []
    skips = []
    w = cfg.widths
    h = _conv(p, "conv_in", ad.transpose(z, (0, 2, 3, 1)))
    for i in range(len(w)):
        if i > 0:
            h = _conv(p, f"down{i}", h, stride=2)
        h = _res(p, f"enc{i}", h, temb_act)
        if i in cfg.attention_levels:
            h, a = _xattn(p, f"attn{i}", h, c_emb, mode, cfg.heads)
            captured.append(a)
        if i < len(w) - 1:
            skips.append(h)
    for i in range(len(w) - 2, -1, -1):
        h = ad.concat([ad.upsample2x(h), skips[i]], axis=-1)
        h = _conv(p, f"up{i}", h)
        h = _res(p, f"dec{i}", h, temb_act)
    eps = _conv(p, "conv_out", ad.silu(h))
    return ad.transpose(eps, (0, 3, 1, 2)), captured


class DenoiserModel:
    """Noise predictor ``eps(z_t, t, prompt, mode)`` with weights in ``params``."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig | None = None, seed: int = 0) -> "DenoiserModel":
        cfg = cfg or ModelConfig()
        return cls(cfg, init_params(cfg, Rng(seed, (0x1A17,))))

    @property
    def input_shape(self) -> tuple:
        return (self.cfg.channels, self.cfg.image_size, self.cfg.image_size)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def predict(self, z_t, t, prompt, mode=AttentionMode.STANDARD):
        """Noise prediction for one latent ``(C,H,W)`` or a batch ``(B,C,H,W)``.

        ``prompt`` is a :class:`Prompt` (shared by the batch) or a list of
        prompts. Returns ``(eps, captured)`` where ``captured`` holds the
        update term ``A`` of every attention layer, ``(M, d_x)`` per layer
        for single inputs.
        """
        z = np.asarray(z_t, dtype=DTYPE)
        single = z.ndim == 3
        if single:
            z = z[None]
        if z.shape[1:] != self.input_shape:
            raise DimensionError(f"latent shape {z.shape[1:]} != model input {self.input_shape}")
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.cfg.T):
            raise ArgumentError(f"timestep {t} outside [0, {self.cfg.T}]")
        check_finite(z, "latent")
        ids = token_array(prompt, z.shape[0])
        eps, captured = forward_batch(self.params, self.cfg, z, t_arr, ids, mode)
        check_finite(eps, "noise prediction")
        captured = [np.broadcast_to(a, (z.shape[0],) + a.shape[1:]) if a.shape[0] != z.shape[0] else a for a in captured]
        if single:
            return eps[0], [a[0] for a in captured]
        return eps, captured

    __call__ = predict


def forward(model: DenoiserModel, z_t, t, prompt, mode=AttentionMode.STANDARD):
    return model.predict(z_t, t, prompt, mode)
