"""Hierarchical shifted-window attention classifier.

Layout follows the usual four-part recipe: patch embedding, stages of
alternating regular/shifted window-attention blocks separated by patch
merging, a final layernorm with global average pooling, and a linear head.
Token grids are kept channels-last, ``(B, H, W, C)``.

Class index 0 is authentic (real) and 1 is CGI.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

CLASS_NAMES = ("real", "cgi")
MASK_VALUE = -1e4
LN_EPS = 1e-5


@dataclass
class ModelConfig:
    image_size: int = 32
    patch_size: int = 2
    embed_dim: int = 16
    depths: tuple[int, ...] = (1, 1, 2)
    num_heads: tuple[int, ...] = (2, 2, 4)
    window_size: int = 4
    mlp_ratio: float = 2.0
    num_classes: int = 2
    use_relative_position_bias: bool = True
    drop_rate: float = 0.0

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.num_heads = tuple(int(h) for h in self.num_heads)
        self.validate()

    def validate(self) -> None:
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if not self.depths or len(self.depths) != len(self.num_heads):
            raise ConfigError(f"depths {self.depths} and num_heads {self.num_heads} must have equal, nonzero length")
        if any(d < 1 for d in self.depths) or any(h < 1 for h in self.num_heads):
            raise ConfigError("depths and num_heads entries must be >= 1")
        if self.num_classes != 2:
            raise ConfigError("num_classes must be 2 (authentic vs CGI)")
        if self.window_size < 1 or self.mlp_ratio <= 0:
            raise ConfigError("window_size must be >= 1 and mlp_ratio > 0")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError("drop_rate must be in [0, 1)")
        side = self.grid_size
        for s, heads in enumerate(self.num_heads):
            dim = self.stage_dim(s)
            if dim % heads:
                raise ConfigError(f"stage {s} dim {dim} not divisible by {heads} heads")
            if side < 1:
                raise ConfigError(f"stage {s} token grid collapses to zero")
            win = min(self.window_size, side)
            if side % win:
                raise ConfigError(f"stage {s} grid {side} not divisible by window {win}")
            if s < len(self.depths) - 1:
                if side % 2:
                    raise ConfigError(f"stage {s} grid {side} is odd; cannot merge patches")
                side //= 2

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * 2**stage

    def stage_grid(self, stage: int) -> int:
        return self.grid_size // 2**stage

    def stage_window(self, stage: int) -> int:
        return min(self.window_size, self.stage_grid(stage))

    def block_shift(self, stage: int, block: int) -> int:
        win = self.stage_window(stage)
        if block % 2 == 0 or win >= self.stage_grid(stage):
            return 0
        return win // 2

    @property
    def feature_dim(self) -> int:
        return self.stage_dim(self.num_stages - 1)

    def to_text(self) -> str:
        """Canonical ``key=value`` lines, sorted by key."""
        lines = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        raw = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, object]) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown model key {key!r}")
            kwargs[key] = _coerce(known[key], value)
        return cls(**kwargs)


def _coerce(f: dataclasses.Field, value):
    if not isinstance(value, str):
        return value
    default = f.default
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.split(",") if v.strip())
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for model key {f.name!r}") from None
    return value


PRESETS: dict[str, dict] = {
    "swin-micro": dict(
        image_size=32, patch_size=2, embed_dim=16, depths=(1, 1, 2), num_heads=(2, 2, 4), window_size=4, mlp_ratio=2.0
    ),
    "swin-t-like": dict(
        image_size=224,
        patch_size=4,
        embed_dim=96,
        depths=(2, 2, 6, 2),
        num_heads=(3, 6, 12, 24),
        window_size=7,
        mlp_ratio=4.0,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


# ---------------------------------------------------------------- index helpers


@functools.lru_cache(maxsize=None)
def relative_position_index(window: int) -> np.ndarray:
    """(N, N) index into a ((2w-1)^2)-row bias table, N = window**2."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (window - 1)
    index = rel[..., 0] * (2 * window - 1) + rel[..., 1]
    index.setflags(write=False)
    return index


@functools.lru_cache(maxsize=None)
def shifted_window_mask(side: int, window: int, shift: int) -> np.ndarray:
    """Additive mask (num_windows, N, N) for attention after a cyclic shift.

    Regions are labelled on the shifted grid; token pairs from different
    regions get ``MASK_VALUE``.  All zeros when ``shift == 0``.
    """
    n_win = (side // window) ** 2
    n = window * window
    if shift == 0:
        mask = np.zeros((n_win, n, n))
    else:
        labels = np.zeros((side, side), dtype=np.int64)
        bands = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
        region = 0
        for hs in bands:
            for ws in bands:
                labels[hs, ws] = region
                region += 1
        win_labels = window_partition_np(labels[:, :, None], window)[..., 0]
        differ = win_labels[:, :, None] != win_labels[:, None, :]
        mask = np.where(differ, MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def window_partition_np(x: np.ndarray, window: int) -> np.ndarray:
    h, w, c = x.shape
    return x.reshape(h // window, window, w // window, window, c).transpose(0, 2, 1, 3, 4).reshape(-1, window * window, c)


# ---------------------------------------------------------------- differentiable building blocks


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def patch_embed(images, params: Mapping[str, Tensor], config: ModelConfig) -> Tensor:
    """(B, 3, H, W) or (3, H, W) -> (B, num_patches, embed_dim), tokens row-major."""
    weight = params["patch_embed.weight"]
    x = _as_tensor(images, weight.dtype)
    single = x.ndim == 3
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected images shaped (B, 3, H, W), got {x.shape}")
    b, _, h, w = x.shape
    if h != config.image_size or w != config.image_size:
        raise ShapeError(f"image is {h}x{w}, model expects {config.image_size}x{config.image_size}")
    p, g = config.patch_size, config.grid_size
    x = ad.reshape(x, (b, 3, g, p, g, p))
    x = ad.permute(x, (0, 2, 4, 1, 3, 5))
    x = ad.reshape(x, (b, g * g, 3 * p * p))
    out = ad.linear(x, weight, params["patch_embed.bias"])
    return out


def window_partition(tokens: Tensor, window: int) -> Tensor:
    """(Hp, Wp, C) or (B, Hp, Wp, C) -> (B * num_windows, window**2, C).

    Windows are enumerated row-major over the window grid (batch-major when
    batched); tokens inside a window are row-major.
    """
    x = tokens if tokens.ndim == 4 else ad.reshape(tokens, (1,) + tokens.shape)
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"grid {h}x{w} is not divisible by window {window}")
    x = ad.reshape(x, (b, h // window, window, w // window, window, c))
    x = ad.permute(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b * (h // window) * (w // window), window * window, c))


def window_reverse(windows: Tensor, window: int, hp: int, wp: int, batch: int | None = None) -> Tensor:
    """Inverse of :func:`window_partition`; returns (Hp, Wp, C) when ``batch`` is None."""
    c = windows.shape[-1]
    nh, nw = hp // window, wp // window
    b = 1 if batch is None else batch
    if windows.shape[0] != b * nh * nw or windows.shape[1] != window * window:
        raise ShapeError(f"{windows.shape} does not tile a {hp}x{wp} grid with window {window}")
    x = ad.reshape(windows, (b, nh, nw, window, window, c))
    x = ad.permute(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (hp, wp, c) if batch is None else (b, hp, wp, c))


def cyclic_shift(tokens: Tensor, shift: int) -> Tensor:
    """Torus roll of the spatial axes by ``(-shift, -shift)``; negative undoes it."""
    if shift == 0:
        return tokens
    axes = (0, 1) if tokens.ndim == 3 else (1, 2)
    return ad.roll(tokens, (-shift, -shift), axes)


def attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k) + bias) v over the last two axes."""
    d_k = q.shape[-1]
    scores = ad.matmul(ad.scale(q, 1.0 / math.sqrt(d_k)), ad.transpose(k))
    if bias is not None:
        scores = ad.add(scores, bias)
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, v)
    return (out, weights) if return_weights else out


def window_attention(
    x: Tensor,
    params: Mapping[str, Tensor],
    num_heads: int,
    mask: np.ndarray | None = None,
    prefix: str = "",
    return_weights: bool = False,
):
    """Multi-head self-attention inside each window.

    ``x`` is (num_windows_total, N, C).  ``mask`` is (num_windows, N, N) and
    repeats over the batch.  A relative-position bias is added when
    ``prefix + "rel_bias_table"`` is present in ``params``.
    """
    bw, n, c = x.shape
    if c % num_heads:
        raise ShapeError(f"channels {c} not divisible by {num_heads} heads")
    d = c // num_heads
    qkv = ad.linear(x, params[prefix + "qkv.weight"], params[prefix + "qkv.bias"])
    qkv = ad.permute(ad.reshape(qkv, (bw, n, 3, num_heads, d)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]

    bias = None
    table = params.get(prefix + "rel_bias_table")
    if table is not None:
        window = math.isqrt(n)
        if window * window != n:
            raise ShapeError(f"window token count {n} is not a perfect square")
        idx = relative_position_index(window).reshape(-1)
        rel = ad.take(table, idx)
        bias = ad.reshape(ad.permute(ad.reshape(rel, (n, n, num_heads)), (2, 0, 1)), (1, num_heads, n, n))

    if mask is not None and np.any(mask):
        n_win = mask.shape[0]
        if bw % n_win or mask.shape[1:] != (n, n):
            raise ShapeError(f"mask {mask.shape} does not match windows {x.shape}")
        m = Tensor(mask.reshape(1, n_win, 1, n, n), dtype=x.dtype)
        bb = bw // n_win
        qs = ad.scale(q, 1.0 / math.sqrt(d))
        scores = ad.matmul(qs, ad.transpose(k))
        if bias is not None:
            scores = ad.add(scores, bias)
        scores = ad.add(ad.reshape(scores, (bb, n_win, num_heads, n, n)), m)
        weights = ad.reshape(ad.softmax(scores, axis=-1), (bw, num_heads, n, n))
        out = ad.matmul(weights, v)
    else:
        out, weights = attention(q, k, v, bias, return_weights=True)

    out = ad.reshape(ad.permute(out, (0, 2, 1, 3)), (bw, n, c))
    out = ad.linear(out, params[prefix + "proj.weight"], params[prefix + "proj.bias"])
    return (out, weights) if return_weights else out


def mlp(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = ad.gelu(ad.linear(x, params[prefix + "fc1.weight"], params[prefix + "fc1.bias"]))
    return ad.linear(h, params[prefix + "fc2.weight"], params[prefix + "fc2.bias"])


def swin_block(
    x: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    num_heads: int,
    window: int,
    shift: int,
    drop_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """x + W-MSA(LN(x)) then + MLP(LN(.)); x is (B, H, W, C)."""
    b, h, w, c = x.shape
    if shift and not 0 < shift < window:
        raise ShapeError(f"shift {shift} must lie in (0, {window})")
    y = ad.layernorm(x, params[prefix + "norm1.gamma"], params[prefix + "norm1.beta"], LN_EPS)
    y = cyclic_shift(y, shift)
    windows = window_partition(y, window)
    mask = shifted_window_mask(h, window, shift) if shift else None
    attn = window_attention(windows, params, num_heads, mask, prefix + "attn.")
    y = window_reverse(attn, window, h, w, batch=b)
    y = cyclic_shift(y, -shift)
    y = ad.dropout(y, drop_rate, rng, training)
    x = ad.add(x, y)
    z = ad.layernorm(x, params[prefix + "norm2.gamma"], params[prefix + "norm2.beta"], LN_EPS)
    z = ad.dropout(mlp(z, params, prefix + "mlp."), drop_rate, rng, training)
    return ad.add(x, z)


def patch_merging(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """(B, H, W, C) -> (B, H/2, W/2, 2C).

    Each 2x2 neighbourhood is concatenated in the order
    (0,0), (1,0), (0,1), (1,1) as (row, col) offsets, normalised, then
    projected from 4C to 2C without bias.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patch merging needs an even grid, got {h}x{w}")
    x = merge_neighbourhoods(x)
    x = ad.layernorm(x, params[prefix + "norm.gamma"], params[prefix + "norm.beta"], LN_EPS)
    x = ad.linear(x, params[prefix + "reduction.weight"])
    if squeeze:
        x = ad.reshape(x, x.shape[1:])
    return x


def merge_neighbourhoods(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    x = ad.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    x = ad.permute(x, (0, 1, 3, 4, 2, 5))
    return ad.reshape(x, (b, h // 2, w // 2, 4 * c))


# ---------------------------------------------------------------- model


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape implied by ``config``, in init order."""
    shapes: dict[str, tuple[int, ...]] = {}
    p, d = config.patch_size, config.embed_dim
    shapes["patch_embed.weight"] = (3 * p * p, d)
    shapes["patch_embed.bias"] = (d,)
    shapes["patch_norm.gamma"] = (d,)
    shapes["patch_norm.beta"] = (d,)
    for s, depth in enumerate(config.depths):
        c = config.stage_dim(s)
        heads = config.num_heads[s]
        hidden = int(c * config.mlp_ratio)
        win = config.stage_window(s)
        for blk in range(depth):
            pre = f"stages.{s}.blocks.{blk}."
            shapes[pre + "norm1.gamma"] = (c,)
            shapes[pre + "norm1.beta"] = (c,)
            shapes[pre + "attn.qkv.weight"] = (c, 3 * c)
            shapes[pre + "attn.qkv.bias"] = (3 * c,)
            if config.use_relative_position_bias:
                shapes[pre + "attn.rel_bias_table"] = ((2 * win - 1) ** 2, heads)
            shapes[pre + "attn.proj.weight"] = (c, c)
            shapes[pre + "attn.proj.bias"] = (c,)
            shapes[pre + "norm2.gamma"] = (c,)
            shapes[pre + "norm2.beta"] = (c,)
            shapes[pre + "mlp.fc1.weight"] = (c, hidden)
            shapes[pre + "mlp.fc1.bias"] = (hidden,)
            shapes[pre + "mlp.fc2.weight"] = (hidden, c)
            shapes[pre + "mlp.fc2.bias"] = (c,)
        if s < config.num_stages - 1:
            pre = f"stages.{s}.merge."
            shapes[pre + "norm.gamma"] = (4 * c,)
            shapes[pre + "norm.beta"] = (4 * c,)
            shapes[pre + "reduction.weight"] = (4 * c, 2 * c)
    f = config.feature_dim
    shapes["norm.gamma"] = (f,)
    shapes["norm.beta"] = (f,)
    shapes["head.weight"] = (f, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_parameters(config: ModelConfig, seed: int = 0, dtype="float32") -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            value = np.zeros(shape)
        else:
            value = _truncated_normal(rng, shape, 0.02)
        params[name] = Tensor(value, requires_grad=True, dtype=dtype, name=name)
    return params


@dataclass
class SwinModel:
    """Parameters plus the forward pass for a :class:`ModelConfig`."""

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype="float32") -> "SwinModel":
        return cls(config, init_parameters(config, seed, dtype))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def shape_audit(self) -> None:
        """Raise ShapeError unless the parameter set matches the config exactly."""
        expected = parameter_shapes(self.config)
        missing = sorted(set(expected) - set(self.params))
        extra = sorted(set(self.params) - set(expected))
        if missing or extra:
            raise ShapeError(f"parameter names differ from config: missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape}, config implies {shape}")

    def astype(self, dtype) -> "SwinModel":
        return SwinModel(
            self.config,
            {k: Tensor(v.data, requires_grad=True, dtype=dtype, name=k) for k, v in self.params.items()},
        )

    def features(self, images, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        cfg, params = self.config, self.params
        x = patch_embed(images, params, cfg)
        x = ad.layernorm(x, params["patch_norm.gamma"], params["patch_norm.beta"], LN_EPS)
        b = x.shape[0]
        g = cfg.grid_size
        x = ad.reshape(x, (b, g, g, cfg.embed_dim))
        x = ad.dropout(x, cfg.drop_rate, rng, training)
        for s, depth in enumerate(cfg.depths):
            win = cfg.stage_window(s)
            for blk in range(depth):
                x = swin_block(
                    x,
                    params,
                    f"stages.{s}.blocks.{blk}.",
                    cfg.num_heads[s],
                    win,
                    cfg.block_shift(s, blk),
                    cfg.drop_rate,
                    rng,
                    training,
                )
            if s < cfg.num_stages - 1:
                x = patch_merging(x, params, f"stages.{s}.merge.")
        x = ad.layernorm(x, params["norm.gamma"], params["norm.beta"], LN_EPS)
        return ad.mean(ad.reshape(x, (b, -1, x.shape[-1])), axis=1)

    def head(self, features: Tensor) -> Tensor:
        return ad.linear(features, self.params["head.weight"], self.params["head.bias"])

    def forward(self, images, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Logits (B, 2); argmax gives the class (0 real, 1 CGI)."""
        return self.head(self.features(images, training, rng))

    __call__ = forward

    def extract_features(self, images) -> np.ndarray:
        """Pooled pre-head representation, shape (B, feature_dim)."""
        with ad.no_grad():
            return self.features(images).data.copy()

    def predict_logits(self, images) -> np.ndarray:
        with ad.no_grad():
            return self.forward(images).data.copy()
