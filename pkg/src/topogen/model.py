"""Bottlenecked diffusion-transformer denoiser over voxelized point clouds.

Flow per forward pass: voxelize the noisy cloud, patchify, project patches to
the hidden width and add a 3D sincos position code, compress the token
sequence through a cross-attention resampler whose keys/values also include
two topology tokens (one per persistence image), run the compressed latents
through timestep-conditioned transformer blocks, expand back to patch count
with a second resampler, project to patch payloads, unpatchify, and read the
predicted noise off the voxel field at the input point positions.

The resampler layer is deliberately bare: l = MHCA(k, v, q) + q followed by
q' = FFN(l) + l, no normalization inside. Trunk blocks use adaLN-zero
conditioning, so at initialization every block is the identity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import BadInputError, InvariantError, ShapeError
from .geometry import (ALLOWED_RESOLUTIONS, PointCloud, devox_stencil, patchify,
                       unpatchify_permutation, voxelize)
from .pimage import PersistenceImage
from .rng import make_rng
from . import tensor as T
from .tensor import ParamStore, Tensor

# size presets: hidden width, trunk depth, attention heads
SIZE_PRESETS = {
    "S": (384, 12, 6),
    "B": (768, 12, 12),
    "L": (1024, 24, 16),
    "XL": (1152, 28, 16),
}


@dataclass(frozen=True)
class ModelConfig:
    V: int = 32
    p: int = 4
    d: int = 1152
    n_heads: int = 16
    dit_depth: int = 28
    resampler_depth: int = 6
    M_down: int = 96
    pi_n: int = 16
    T: int = 1000
    upsample_posembed: bool = True

    def __post_init__(self):
        if self.V not in ALLOWED_RESOLUTIONS:
            raise BadInputError(f"V={self.V} not in {ALLOWED_RESOLUTIONS}")
        if self.p < 1 or self.V % self.p:
            raise BadInputError(f"p={self.p} must divide V={self.V}")
        if self.d % self.n_heads:
            raise BadInputError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        for name in ("d", "n_heads", "dit_depth", "resampler_depth", "M_down",
                     "pi_n", "T"):
            if getattr(self, name) < 1:
                raise BadInputError(f"{name} must be >= 1")

    @property
    def L(self) -> int:
        return (self.V // self.p) ** 3

    @property
    def patch_payload(self) -> int:
        return 3 * self.p ** 3

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in SIZE_PRESETS:
            raise BadInputError(f"unknown size preset {name!r}; "
                                f"choose from {sorted(SIZE_PRESETS)}")
        d, depth, heads = SIZE_PRESETS[name]
        return cls(d=d, dit_depth=depth, n_heads=heads, **overrides)


_CONFIG_KEYS = {f.name for f in fields(ModelConfig)}
_BOOL_KEYS = {"upsample_posembed"}


def save_config(path: str | Path, config: ModelConfig) -> None:
    with open(path, "w") as fh:
        for f in fields(ModelConfig):
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")


def load_config(path: str | Path) -> ModelConfig:
    """key = value lines, `#` comments; unknown keys are an error."""
    kwargs = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"(\w+)\s*=\s*(\S+)", line)
        if not m:
            raise BadInputError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, val = m.group(1), m.group(2)
        if key not in _CONFIG_KEYS:
            raise BadInputError(f"{path}:{ln}: unknown config key {key!r}")
        kwargs[key] = (val == "True") if key in _BOOL_KEYS else int(val)
    return ModelConfig(**kwargs)


@dataclass
class TopologyTokens:
    """One token per persistence image, stacked as a (2, d) tensor."""

    tokens: Tensor

    def __post_init__(self):
        if self.tokens.shape[0] != 2 or self.tokens.data.ndim != 2:
            raise ShapeError(f"topology tokens must be (2, d), got "
                             f"{self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens.data)):
            raise InvariantError("topology tokens contain non-finite values")


# ---------------------------------------------------------------------------
# deterministic embedding tables

def sincos_posembed_3d(grid_side: int, d: int) -> np.ndarray:
    """(grid_side^3, d) table: per-axis sinusoids over lattice coordinates,
    concatenated then truncated to d. Rounding policy: each axis gets an even
    channel count >= d/3, surplus channels are dropped from the tail."""
    per_axis = -(-d // 3)            # ceil
    per_axis += per_axis % 2         # even: half sin, half cos
    half = per_axis // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    g = grid_side
    coords = np.stack(np.meshgrid(np.arange(g), np.arange(g), np.arange(g),
                                  indexing="ij"), axis=-1).reshape(-1, 3)
    parts = []
    for ax in range(3):
        ang = coords[:, ax:ax + 1] * freqs[None, :]
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    return np.concatenate(parts, axis=1)[:, :d]


def timestep_features(t: int, d: int, T: int) -> np.ndarray:
    """Sinusoidal features of the integer timestep, length d."""
    if not 1 <= t <= T:
        raise BadInputError(f"t={t} outside [1, {T}]")
    half = (d + 1) // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])[:d]


# ---------------------------------------------------------------------------
# parameter construction

def _linear_params(store: ParamStore, rng, name: str, n_in: int, n_out: int,
                   zero: bool = False) -> None:
    if zero:
        store.add(f"{name}.w", np.zeros((n_in, n_out)))
        store.add(f"{name}.b", np.zeros(n_out))
    else:
        store.add(f"{name}.w", rng.normal(0.0, 0.02, size=(n_in, n_out)))
        store.add(f"{name}.b", np.zeros(n_out))


def _attn_params(store: ParamStore, rng, prefix: str, d: int) -> None:
    for nm in ("wq", "wk", "wv", "wo"):
        _linear_params(store, rng, f"{prefix}.{nm}", d, d)


def _ffn_params(store: ParamStore, rng, prefix: str, d: int) -> None:
    _linear_params(store, rng, f"{prefix}.fc1", d, 4 * d)
    _linear_params(store, rng, f"{prefix}.fc2", 4 * d, d)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    rng = make_rng(seed, "model-init")
    store = ParamStore()
    d = config.d
    n2 = config.pi_n ** 2

    _linear_params(store, rng, "patch_proj", config.patch_payload, d)
    for slot in (1, 2):
        store.add(f"topo{slot}.ln.g", np.ones(n2))
        store.add(f"topo{slot}.ln.b", np.zeros(n2))
        _linear_params(store, rng, f"topo{slot}.fc1", n2, d)
        _linear_params(store, rng, f"topo{slot}.fc2", d, d)
    _linear_params(store, rng, "tmlp.fc1", d, d)
    _linear_params(store, rng, "tmlp.fc2", d, d)

    store.add("res_down.q", rng.normal(0.0, 0.02, size=(config.M_down, d)))
    store.add("res_up.q", rng.normal(0.0, 0.02, size=(config.L, d)))
    for side in ("res_down", "res_up"):
        for i in range(config.resampler_depth):
            _attn_params(store, rng, f"{side}.{i}.attn", d)
            _ffn_params(store, rng, f"{side}.{i}.ffn", d)

    for i in range(config.dit_depth):
        _attn_params(store, rng, f"dit.{i}.attn", d)
        _ffn_params(store, rng, f"dit.{i}.ffn", d)
        _linear_params(store, rng, f"dit.{i}.mod", d, 6 * d, zero=True)

    _linear_params(store, rng, "out_proj", d, config.patch_payload)
    return store


def _lin(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return T.linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


# ---------------------------------------------------------------------------
# building blocks

def mhca(params: ParamStore, prefix: str, q: Tensor, kv: Tensor,
         n_heads: int) -> Tensor:
    """Multi-head cross-attention, queries (M, d) against keys/values (K, d)."""
    m, d = q.shape
    k_len = kv.shape[0]
    if kv.shape[1] != d:
        raise ShapeError(f"mhca: query width {d} vs kv width {kv.shape[1]}")
    dh = d // n_heads

    def heads(x, length):
        return T.transpose(T.reshape(x, (length, n_heads, dh)), (1, 0, 2))

    qh = heads(_lin(params, f"{prefix}.wq", q), m)
    kh = heads(_lin(params, f"{prefix}.wk", kv), k_len)
    vh = heads(_lin(params, f"{prefix}.wv", kv), k_len)
    scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    att = T.softmax(scores, axis=-1)
    out = T.matmul(att, vh)                                   # (h, M, dh)
    out = T.reshape(T.transpose(out, (1, 0, 2)), (m, d))
    return _lin(params, f"{prefix}.wo", out)


def _ffn(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return _lin(params, f"{prefix}.fc2", T.gelu(_lin(params, f"{prefix}.fc1", x)))


def perceiver_resampler(params: ParamStore, prefix: str, queries: Tensor,
                        kv: Tensor, depth: int, n_heads: int) -> Tensor:
    """depth x (cross-attend then feed-forward, both residual)."""
    if depth < 1:
        raise BadInputError(f"resampler depth must be >= 1, got {depth}")
    q = queries
    for i in range(depth):
        l = T.add(mhca(params, f"{prefix}.{i}.attn", q, kv, n_heads), q)
        q = T.add(_ffn(params, f"{prefix}.{i}.ffn", l), l)
    return q


def topology_tokens(params: ParamStore, config: ModelConfig,
                    pi1, pi2) -> TopologyTokens:
    """Flatten each image, LayerNorm, project to width d through a GELU MLP.

    Slots keep independent weights; resolution must match the config.
    """
    toks = []
    for slot, img in ((1, pi1), (2, pi2)):
        if isinstance(img, Tensor):
            px = img          # pre-built node, lets callers differentiate pixels
        else:
            px = T.constant(img.pixels if isinstance(img, PersistenceImage)
                            else np.asarray(img))
        if px.shape != (config.pi_n, config.pi_n):
            raise BadInputError(f"persistence image {slot} is {px.shape}, "
                                f"config expects ({config.pi_n}, {config.pi_n})")
        flat = T.reshape(px, (1, config.pi_n ** 2))
        h = T.layer_norm(flat, params[f"topo{slot}.ln.g"], params[f"topo{slot}.ln.b"])
        h = T.gelu(_lin(params, f"topo{slot}.fc1", h))
        toks.append(_lin(params, f"topo{slot}.fc2", h))
    return TopologyTokens(tokens=T.concat(toks, axis=0))


def timestep_embedding(params: ParamStore, config: ModelConfig, t: int) -> Tensor:
    feats = T.constant(timestep_features(t, config.d, config.T).reshape(1, -1))
    h = T.gelu(_lin(params, "tmlp.fc1", feats))
    return T.reshape(_lin(params, "tmlp.fc2", h), (config.d,))


def downsample(params: ParamStore, config: ModelConfig, patch_tokens: Tensor,
               topo: TopologyTokens) -> Tensor:
    kv = T.concat([patch_tokens, topo.tokens], axis=0)
    if kv.shape[0] != patch_tokens.shape[0] + 2:
        raise InvariantError(f"downsampler kv length {kv.shape[0]} != L+2")
    return perceiver_resampler(params, "res_down", params["res_down.q"], kv,
                               config.resampler_depth, config.n_heads)


def upsample(params: ParamStore, config: ModelConfig, latents: Tensor) -> Tensor:
    q = params["res_up.q"]
    if config.upsample_posembed:
        side = config.V // config.p
        q = T.add(q, T.constant(sincos_posembed_3d(side, config.d)))
    return perceiver_resampler(params, "res_up", q, latents,
                               config.resampler_depth, config.n_heads)


def dit_block(params: ParamStore, prefix: str, x: Tensor, t_cond: Tensor,
              n_heads: int) -> Tensor:
    """adaLN-zero transformer block: gates start at zero, block starts as
    the identity."""
    d = x.shape[-1]
    mod = _lin(params, f"{prefix}.mod", T.reshape(t_cond, (1, d)))
    chunks = T.split(T.reshape(mod, (6 * d,)), 0, [d] * 6)
    shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = chunks

    h = T.layer_norm(x)
    h = T.add(T.mul(h, T.add(scale_a, T.constant(np.ones(d)))), shift_a)
    x = T.add(x, T.mul(mhca(params, f"{prefix}.attn", h, h, n_heads), gate_a))

    h = T.layer_norm(x)
    h = T.add(T.mul(h, T.add(scale_m, T.constant(np.ones(d)))), shift_m)
    x = T.add(x, T.mul(_ffn(params, f"{prefix}.ffn", h), gate_m))
    return x


# ---------------------------------------------------------------------------
# full forward pass

def forward(params: ParamStore, config: ModelConfig, x_t: np.ndarray, t: int,
            pi1, pi2, ledger_out: dict | None = None) -> Tensor:
    """Predict the noise component of x_t. Returns an (N, 3) tensor wired to
    every parameter; x_t itself is treated as a constant input."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 2 or x_t.shape[1] != 3:
        raise ShapeError(f"x_t must be (N, 3), got {x_t.shape}")

    grid = voxelize(PointCloud(x_t), config.V)
    toks_np = patchify(grid, config.p).tokens
    if toks_np.shape != (config.L, config.patch_payload):
        raise InvariantError(f"patchify produced {toks_np.shape}, expected "
                             f"({config.L}, {config.patch_payload})")

    side = config.V // config.p
    tokens = T.add(_lin(params, "patch_proj", T.constant(toks_np)),
                   T.constant(sincos_posembed_3d(side, config.d)))

    topo = topology_tokens(params, config, pi1, pi2)
    kv_len = tokens.shape[0] + topo.tokens.shape[0]
    latents = downsample(params, config, tokens, topo)
    if latents.shape[0] != config.M_down:
        raise InvariantError(f"trunk width {latents.shape[0]} != M_down "
                             f"{config.M_down}")

    t_cond = timestep_embedding(params, config, t)
    for i in range(config.dit_depth):
        latents = dit_block(params, f"dit.{i}", latents, t_cond, config.n_heads)

    expanded = upsample(params, config, latents)
    if expanded.shape[0] != config.L:
        raise InvariantError(f"upsampler emitted {expanded.shape[0]} tokens, "
                             f"expected L={config.L}")

    payload = _lin(params, "out_proj", expanded)              # (L, 3p^3)
    perm = unpatchify_permutation(config.V, config.p)
    field = T.reshape(T.gather_rows(T.reshape(payload, (-1,)), perm),
                      (config.V ** 3, 3))

    idx, w = devox_stencil(x_t, config.V)                     # (N, 8) each
    gathered = T.gather_rows(field, idx)                      # (N, 8, 3)
    weighted = T.mul(gathered, T.constant(np.repeat(w[:, :, None], 3, axis=2)))
    eps = T.sum_axis(weighted, 1)

    if ledger_out is not None:
        ledger_out.update(patch_tokens=tokens.shape[0], kv=kv_len,
                          trunk=latents.shape[0], upsampled=expanded.shape[0])
    return eps
