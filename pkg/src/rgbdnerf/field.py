"""Single small radiance-field MLP with hand-written forward/backward passes.

Architecture: a ReLU trunk on the encoded position, a softplus density head
on the trunk features, and a sigmoid color head on trunk features
concatenated with the encoded view direction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NRDF"
FORMAT_VERSION = 1
DEFAULT_TRUNK = (128, 128, 128, 128)


@dataclass(frozen=True)
class EncodingConfig:
    L_pos: int = 6
    L_dir: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.L_pos < 0 or self.L_dir < 0:
            raise ValueError("frequency counts must be >= 0")

    def dim(self, d: int, L: int) -> int:
        return d * (int(self.include_input) + 2 * L)

    @property
    def pos_dim(self) -> int:
        return self.dim(3, self.L_pos)

    @property
    def dir_dim(self) -> int:
        return self.dim(3, self.L_dir)


def positional_encode(v, L: int, include_input: bool = True) -> np.ndarray:
    """[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)].

    Higher octaves come from double-angle recurrences, which costs one
    sin/cos evaluation in total.
    """
    v = np.asarray(v)
    parts = [v] if include_input else []
    if L > 0:
        s = np.sin(np.pi * v)
        c = np.cos(np.pi * v)
        for k in range(L):
            parts += [s, c]
            if k + 1 < L:
                s, c = 2 * s * c, (c - s) * (c + s)
    if not parts:
        return np.zeros(v.shape[:-1] + (0,), dtype=v.dtype)
    return np.concatenate(parts, axis=-1)


@dataclass
class FieldParams:
    """Weights stored as one ordered list.

    Order: trunk (W, b) pairs, then density head (W, b), then color head
    (W, b). Weight matrices are (fan_in, fan_out).
    """

    trunk: tuple
    encoding: EncodingConfig
    arrays: list = field(default_factory=list)

    def __post_init__(self):
        self.trunk = tuple(int(w) for w in self.trunk)
        expected = self.shapes(self.trunk, self.encoding)
        if len(self.arrays) != len(expected):
            raise ValueError(f"expected {len(expected)} arrays, got {len(self.arrays)}")
        for a, s in zip(self.arrays, expected):
            if a.shape != s:
                raise ValueError(f"parameter shape {a.shape} does not match architecture {s}")

    @staticmethod
    def shapes(trunk, encoding: EncodingConfig):
        shapes = []
        fan_in = encoding.pos_dim
        for width in trunk:
            shapes += [(fan_in, width), (width,)]
            fan_in = width
        shapes += [(fan_in, 1), (1,)]
        shapes += [(fan_in + encoding.dir_dim, 3), (3,)]
        return shapes

    @property
    def dtype(self):
        return self.arrays[0].dtype

    @property
    def n_trunk(self) -> int:
        return len(self.trunk)

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays)

    def copy(self) -> "FieldParams":
        return FieldParams(self.trunk, self.encoding, [a.copy() for a in self.arrays])

    def astype(self, dtype) -> "FieldParams":
        return FieldParams(self.trunk, self.encoding, [a.astype(dtype) for a in self.arrays])

    def zeros_like(self) -> list:
        return [np.zeros_like(a) for a in self.arrays]


def field_init(trunk=DEFAULT_TRUNK, encoding: EncodingConfig | None = None, seed=0, dtype=np.float32) -> FieldParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    encoding = encoding or EncodingConfig()
    rng = np.random.default_rng(seed)
    arrays = []
    for shape in FieldParams.shapes(trunk, encoding):
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays.append(rng.uniform(-limit, limit, size=shape).astype(dtype))
        else:
            arrays.append(np.zeros(shape, dtype=dtype))
    return FieldParams(trunk, encoding, arrays)


@dataclass
class FieldOutput:
    density: np.ndarray
    rgb: np.ndarray


@dataclass
class ActivationCache:
    x_enc: np.ndarray
    d_enc: np.ndarray
    group: int
    hidden: list
    density_pre: np.ndarray
    rgb: np.ndarray


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def _softplus(x):
    return np.logaddexp(0, x)


def field_forward(params: FieldParams, positions, viewdirs):
    """Evaluate density and color for N samples.

    ``positions`` is (N, 3) with one view direction per sample, or
    (B, n, 3) with ``viewdirs`` (B, 3) shared by the n samples of each ray.

    Returns ``(FieldOutput, ActivationCache)``; density has shape (N,) and
    rgb (N, 3) with N = B * n in the per-ray form.
    """
    dtype = params.dtype
    positions = np.asarray(positions, dtype=dtype)
    viewdirs = np.asarray(viewdirs, dtype=dtype)
    group = 1
    if positions.ndim == 3:
        group = positions.shape[1]
        if viewdirs.shape != (positions.shape[0], 3):
            raise ValueError("per-ray view directions must have shape (B, 3)")
        positions = positions.reshape(-1, 3)
    elif viewdirs.shape != positions.shape:
        raise ValueError(f"positions {positions.shape} and viewdirs {viewdirs.shape} disagree")
    if not (np.isfinite(positions).all() and np.isfinite(viewdirs).all()):
        raise ValueError("non-finite field input")
    if viewdirs.size and np.abs(np.linalg.norm(viewdirs, axis=-1) - 1).max() > 1e-4:
        raise ValueError("view directions must be unit length")
    enc = params.encoding
    a = params.arrays
    x_enc = positional_encode(positions, enc.L_pos, enc.include_input)
    d_enc = positional_encode(viewdirs, enc.L_dir, enc.include_input)

    h = x_enc
    hidden = []
    for k in range(params.n_trunk):
        h = h @ a[2 * k]
        h += a[2 * k + 1]
        np.maximum(h, 0, out=h)
        hidden.append(h)

    i = 2 * params.n_trunk
    width = h.shape[1]
    w_color = a[i + 2]
    # both heads read the trunk features; one (width, 4) product serves them
    heads = h @ np.concatenate([a[i], w_color[:width]], axis=1)
    density_pre = heads[:, 0] + a[i + 1][0]
    rgb_pre = heads[:, 1:]
    dir_term = d_enc @ w_color[width:] + a[i + 3]
    if group > 1:
        rgb_pre = rgb_pre.reshape(-1, group, 3)
        rgb_pre += dir_term[:, None, :]
        rgb_pre = rgb_pre.reshape(-1, 3)
    else:
        rgb_pre += dir_term
    rgb = _sigmoid(rgb_pre)
    out = FieldOutput(_softplus(density_pre), rgb)
    return out, ActivationCache(x_enc, d_enc, group, hidden, density_pre, rgb)


def field_backward(params: FieldParams, cache: ActivationCache, d_density, d_rgb, grads=None) -> list:
    """Reverse-mode gradients of sum(d_density*density) + sum(d_rgb*rgb).

    If ``grads`` is given the result is accumulated into it in place.
    """
    n = cache.density_pre.shape[0]
    dtype = params.dtype
    d_density = np.asarray(d_density, dtype=dtype)
    d_rgb = np.asarray(d_rgb, dtype=dtype)
    if d_density.shape != (n,) or d_rgb.shape != (n, 3):
        raise ValueError(f"gradient shapes {d_density.shape}, {d_rgb.shape} do not match batch of {n}")
    a = params.arrays
    g = [None] * len(a)

    rgb = cache.rgb
    d_heads = np.empty((n, 4), dtype=dtype)
    # softplus' = sigmoid
    d_heads[:, 0] = d_density * _sigmoid(cache.density_pre)
    d_heads[:, 1:] = d_rgb * rgb * (1 - rgb)
    d_sc = d_heads[:, 1:]

    i = 2 * params.n_trunk
    h = cache.hidden[-1]
    width = h.shape[1]
    g_heads = h.T @ d_heads
    g[i] = g_heads[:, :1]
    g[i + 1] = d_heads[:, :1].sum(axis=0)
    d_sc_dir = d_sc if cache.group == 1 else d_sc.reshape(-1, cache.group, 3).sum(axis=1)
    g[i + 2] = np.concatenate([g_heads[:, 1:], cache.d_enc.T @ d_sc_dir], axis=0)
    g[i + 3] = d_sc.sum(axis=0)

    dh = d_heads @ np.concatenate([a[i], a[i + 2][:width]], axis=1).T
    for k in reversed(range(params.n_trunk)):
        dz = dh
        dz *= cache.hidden[k] > 0
        prev = cache.hidden[k - 1] if k > 0 else cache.x_enc
        g[2 * k] = prev.T @ dz
        g[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ a[2 * k].T

    if grads is None:
        return g
    for acc, x in zip(grads, g):
        acc += x
    return grads


# ---------------------------------------------------------------------------
# checkpoint format: "NRDF", u32 version, u32 descriptor, f32 params (all LE)


def save_checkpoint(path, params: FieldParams) -> None:
    enc = params.encoding
    desc = [len(params.trunk), *params.trunk, enc.L_pos, enc.L_dir, int(enc.include_input)]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack(f"<{len(desc)}I", *desc))
        for a in params.arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> FieldParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a field checkpoint (expected magic 'NRDF', got {data[:4]!r})")
    off = 4

    def u32():
        nonlocal off
        if off + 4 > len(data):
            raise ValueError(f"{path}: truncated checkpoint header")
        (v,) = struct.unpack_from("<I", data, off)
        off += 4
        return v

    version = u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    n_trunk = u32()
    if n_trunk > 1024:
        raise ValueError(f"{path}: implausible trunk depth {n_trunk}")
    trunk = tuple(u32() for _ in range(n_trunk))
    encoding = EncodingConfig(u32(), u32(), bool(u32()))
    arrays = []
    for shape in FieldParams.shapes(trunk, encoding):
        count = int(np.prod(shape))
        if off + 4 * count > len(data):
            raise ValueError(f"{path}: truncated parameter data")
        arrays.append(np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(shape))
        off += 4 * count
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after parameters")
    return FieldParams(trunk, encoding, arrays)
