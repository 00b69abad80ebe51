"""The 1D convolutional classifier and its flat parameter-vector view.

Six conv blocks (kernel sizes 8,8,8,6,6,4; filters 24,32,64,72,96,128), each
conv -> group-norm -> ELU, with overlapping max-pool (size 8, stride 2) after
blocks 2, 4 and 6, dropout 0.15 after the last block, global average pooling,
and a dense layer emitting raw logits. Convolutions are stride 1 with 'same'
padding. Group norm uses 4 groups except the first block, whose group count
follows the input channel count (largest divisor of the filter count when the
channels do not divide it).

Parameters live in one contiguous float64 buffer with named views, which makes
EMA updates, Adam steps and parameter merging plain vector arithmetic. The
layout is a pure function of the architecture, so equal specs always produce
mergeable models.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels

GN_EPS = 1e-5


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    input_channels: int
    input_length: int
    num_classes: int
    kernel_sizes: tuple[int, ...] = (8, 8, 8, 6, 6, 4)
    filters: tuple[int, ...] = (24, 32, 64, 72, 96, 128)
    norm_groups: int = 4
    pool_size: int = 8
    pool_stride: int = 2
    pool_after_blocks: tuple[int, ...] = (2, 4, 6)
    dropout_rate: float = 0.15
    l2_coefficient: float = 1e-4
    width_multiplier: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ArchitectureError("width_multiplier must be in (0, 1]")
        if len(self.kernel_sizes) != len(self.filters):
            raise ArchitectureError("kernel_sizes and filters length mismatch")
        if self.num_classes < 2 or self.input_channels < 1 or self.input_length < 1:
            raise ArchitectureError("bad input dimensions")
        # fail early if pooling underflows the signal length
        self.block_lengths()

    def scaled_filters(self) -> tuple[int, ...]:
        """Filter counts after width scaling, kept divisible by norm groups."""
        g = self.norm_groups
        return tuple(max(g, int(round(f * self.width_multiplier / g)) * g)
                     for f in self.filters)

    def group_counts(self) -> tuple[int, ...]:
        """Per-block group-norm group counts (first block tracks input channels)."""
        filters = self.scaled_filters()
        first = self.input_channels
        if filters[0] % first != 0:
            first = max(d for d in range(1, min(first, filters[0]) + 1)
                        if filters[0] % d == 0)
        return (first,) + (self.norm_groups,) * (len(filters) - 1)

    def block_lengths(self) -> tuple[int, ...]:
        """Signal length entering each block, plus the final pooled length."""
        lengths = [self.input_length]
        length = self.input_length
        for i in range(len(self.filters)):
            if (i + 1) in self.pool_after_blocks:
                if length < self.pool_size:
                    raise ArchitectureError(
                        f"length {length} entering pool after block {i + 1} is "
                        f"shorter than pool size {self.pool_size}")
                length = (length - self.pool_size) // self.pool_stride + 1
            lengths.append(length)
        return tuple(lengths)

    def feature_dim(self) -> int:
        return self.scaled_filters()[-1]

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Canonical (name, shape) parameter order."""
        filters = self.scaled_filters()
        entries = []
        cin = self.input_channels
        for i, (k, f) in enumerate(zip(self.kernel_sizes, filters)):
            entries.append((f"block{i + 1}.conv.w", (f, cin, k)))
            entries.append((f"block{i + 1}.conv.b", (f,)))
            entries.append((f"block{i + 1}.norm.gamma", (f,)))
            entries.append((f"block{i + 1}.norm.beta", (f,)))
            cin = f
        entries.append(("head.dense.w", (self.feature_dim(), self.num_classes)))
        entries.append(("head.dense.b", (self.num_classes,)))
        return tuple(entries)

    def parameter_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "input_length": self.input_length,
            "num_classes": self.num_classes,
            "kernel_sizes": list(self.kernel_sizes),
            "filters": list(self.filters),
            "norm_groups": self.norm_groups,
            "pool_size": self.pool_size,
            "pool_stride": self.pool_stride,
            "pool_after_blocks": list(self.pool_after_blocks),
            "dropout_rate": self.dropout_rate,
            "l2_coefficient": self.l2_coefficient,
            "width_multiplier": self.width_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        d = dict(d)
        for key in ("kernel_sizes", "filters", "pool_after_blocks"):
            if key in d:
                d[key] = tuple(d[key])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class ParameterVector:
    """Named parameter tensors backed by one flat float64 buffer."""

    def __init__(self, layout, data: np.ndarray | None = None):
        self.layout = tuple((name, tuple(shape)) for name, shape in layout)
        total = sum(int(np.prod(s)) for _, s in self.layout)
        if data is None:
            data = np.zeros(total, dtype=np.float64)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64)
            if data.shape != (total,):
                raise ArchitectureError(
                    f"vector length {data.shape} does not match layout size {total}")
        self.data = data
        self.views = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.views[name] = self.data[offset:offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def __len__(self) -> int:
        return self.data.size

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.layout, self.data.copy())

    def same_layout(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout


@dataclass
class ModelState:
    """Parameters plus their EMA shadow, bound to an architecture."""

    arch: ArchitectureSpec
    params: ParameterVector
    ema_params: ParameterVector
    role: str = "seed"  # seed | fine_tuned | merged | baseline

    def active(self, use_ema: bool) -> ParameterVector:
        return self.ema_params if use_ema else self.params

    def clone(self, role: str | None = None) -> "ModelState":
        return ModelState(arch=self.arch, params=self.params.copy(),
                          ema_params=self.ema_params.copy(),
                          role=role or self.role)


def build_model(arch: ArchitectureSpec, init_seed: int) -> ModelState:
    """Deterministic Glorot-uniform init; EMA initialized equal to params."""
    rng = np.random.default_rng(init_seed)
    pv = ParameterVector(arch.layout())
    for name, shape in pv.layout:
        v = pv[name]
        if name.endswith(".conv.w"):
            cout, cin, k = shape
            limit = np.sqrt(6.0 / (cin * k + cout * k))
            v[...] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".dense.w"):
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            v[...] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".gamma"):
            v[...] = 1.0
        # biases and beta stay zero
    return ModelState(arch=arch, params=pv, ema_params=pv.copy(), role="seed")


def flatten(obj) -> np.ndarray:
    """Flat copy of a ParameterVector (or a ModelState's raw params)."""
    pv = obj.params if isinstance(obj, ModelState) else obj
    return pv.data.copy()


def unflatten(vector: np.ndarray, arch: ArchitectureSpec) -> ParameterVector:
    return ParameterVector(arch.layout(), np.asarray(vector, dtype=np.float64))


# ---------------------------------------------------------------------------
# forward / backward

def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    left = (k - 1) // 2
    right = k - 1 - left
    return np.pad(x, ((0, 0), (0, 0), (left, right)))


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _groupnorm_fwd(z, gamma, beta, groups):
    B, c, L = z.shape
    m = (c // groups) * L
    zg = z.reshape(B, groups, m)
    mu = zg.mean(axis=2, keepdims=True)
    var = zg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + GN_EPS)
    xhat = ((zg - mu) * inv).reshape(B, c, L)
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv, groups)


def _groupnorm_bwd(dy, gamma, cache):
    xhat, inv, groups = cache
    B, c, L = dy.shape
    m = (c // groups) * L
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxh = (dy * gamma[None, :, None]).reshape(B, groups, m)
    xh = xhat.reshape(B, groups, m)
    mean_dxh = dxh.mean(axis=2, keepdims=True)
    mean_dxh_xh = (dxh * xh).mean(axis=2, keepdims=True)
    dz = inv * (dxh - mean_dxh - xh * mean_dxh_xh)
    return dz.reshape(B, c, L), dgamma, dbeta


def forward(state: ModelState, X: np.ndarray, use_ema: bool = False,
            train_mode: bool = False, dropout_rng: np.random.Generator | None = None,
            ) -> np.ndarray:
    """Logits for a batch; dropout active only in train_mode."""
    logits, _ = _forward_internal(state.arch, state.active(use_ema),
                                  np.asarray(X, dtype=np.float64),
                                  train_mode, dropout_rng, need_cache=False)
    return logits


def _forward_internal(arch, pv, X, train_mode, dropout_rng, need_cache):
    if X.ndim != 3 or X.shape[1] != arch.input_channels \
            or X.shape[2] != arch.input_length:
        raise ArchitectureError(
            f"input shape {X.shape} does not match architecture "
            f"[B, {arch.input_channels}, {arch.input_length}]")
    groups = arch.group_counts()
    n_blocks = len(arch.kernel_sizes)
    caches = []
    h = X
    for i in range(n_blocks):
        k = arch.kernel_sizes[i]
        xp = _pad_same(h, k)
        z = kernels.conv1d_forward(xp, pv[f"block{i + 1}.conv.w"],
                                   pv[f"block{i + 1}.conv.b"])
        zn, gn_cache = _groupnorm_fwd(z, pv[f"block{i + 1}.norm.gamma"],
                                      pv[f"block{i + 1}.norm.beta"], groups[i])
        a = _elu(zn)
        pool_cache = None
        out = a
        if (i + 1) in arch.pool_after_blocks:
            out, pos = kernels.maxpool_forward(a, arch.pool_size, arch.pool_stride)
            pool_cache = (pos, a.shape[2])
        if need_cache:
            caches.append((xp, gn_cache, a, pool_cache, h.shape[2]))
        h = out

    mask = None
    if train_mode and arch.dropout_rate > 0.0:
        if dropout_rng is None:
            dropout_rng = np.random.default_rng(0)
        keep = 1.0 - arch.dropout_rate
        mask = (dropout_rng.random(h.shape) < keep) / keep
        h = h * mask

    feat = h.mean(axis=2)
    logits = feat @ pv["head.dense.w"] + pv["head.dense.b"]
    cache = (caches, mask, h.shape[2], feat) if need_cache else None
    return logits, cache


def backward(arch, pv, cache, dlogits) -> ParameterVector:
    """Gradients w.r.t. every parameter, as a layout-aligned vector."""
    caches, mask, gap_len, feat = cache
    grads = ParameterVector(arch.layout())
    grads["head.dense.w"][...] = feat.T @ dlogits
    grads["head.dense.b"][...] = dlogits.sum(axis=0)
    dfeat = dlogits @ pv["head.dense.w"].T

    dh = np.repeat(dfeat[:, :, None] / gap_len, gap_len, axis=2)
    if mask is not None:
        dh = dh * mask

    groups = arch.group_counts()
    for i in reversed(range(len(arch.kernel_sizes))):
        xp, gn_cache, a, pool_cache, in_len = caches[i]
        if pool_cache is not None:
            pos, pre_pool_len = pool_cache
            dh = kernels.maxpool_backward(dh, pos, pre_pool_len)
        dh = dh * np.where(a > 0, 1.0, a + 1.0)
        dz, dgamma, dbeta = _groupnorm_bwd(dh, pv[f"block{i + 1}.norm.gamma"],
                                           gn_cache)
        grads[f"block{i + 1}.norm.gamma"][...] = dgamma
        grads[f"block{i + 1}.norm.beta"][...] = dbeta
        dxp, dw, db = kernels.conv1d_backward(dz, xp, pv[f"block{i + 1}.conv.w"])
        grads[f"block{i + 1}.conv.w"][...] = dw
        grads[f"block{i + 1}.conv.b"][...] = db
        k = arch.kernel_sizes[i]
        left = (k - 1) // 2
        dh = dxp[:, :, left:left + in_len]
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(state: ModelState, X: np.ndarray, use_ema: bool = True,
                  batch_size: int = 256) -> np.ndarray:
    """Softmax probabilities in evaluation mode, batched for memory."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], state.arch.num_classes))
    for s in range(0, X.shape[0], batch_size):
        sl = slice(s, min(s + batch_size, X.shape[0]))
        out[sl] = softmax(forward(state, X[sl], use_ema=use_ema))
    return out


# ---------------------------------------------------------------------------
# checkpoints: JSON header + raw little-endian float32 payloads

_MAGIC = b"FHLRCKPT"


def _payload_checksum(arr32: np.ndarray) -> str:
    return hashlib.sha256(arr32.tobytes()).hexdigest()


def save_checkpoint(state: ModelState, path: str, provenance: dict | None = None,
                    ) -> dict:
    params32 = state.params.data.astype("<f4")
    ema32 = state.ema_params.data.astype("<f4")
    header = {
        "arch": state.arch.to_dict(),
        "layout": [[name, list(shape)] for name, shape in state.params.layout],
        "role": state.role,
        "params_sha256": _payload_checksum(params32),
        "ema_sha256": _payload_checksum(ema32),
    }
    if provenance:
        header["provenance"] = provenance
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params32.tobytes())
        fh.write(ema32.tobytes())
    return header


def load_checkpoint(path: str) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ArchitectureError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arch = ArchitectureSpec.from_dict(header["arch"])
        n = arch.parameter_count()
        params = np.frombuffer(fh.read(n * 4), dtype="<f4").astype(np.float64)
        ema = np.frombuffer(fh.read(n * 4), dtype="<f4").astype(np.float64)
    layout = arch.layout()
    stored = tuple((name, tuple(shape)) for name, shape in header["layout"])
    if stored != layout:
        raise ArchitectureError(f"{path}: layout does not match architecture")
    return ModelState(arch=arch, params=ParameterVector(layout, params),
                      ema_params=ParameterVector(layout, ema),
                      role=header.get("role", "seed"))
