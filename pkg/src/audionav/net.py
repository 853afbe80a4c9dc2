"""Policy/value MLP in plain numpy with hand-written backpropagation.

Architecture: obs -> 256 ReLU -> 256 ReLU, then a tanh action-mean head
(2 units) and a linear value head (1 unit). The Gaussian policy has a
state-independent log standard deviation. All math runs in float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, TrainingError, UsageError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_pi", "b_pi", "W_v", "b_v", "log_std")
LOG_2PI = math.log(2 * math.pi)


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_pi: np.ndarray
    b_pi: np.ndarray
    W_v: np.ndarray
    b_v: np.ndarray
    log_std: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "MlpParams":
        return MlpParams(**{name: arr.copy() for name, arr in self.items()})

    def zeros_like(self) -> "MlpParams":
        return MlpParams(**{name: np.zeros_like(arr) for name, arr in self.items()})

    @property
    def obs_dim(self) -> int:
        return self.W1.shape[0]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self.items()}


@dataclass
class ForwardCache:
    batch_size: int
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    mean: np.ndarray


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0

    @classmethod
    def fresh(cls, params: MlpParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init(seed: int, obs_dim: int = 2048, hidden: int = 256, n_actions: int = 2) -> MlpParams:
    rng = np.random.default_rng(seed)
    return MlpParams(
        W1=_glorot(rng, obs_dim, hidden), b1=np.zeros(hidden),
        W2=_glorot(rng, hidden, hidden), b2=np.zeros(hidden),
        W_pi=_glorot(rng, hidden, n_actions), b_pi=np.zeros(n_actions),
        W_v=_glorot(rng, hidden, 1), b_v=np.zeros(1),
        log_std=np.zeros(n_actions),
    )


class InvalidShapeError(UsageError, ValueError):
    pass


def _as_batch(params: MlpParams, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.obs_dim:
        raise InvalidShapeError(f"expected observations of length {params.obs_dim}, got shape {np.shape(obs)}")
    return x


def forward(params: MlpParams, obs) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Return (action_mean [k,2], value [k], cache) for a batch of observations."""
    x = _as_batch(params, obs)
    z1 = x @ params.W1 + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(z2, 0.0)
    mean = np.tanh(h2 @ params.W_pi + params.b_pi)
    value = (h2 @ params.W_v + params.b_v)[:, 0]
    return mean, value, ForwardCache(x.shape[0], z1, h1, z2, h2, mean)


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over action dimensions."""
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))


def sample_action(mean, log_std, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw unclamped actions and their log-probabilities."""
    mean = np.asarray(mean, dtype=np.float64)
    action = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return action, gaussian_log_prob(action, mean, log_std)


def backward(params: MlpParams, cache: ForwardCache, obs, d_mean, d_value, d_log_std=None) -> MlpParams:
    """Gradients of a scalar loss given its derivatives w.r.t. the network outputs.

    d_mean: dL/d(action_mean) [k,2]; d_value: dL/d(value) [k];
    d_log_std: direct dL/d(log_std) [2] (the log-std does not pass through the trunk).
    """
    x = _as_batch(params, obs)
    d_mean = np.asarray(d_mean, dtype=np.float64)
    d_value = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
    k = cache.batch_size
    if x.shape[0] != k or cache.z1.shape != (k, params.W1.shape[1]) or d_mean.shape != cache.mean.shape \
            or d_value.shape[0] != k:
        raise UsageError("forward cache does not match the observation batch or upstream gradients")

    d_zpi = d_mean * (1.0 - cache.mean ** 2)
    g_W_pi = cache.h2.T @ d_zpi
    g_b_pi = d_zpi.sum(axis=0)
    g_W_v = cache.h2.T @ d_value
    g_b_v = d_value.sum(axis=0)
    d_h2 = d_zpi @ params.W_pi.T + d_value @ params.W_v.T
    d_z2 = d_h2 * (cache.z2 > 0)
    g_W2 = cache.h1.T @ d_z2
    g_b2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ params.W2.T) * (cache.z1 > 0)
    g_W1 = x.T @ d_z1
    g_b1 = d_z1.sum(axis=0)
    g_log_std = np.zeros_like(params.log_std) if d_log_std is None else np.asarray(d_log_std, dtype=np.float64).copy()
    return MlpParams(g_W1, g_b1, g_W2, g_b2, g_W_pi, g_b_pi, g_W_v, g_b_v, g_log_std)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> MlpParams:
    """One bias-corrected Adam update. Returns new params; updates `state` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}", {"field": name})
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    new = {}
    for name, p in params.items():
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        new[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return MlpParams(**new)


# --- checkpoints --------------------------------------------------------------
#
# Layout (all little-endian):
#   magic   8 bytes  b"AUDNAVCK"
#   version u32
#   meta    u32 length + UTF-8 JSON (free-form metadata)
#   count   u32 number of arrays
#   per array: u16 name length, name bytes, u8 ndim, ndim x u32 dims
#   payload: float64 values of every array, in header order, C order

MAGIC = b"AUDNAVCK"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = bytearray(MAGIC)
    header += struct.pack("<I", FORMAT_VERSION)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    header += struct.pack("<I", len(meta_bytes)) + meta_bytes
    header += struct.pack("<I", len(arrays))
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode()
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload.append(np.ascontiguousarray(arr).tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(header) + b"".join(payload))
    tmp.replace(path)


def read_header(path) -> tuple[dict, dict[str, tuple[int, ...]], int]:
    """Return (meta, {name: shape}, payload offset) without reading the payload."""
    raw = Path(path).read_bytes()
    return _parse_header(raw)


def _parse_header(raw: bytes):
    def need(pos, n, what):
        if pos + n > len(raw):
            raise FormatError(what, "file truncated")

    need(0, 16, "magic")
    if raw[:8] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {raw[:8]!r}")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != FORMAT_VERSION:
        raise FormatError("version", f"expected {FORMAT_VERSION}, got {version}")
    (meta_len,) = struct.unpack_from("<I", raw, 12)
    need(16, meta_len + 4, "meta")
    try:
        meta = json.loads(raw[16:16 + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("meta", str(exc)) from None
    pos = 16 + meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    shapes = {}
    for _ in range(count):
        need(pos, 2, "array name")
        (n,) = struct.unpack_from("<H", raw, pos)
        need(pos + 2, n + 1, "array name")
        name = raw[pos + 2:pos + 2 + n].decode()
        ndim = raw[pos + 2 + n]
        pos += 3 + n
        need(pos, 4 * ndim, f"shape of {name}")
        shapes[name] = tuple(struct.unpack_from(f"<{ndim}I", raw, pos))
        pos += 4 * ndim
    return meta, shapes, pos


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    meta, shapes, pos = _parse_header(raw)
    expected = pos + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != expected:
        raise FormatError("payload", f"expected {expected} bytes in file, found {len(raw)}")
    arrays = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    return meta, arrays


def save_params(params: MlpParams, path, meta: dict | None = None) -> None:
    save_arrays(path, dict(params.items()), {"kind": "mlp_params", **(meta or {})})


def params_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "",
                       expected_shapes: dict[str, tuple[int, ...]] | None = None) -> MlpParams:
    values = {}
    for name in PARAM_NAMES:
        key = prefix + name
        if key not in arrays:
            raise FormatError(key, "missing from checkpoint")
        values[name] = arrays[key]
    params = MlpParams(**values)
    shapes = params.shapes()
    hidden = shapes["W1"][1]
    consistent = (shapes["b1"] == (hidden,) and shapes["W2"] == (hidden, hidden) and shapes["b2"] == (hidden,)
                  and shapes["W_pi"][0] == hidden and shapes["b_pi"] == (shapes["W_pi"][1],)
                  and shapes["W_v"] == (hidden, 1) and shapes["b_v"] == (1,)
                  and shapes["log_std"] == (shapes["W_pi"][1],))
    if not consistent:
        raise FormatError("shape table", f"inconsistent parameter shapes {shapes}")
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if shapes[name] != tuple(shape):
                raise FormatError(name, f"expected shape {tuple(shape)}, checkpoint has {shapes[name]}")
    return params


def load_params(path, expected_obs_dim: int | None = None) -> MlpParams:
    meta, arrays = load_arrays(path)
    params = params_from_arrays(arrays)
    if expected_obs_dim is not None and params.obs_dim != expected_obs_dim:
        raise FormatError("W1", f"checkpoint expects {params.obs_dim}-sample observations, "
                          f"environment produces {expected_obs_dim}")
    return params
