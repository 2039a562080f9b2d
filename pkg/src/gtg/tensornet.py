"""Dense float64 numerics with hand-written backward passes.

Every layer here is a pair of functions: a forward that returns the output and
a cache, and a backward that consumes the cache and an upstream gradient. All
arrays are ``numpy.float64``; reductions run in a fixed order so repeated calls
are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.uniform(-limit, limit, size=shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(pre: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (pre > 0)


# --------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    """Affine layers with ReLU between them; identity output unless ``final_relu``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    final_relu: bool = False

    @classmethod
    def init(
        cls, rng: np.random.Generator, sizes: Sequence[int], final_relu: bool = False
    ) -> "MlpParams":
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        weights = [glorot_uniform(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(weights, biases, final_relu)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def mlp_forward(params: MlpParams, x: np.ndarray):
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(
            f"MLP expects input dim {params.weights[0].shape[0]}, got {x.shape[-1]}"
        )
    inputs, pres = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        pre = h @ w + b
        pres.append(pre)
        h = relu(pre) if (i < last or params.final_relu) else pre
    return h, (inputs, pres)


def mlp_backward(params: MlpParams, cache, dy: np.ndarray, prefix: str = "mlp"):
    """Returns ``(dx, grads)`` with ``grads`` keyed like :meth:`MlpParams.named`."""
    inputs, pres = cache
    grads = {}
    last = len(params.weights) - 1
    g = dy
    for i in range(last, -1, -1):
        if i < last or params.final_relu:
            g = relu_backward(pres[i], g)
        x = inputs[i]
        x2 = x.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads[f"{prefix}.{i}.weight"] = x2.T @ g2
        grads[f"{prefix}.{i}.bias"] = g2.sum(axis=0)
        g = g @ params.weights[i].T
    return g, grads


# --------------------------------------------------------------------------
# pooling and softmax


def maxpool_nodes(features: np.ndarray):
    """Feature-wise max over the node axis (second to last).

    Returns ``(pooled, argmax)``; ties resolve to the lowest node index.
    """
    if features.shape[-2] == 0:
        raise ValueError("max-pooling needs at least one node")
    idx = np.argmax(features, axis=-2)
    pooled = np.take_along_axis(features, idx[..., None, :], axis=-2)[..., 0, :]
    return pooled, idx


def maxpool_nodes_backward(idx: np.ndarray, n_nodes: int, dy: np.ndarray) -> np.ndarray:
    shape = dy.shape[:-1] + (n_nodes, dy.shape[-1])
    dx = np.zeros(shape)
    np.put_along_axis(dx, idx[..., None, :], dy[..., None, :], axis=-2)
    return dx


def _check_finite(logits: np.ndarray) -> None:
    if np.isnan(logits).any():
        raise ValueError("NaN in logits")


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=DTYPE)
    _check_finite(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=DTYPE)
    _check_finite(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# --------------------------------------------------------------------------
# 3x3 convolution, zero padding 1, stride 1
#
# Layout is (batch, x, y, channel) to match GridObservation. Kernel tap
# K[i, j] multiplies the input at offset (i - 1, j - 1).


def _patches(x: np.ndarray) -> np.ndarray:
    b, w, h, c = x.shape
    padded = np.zeros((b, w + 2, h + 2, c))
    padded[:, 1:-1, 1:-1] = x
    cols = np.empty((b, w, h, 3, 3, c))
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j] = padded[:, i : i + w, j : j + h]
    return cols


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None):
    if x.ndim != 4 or kernel.shape[:2] != (3, 3) or kernel.shape[2] != x.shape[-1]:
        raise ValueError(f"shape mismatch: input {x.shape}, kernel {kernel.shape}")
    b, w, h, c = x.shape
    cols = _patches(x)
    out = cols.reshape(b * w * h, 9 * c) @ kernel.reshape(9 * c, -1)
    if bias is not None:
        out = out + bias
    return out.reshape(b, w, h, -1), cols


def conv2d_backward(cols: np.ndarray, kernel: np.ndarray, dy: np.ndarray):
    """Returns ``(dx, dkernel, dbias)``."""
    b, w, h, _, _, c = cols.shape
    cout = kernel.shape[-1]
    dy2 = dy.reshape(-1, cout)
    dkernel = (cols.reshape(-1, 9 * c).T @ dy2).reshape(kernel.shape)
    dbias = dy2.sum(axis=0)
    dcols = (dy2 @ kernel.reshape(9 * c, cout).T).reshape(b, w, h, 3, 3, c)
    dpad = np.zeros((b, w + 2, h + 2, c))
    for i in range(3):
        for j in range(3):
            dpad[:, i : i + w, j : j + h] += dcols[:, :, :, i, j]
    return dpad[:, 1:-1, 1:-1], dkernel, dbias


def conv2d_reference(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Single ``W x H x Cin`` map convolved with a ``3 x 3 x Cin x Cout`` kernel."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3:
        raise ValueError(f"expected W x H x Cin input, got {x.shape}")
    out, _ = conv2d_forward(x[None], np.asarray(kernel, dtype=DTYPE))
    return out[0]


# --------------------------------------------------------------------------
# optimisation


@dataclass
class RmspropState:
    lr: float = 0.001
    alpha: float = 0.99
    eps: float = 1e-5
    square_avg: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: RmspropState
) -> None:
    """In-place update ``p -= lr * g / (sqrt(acc) + eps)``."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        acc = state.square_avg.get(name)
        if acc is None:
            acc = state.square_avg[name] = np.zeros_like(p)
        acc *= state.alpha
        acc += (1.0 - state.alpha) * g * g
        p -= state.lr * g / (np.sqrt(acc) + state.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scales ``grads`` in place so the global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads.values():
            g *= scale
    return total


@dataclass
class GradCheckReport:
    max_rel_error: float  # worst over parameter tensors
    per_tensor: dict[str, float]
    coords_checked: int
    coords_skipped: int  # probes that crossed a kink


def structure_signature(cache) -> bytes:
    """Discrete decisions in a forward cache: signs of float arrays, integer arrays verbatim.

    Two forwards with equal signatures took the same ReLU branches and the
    same max-pooling winners, so the function is smooth between them.
    """
    parts: list[bytes] = []

    def walk(obj) -> None:
        if isinstance(obj, np.ndarray):
            if obj.dtype.kind == "f":
                parts.append(np.packbits(obj > 0).tobytes())
            elif obj.dtype.kind in "iub":
                parts.append(obj.tobytes())
        elif isinstance(obj, (list, tuple)):
            for item in obj:
                walk(item)

    walk(cache)
    return b"|".join(parts)


def finite_diff_report(
    f: Callable[[], float | tuple[float, bytes]],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Central-difference check of ``analytic`` against ``f``.

    ``f`` reads ``params`` (perturbed in place and restored). The relative
    error of a parameter tensor is ``|a - n| / max(|a|, |n|, floor)`` with
    Euclidean norms over its probed coordinates. If ``f`` also returns a
    structure signature, coordinates whose ``+h`` or ``-h`` probe changes it
    sit on a kink; they are skipped and counted. With ``max_coords`` only that
    many randomly chosen coordinates per tensor are probed.
    """

    def call():
        out = f()
        return out if isinstance(out, tuple) else (out, None)

    _, base_sig = call()
    per_tensor = {}
    checked = skipped = 0
    for name, p in params.items():
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[name], dtype=DTYPE).reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False))
        a_vals, n_vals = [], []
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            up, sig_up = call()
            flat[i] = old - h
            down, sig_down = call()
            flat[i] = old
            if base_sig is not None and (sig_up != base_sig or sig_down != base_sig):
                skipped += 1
                continue
            checked += 1
            a_vals.append(a_flat[i])
            n_vals.append((up - down) / (2 * h))
        if not a_vals:
            continue
        a_vec, n_vec = np.array(a_vals), np.array(n_vals)
        denom = max(np.linalg.norm(a_vec), np.linalg.norm(n_vec), floor)
        per_tensor[name] = float(np.linalg.norm(a_vec - n_vec) / denom)
    worst = max(per_tensor.values(), default=0.0)
    return GradCheckReport(worst, per_tensor, checked, skipped)


def finite_diff_check(
    f: Callable[[], float | tuple[float, bytes]],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst per-tensor relative error; see :func:`finite_diff_report`."""
    return finite_diff_report(f, params, analytic, h, floor, max_coords, rng).max_rel_error


# --------------------------------------------------------------------------
# checkpoints
#
# header: magic b"GTGC", u32 version, u32 tensor count; then per tensor:
# u32 name length, utf-8 name, u32 rank, u64 dims, float64 little-endian data.

CHECKPOINT_MAGIC = b"GTGC"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, t in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(t, dtype="<f8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            out[name] = arr.astype(DTYPE)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after {count} tensors")
    return out
