"""Dense networks in plain numpy: forward/backward, Adam, orthogonal init,
Polyak averaging and a portable checkpoint container."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Layer:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)
    activation: str = "relu"


class DenseNet:
    """Stack of fully connected layers ``y = act(x @ W + b)``."""

    def __init__(self, sizes, hidden_activation: str = "relu", output_activation: str = "identity",
                 dtype=np.float32, seed: int | None = 0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        for a in (hidden_activation, output_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = []
        for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            self.layers.append(Layer(np.zeros((m, n), self.dtype), np.zeros(n, self.dtype), act))
        if seed is not None:
            orthogonal_init(self, seed)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].W.shape[0]] + [l.W.shape[1] for l in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def set_params(self, params) -> None:
        for i, l in enumerate(self.layers):
            l.W[...] = params[2 * i]
            l.b[...] = params[2 * i + 1]

    def copy(self) -> "DenseNet":
        net = DenseNet.__new__(DenseNet)
        net.dtype = self.dtype
        net.layers = [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        return net

    def architecture(self) -> list[tuple]:
        return [(l.W.shape, l.activation) for l in self.layers]

    def __call__(self, x):
        return forward(self, x)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def forward(net: DenseNet, x, return_cache: bool = False):
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {net.in_dim}")
    cache = [x]
    h = x
    for l in net.layers:
        h = _act(h @ l.W + l.b, l.activation)
        cache.append(h)
    return (h, cache) if return_cache else h


def backward(net: DenseNet, x, upstream, cache=None):
    """Gradients of ``sum(upstream * net(x))``.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    :meth:`DenseNet.params`.
    """
    if cache is None:
        _, cache = forward(net, x, return_cache=True)
    g = np.asarray(upstream, dtype=net.dtype)
    if g.shape != cache[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match output {cache[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        out = cache[i + 1]
        if l.activation == "relu":
            g = g * (out > 0)
        elif l.activation == "tanh":
            g = g * (1.0 - out * out)
        inp = cache[i]
        if inp.ndim == 1:
            grads[2 * i] = np.outer(inp, g)
            grads[2 * i + 1] = g.copy()
        else:
            flat_in = inp.reshape(-1, inp.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            grads[2 * i] = flat_in.T @ flat_g
            grads[2 * i + 1] = flat_g.sum(axis=0, dtype=np.float64).astype(net.dtype)
        g = g @ l.W.T
    return grads, g


def orthogonal_init(net: DenseNet, seed: int, gain: float = 1.0) -> DenseNet:
    """Orthogonal weights (``W^T W = I`` or ``W W^T = I``), zero biases."""
    rng = np.random.default_rng(seed)
    for l in net.layers:
        m, n = l.W.shape
        a = rng.standard_normal((max(m, n), min(m, n)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        w = q if m >= n else q.T
        l.W[...] = gain * w
        l.b[...] = 0
    return net


def polyak_update(target: DenseNet, online: DenseNet, rate: float) -> DenseNet:
    """``target <- rate * target + (1 - rate) * online`` (rate near 1 tracks slowly)."""
    if target.architecture() != online.architecture():
        raise ValueError("target and online networks differ in architecture")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    for t, o in zip(target.params(), online.params()):
        if rate == 0.0:
            t[...] = o
        elif rate != 1.0:
            t *= rate
            t += (1.0 - rate) * o
    return target


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """In-place bias-corrected Adam update; returns ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; update rejected")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g, dtype=np.float64)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: MAGIC | u32 version | u32 header_len | header (utf-8 json) | data | u32 crc32(data)
# data holds each tensor as little-endian float32 in header order.

MAGIC = b"CHERCKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_tensors(tensors: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        blobs.append(a.tobytes())
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    data = b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header + data)
        fh.write(struct.pack("<I", zlib.crc32(data)))


def read_manifest(path) -> dict:
    return _read(path)[0]


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    header, data = _read(path)
    out = {}
    for e in header["tensors"]:
        raw = data[e["offset"]:e["offset"] + e["nbytes"]]
        out[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return out, header.get("meta", {})


def _read(path):
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", buf[len(MAGIC):len(MAGIC) + 8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    expected = sum(e["nbytes"] for e in header["tensors"])
    data = buf[start + hlen:-4] if len(buf) >= start + hlen + 4 else b""
    if len(data) != expected or len(buf) != start + hlen + expected + 4:
        raise CheckpointError("truncated or corrupt checkpoint")
    (crc,) = struct.unpack("<I", buf[-4:])
    if crc != zlib.crc32(data):
        raise CheckpointError("checkpoint checksum mismatch")
    return header, data


def net_tensors(prefix: str, net: DenseNet) -> dict[str, np.ndarray]:
    out = {}
    for i, l in enumerate(net.layers):
        out[f"{prefix}/{i}/W"] = l.W
        out[f"{prefix}/{i}/b"] = l.b
    return out


def net_from_tensors(prefix: str, tensors: dict, activations: list[str]) -> DenseNet:
    net = DenseNet.__new__(DenseNet)
    net.dtype = np.dtype(np.float32)
    net.layers = []
    for i, act in enumerate(activations):
        net.layers.append(Layer(tensors[f"{prefix}/{i}/W"].copy(), tensors[f"{prefix}/{i}/b"].copy(), act))
    return net


def save_checkpoint(nets: dict[str, DenseNet], path, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write named networks (plus optional extra tensors) to one container."""
    tensors = {}
    acts = {}
    for name, net in nets.items():
        tensors.update(net_tensors(name, net))
        acts[name] = [l.activation for l in net.layers]
    for k, v in (extra or {}).items():
        tensors[k] = np.atleast_1d(np.asarray(v))
    save_tensors(tensors, path, meta={"networks": acts, **(meta or {})})


def load_checkpoint(path) -> tuple[dict[str, DenseNet], dict[str, np.ndarray], dict]:
    tensors, meta = load_tensors(path)
    acts = meta.get("networks", {})
    nets = {name: net_from_tensors(name, tensors, a) for name, a in acts.items()}
    extra = {k: v for k, v in tensors.items() if k.split("/")[0] not in acts}
    return nets, extra, meta
