"""Sinusoidal MLPs, their closed-form second-order jets, and parameter surgery.

All tensors are float64. A network is ``W[d+1] o sin(W[d] ... sin(w0 * (W[1] x + b[1])) ...) + b[d+1]``;
only the first layer carries the frequency scale ``omega0``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    InvalidInputError,
)
from .parallel import map_chunks

DTYPE = torch.float64
MAGIC = b"NHF1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SirenNetwork:
    weights: tuple[torch.Tensor, ...]
    biases: tuple[torch.Tensor, ...]
    omega0: float = 30.0
    metadata: dict = dc_field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise InvalidInputError("need at least one hidden layer and matching weights/biases")
        if not (self.omega0 > 0 and math.isfinite(self.omega0)):
            raise InvalidInputError(f"omega0 must be positive and finite, got {self.omega0}")
        prev = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != prev or b.shape[0] != w.shape[0]:
                raise InvalidInputError(f"dimension chain broken at layer {i + 1}")
            prev = w.shape[0]
        if prev != 1:
            raise InvalidInputError("output layer must be scalar")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def widths(self) -> list[int]:
        """Layer widths N_1..N_{d+1}; N_1 is the input dimension."""
        return [w.shape[1] for w in self.weights]

    def named_parameters(self) -> dict[str, torch.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_parameters(cls, params: dict[str, torch.Tensor], omega0: float, metadata=None) -> "SirenNetwork":
        n = len(params) // 2
        weights = tuple(params[f"W{i}"] for i in range(1, n + 1))
        biases = tuple(params[f"b{i}"] for i in range(1, n + 1))
        return cls(weights, biases, omega0, dict(metadata or {}))

    def detached(self) -> "SirenNetwork":
        return SirenNetwork(
            tuple(w.detach().clone() for w in self.weights),
            tuple(b.detach().clone() for b in self.biases),
            self.omega0,
            dict(self.metadata),
        )

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in (*self.weights, *self.biases))

    def equal(self, other: "SirenNetwork") -> bool:
        """Bitwise equality of architecture and parameters."""
        if self.omega0 != other.omega0 or self.widths != other.widths:
            return False
        return all(
            torch.equal(a, b)
            for a, b in zip((*self.weights, *self.biases), (*other.weights, *other.biases))
        )

    def __call__(self, x) -> torch.Tensor:
        return forward(self, x)


@dataclass
class Jet2:
    """Value, time derivative, spatial gradient and spatial Hessian, batched on the leading axis."""

    value: torch.Tensor
    dt: torch.Tensor
    grad: torch.Tensor
    hess: torch.Tensor

    def __len__(self):
        return self.value.shape[0]

    def select(self, mask) -> "Jet2":
        return Jet2(self.value[mask], self.dt[mask], self.grad[mask], self.hess[mask])


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_input(net: SirenNetwork, x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InvalidInputError(
            f"expected points of dimension {net.input_dim}, got shape {tuple(x.shape)}"
        )
    return x


def forward(net: SirenNetwork, x) -> torch.Tensor:
    """Evaluate the network on a point (shape (N1,)) or a batch (shape (n, N1))."""
    x = as_tensor(x)
    single = x.ndim == 1
    a = _check_input(net, x)
    a = torch.sin(net.omega0 * (a @ net.weights[0].T + net.biases[0]))
    for w, b in zip(net.weights[1:-1], net.biases[1:-1]):
        a = torch.sin(a @ w.T + b)
    out = (a @ net.weights[-1].T + net.biases[-1])[:, 0]
    return out[0] if single else out


def jet_batch(net: SirenNetwork, x: torch.Tensor, hessian: bool = True) -> Jet2:
    """Closed-form jets for a batch of inputs of the network's own dimension.

    The Jacobian is tracked against every input coordinate, the Hessian against
    the first three (spatial) ones. For 3-dimensional inputs ``dt`` is zero.
    With ``hessian=False`` the Hessian is skipped and returned as zeros.

    Derivative arrays keep the neuron axis last: jac is (n, inputs, width) and
    hess is (n, 3, 3, width), so each layer is a plain matmul.
    """
    x = _check_input(net, as_tensor(x))
    n, n_in = x.shape
    n_sp = min(3, n_in)

    w1 = net.omega0 * net.weights[0]
    z = x @ w1.T + net.omega0 * net.biases[0]
    s, c = torch.sin(z), torch.cos(z)
    # first layer: dz/dx is the same matrix for every point and d2z/dx2 = 0
    dz = w1.T.expand(n, -1, -1)
    jac = c[:, None, :] * dz
    hess = None
    if hessian:
        dzs = dz[:, :n_sp]
        hess = -s[:, None, None, :] * dzs[:, :, None, :] * dzs[:, None, :, :]
    a = s

    for w, b in zip(net.weights[1:-1], net.biases[1:-1]):
        z = a @ w.T + b
        s, c = torch.sin(z), torch.cos(z)
        dz = jac @ w.T
        if hessian:
            hz = hess @ w.T
            dzs = dz[:, :n_sp]
            hess = c[:, None, None, :] * hz - s[:, None, None, :] * dzs[:, :, None, :] * dzs[:, None, :, :]
        jac = c[:, None, :] * dz
        a = s

    w_out = net.weights[-1][0]
    value = a @ w_out + net.biases[-1][0]
    grad_all = jac @ w_out
    h = hess @ w_out if hessian else x.new_zeros(n, n_sp, n_sp)
    dt = grad_all[:, 3] if n_in >= 4 else torch.zeros_like(value)
    return Jet2(value, dt, grad_all[:, :n_sp], h)


def jet(net: SirenNetwork, p, t, hessian: bool = True) -> Jet2:
    """Jets of a space-time network at points ``p`` (shape (3,) or (n, 3)) and times ``t``."""
    if net.input_dim != 4:
        raise InvalidInputError(f"jet requires a space-time network (input dim 4), got {net.input_dim}")
    p = as_tensor(p)
    if p.ndim == 1:
        p = p[None]
    if p.ndim != 2 or p.shape[1] != 3:
        raise InvalidInputError(f"expected spatial points of shape (n, 3), got {tuple(p.shape)}")
    t = as_tensor(t).reshape(-1)
    t = t.expand(p.shape[0]) if t.numel() == 1 else t
    if t.shape[0] != p.shape[0]:
        raise InvalidInputError("times and points have different lengths")
    return jet_batch(net, torch.cat([p, t[:, None]], dim=1), hessian)


def jet_with_parameter_sensitivity(net: SirenNetwork, p, t) -> tuple[Jet2, dict[str, torch.Tensor]]:
    """Jets whose components are autograd nodes over fresh leaf copies of the parameters.

    Returns the jet and the leaf tensors; call ``.backward()`` on any scalar built
    from the jet and read ``leaf.grad``.
    """
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in net.named_parameters().items()}
    live = SirenNetwork.from_parameters(leaves, net.omega0)
    return jet(live, p, t), leaves


def spatial_jet(net: SirenNetwork, p, hessian: bool = True) -> Jet2:
    """Jets of a 3-input network (``dt`` is identically zero)."""
    if net.input_dim != 3:
        raise InvalidInputError(f"spatial_jet requires input dim 3, got {net.input_dim}")
    return jet_batch(net, as_tensor(p), hessian)


def evaluate_chunked(net: SirenNetwork, x, chunk: int = 16384) -> np.ndarray:
    """Network values at many points, chunked across the configured workers."""
    x = as_tensor(x)

    def run(a, b):
        with torch.no_grad():
            return forward(net, x[a:b])

    out = map_chunks(run, x.shape[0], chunk)
    return torch.cat(out).numpy() if out else np.zeros(0)


# --- initialization -------------------------------------------------------

def _validate_widths(widths) -> list[int]:
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise InvalidInputError(f"invalid widths {widths}: need input dim plus at least one hidden width")
    return widths


def init_standard(widths, omega0: float = 30.0, seed: int = 0) -> SirenNetwork:
    """Standard sinusoidal-network initialization.

    ``widths`` lists the input dimension followed by the hidden widths; the scalar
    output layer is appended. First-layer weights are U(-1/N1, 1/N1); later layers
    are U(-sqrt(6/N)/1, sqrt(6/N)/1) since hidden layers run at frequency 1.
    Biases follow the usual fan-in rule U(-1/sqrt(N), 1/sqrt(N)).
    """
    widths = _validate_widths(widths)
    if not omega0 > 0:
        raise InvalidInputError("omega0 must be positive")
    gen = torch.Generator().manual_seed(int(seed))
    dims = widths + [1]
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / n_in if i == 0 else math.sqrt(6.0 / n_in)
        w = (torch.rand(n_out, n_in, generator=gen, dtype=DTYPE) * 2 - 1) * bound
        bb = 1.0 / math.sqrt(n_in)
        b = (torch.rand(n_out, generator=gen, dtype=DTYPE) * 2 - 1) * bb
        weights.append(w)
        biases.append(b)
    return SirenNetwork(tuple(weights), tuple(biases), float(omega0))


def init_from_condition(g: SirenNetwork, target_widths) -> SirenNetwork:
    """Embed a trained 3-input network into a wider 4-input one that ignores time.

    ``target_widths`` = [4, M2, ..., M_{d+1}]. The padded neurons see zero input in
    the first layer, hence stay at sin(0) = 0 through identity blocks and are
    dropped by a zero-padded output layer.
    """
    target = _validate_widths(target_widths)
    if g.input_dim != 3:
        raise InvalidInputError("condition network must have input dimension 3")
    if target[0] != 4:
        raise InvalidInputError("target input dimension must be 4")
    if len(target) - 1 != g.depth:
        raise InvalidInputError(f"depth mismatch: condition depth {g.depth}, target depth {len(target) - 1}")
    src = g.widths
    for i, (m, n) in enumerate(zip(target[1:], src[1:]), start=2):
        if m < n:
            raise InvalidInputError(f"target width N{i}={m} is narrower than the condition width {n}")

    weights, biases = [], []
    w = torch.zeros(target[1], 4, dtype=DTYPE)
    w[: src[1], :3] = g.weights[0]
    b = torch.zeros(target[1], dtype=DTYPE)
    b[: src[1]] = g.biases[0]
    weights.append(w)
    biases.append(b)
    for i in range(1, g.depth):
        m_in, m_out = target[i], target[i + 1]
        n_in, n_out = src[i], src[i + 1]
        w = torch.zeros(m_out, m_in, dtype=DTYPE)
        w[:n_out, :n_in] = g.weights[i]
        w[n_out:, n_in:] = torch.eye(m_out - n_out, m_in - n_in, dtype=DTYPE)
        b = torch.zeros(m_out, dtype=DTYPE)
        b[:n_out] = g.biases[i]
        weights.append(w)
        biases.append(b)
    w = torch.zeros(1, target[-1], dtype=DTYPE)
    w[:, : src[-1]] = g.weights[-1]
    weights.append(w)
    biases.append(g.biases[-1].clone())
    return SirenNetwork(tuple(weights), tuple(biases), g.omega0)


def extract_slice(f: SirenNetwork, t: float) -> SirenNetwork:
    """The 3-input network p -> f(p, t), obtained by folding t into the first bias."""
    if f.input_dim != 4:
        raise InvalidInputError(f"extract_slice requires input dim 4, got {f.input_dim}")
    w1 = f.weights[0].detach()
    b1 = f.biases[0].detach() + float(t) * w1[:, 3]
    weights = (w1[:, :3].clone(), *(w.detach().clone() for w in f.weights[1:]))
    biases = (b1, *(b.detach().clone() for b in f.biases[1:]))
    return SirenNetwork(weights, biases, f.omega0, {"slice_time": float(t)})


# --- checkpoints ----------------------------------------------------------

def checkpoint_size(widths, metadata_bytes: int = 0) -> int:
    """Byte length of a checkpoint for ``widths`` = [N1, ..., N_{d+1}]."""
    dims = list(widths) + [1]
    size = 4 + 4 + 4 + 4 + 8
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        size += 8 + 8 * n_out * n_in + 8 * n_out
    return size + 4 + metadata_bytes


def to_bytes(net: SirenNetwork) -> bytes:
    meta = json.dumps(net.metadata, sort_keys=True).encode("utf-8") if net.metadata else b""
    parts = [MAGIC, struct.pack("<IIId", FORMAT_VERSION, net.input_dim, net.depth, net.omega0)]
    for w, b in zip(net.weights, net.biases):
        w = w.detach().cpu().numpy().astype("<f8")
        b = b.detach().cpu().numpy().astype("<f8")
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w).tobytes())
        parts.append(b.tobytes())
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> SirenNetwork:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointMagicError("not a network checkpoint (bad magic)")
    version, input_dim, depth, omega0 = r.unpack("<IIId")
    if version != FORMAT_VERSION:
        raise CheckpointShapeError(f"unsupported checkpoint version {version}")
    weights, biases = [], []
    prev = input_dim
    for i in range(depth + 1):
        rows, cols = r.unpack("<II")
        if cols != prev:
            raise CheckpointShapeError(f"layer {i + 1} has {cols} columns, expected {prev}")
        if i == depth and rows != 1:
            raise CheckpointShapeError(f"output layer has {rows} rows, expected 1")
        w = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(r.take(8 * rows), dtype="<f8")
        weights.append(torch.from_numpy(w.astype(np.float64)))
        biases.append(torch.from_numpy(b.astype(np.float64)))
        prev = rows
    (n_meta,) = r.unpack("<I")
    raw = r.take(n_meta)
    if r.pos != len(data):
        raise CheckpointShapeError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    meta = {}
    if raw:
        text = raw.decode("utf-8")
        try:
            meta = json.loads(text)
        except json.JSONDecodeError:
            meta = {"annotation": text}
    try:
        return SirenNetwork(tuple(weights), tuple(biases), omega0, meta)
    except InvalidInputError as exc:
        raise CheckpointShapeError(str(exc)) from exc


def save_checkpoint(net: SirenNetwork, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load_checkpoint(path) -> SirenNetwork:
    return from_bytes(Path(path).read_bytes())
