"""Minimal differentiable predictors with hand-derived backprop.

Two architectures: a linear softmax head (d -> K) and a one-hidden-layer
ReLU perceptron (d -> h -> K).  The ReLU derivative at exactly 0 is taken
as 0 (the left limit), so gradient checks have a fixed convention at the
kink.  Checkpoints round-trip bit-exactly through a small binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numkit import Rng

__all__ = [
    "Arch",
    "ModelParams",
    "ForwardTrace",
    "Gradients",
    "GradCheckResult",
    "init_params",
    "forward",
    "backward",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"NLAM"
_VERSION = 1


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor.  ``hidden_dim == 0`` means linear."""

    input_dim: int
    hidden_dim: int
    n_classes: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.n_classes < 2 or self.hidden_dim < 0:
            raise ValueError(f"bad architecture {self}")

    @property
    def is_linear(self) -> bool:
        return self.hidden_dim == 0

    @property
    def param_count(self) -> int:
        d, h, k = self.input_dim, self.hidden_dim, self.n_classes
        if self.is_linear:
            return d * k + k
        return d * h + h + h * k + k


@dataclass
class ModelParams:
    """Dense weights and biases, ordered input side first."""

    arch: Arch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.seed)


@dataclass
class ForwardTrace:
    """Cached activations for one mini-batch, consumed by backward."""

    inputs: np.ndarray
    logits: np.ndarray
    pre_hidden: np.ndarray | None = None
    hidden: np.ndarray | None = None


@dataclass
class Gradients:
    """Parameter gradients with the same shapes as the model."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @staticmethod
    def zeros_like(params: ModelParams) -> "Gradients":
        return Gradients([np.zeros_like(w) for w in params.weights],
                         [np.zeros_like(b) for b in params.biases])

    def add_(self, other: "Gradients") -> None:
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b


def init_params(arch: Arch, rng: Rng) -> ModelParams:
    """Zero-mean normal weights scaled by 1/sqrt(fan_in); zero biases.

    Draw order is fixed (layer by layer, row-major within a layer), so a
    seed fully determines the parameters.
    """
    dims = [(arch.input_dim, arch.n_classes)] if arch.is_linear else [
        (arch.input_dim, arch.hidden_dim), (arch.hidden_dim, arch.n_classes)]
    weights, biases = [], []
    for fan_in, fan_out in dims:
        w = rng.normals(fan_in * fan_out).reshape(fan_in, fan_out) / np.sqrt(fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return ModelParams(arch=arch, weights=weights, biases=biases, seed=rng.seed)


def forward(params: ModelParams, inputs: np.ndarray) -> ForwardTrace:
    """Batch forward pass; rows of ``inputs`` are samples."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"inputs must be (n, {params.arch.input_dim}), got {x.shape}")
    if params.arch.is_linear:
        logits = x @ params.weights[0] + params.biases[0]
        return ForwardTrace(inputs=x, logits=logits)
    pre = x @ params.weights[0] + params.biases[0]
    hid = np.maximum(pre, 0.0)
    logits = hid @ params.weights[1] + params.biases[1]
    return ForwardTrace(inputs=x, logits=logits, pre_hidden=pre, hidden=hid)


def backward(params: ModelParams, trace: ForwardTrace,
             grad_logits: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients for the supplied logit gradients.

    ``grad_logits`` must be dL/d(logits) of the scalar loss being
    differentiated (any batch-mean factor included by the caller).
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise ValueError("grad_logits shape does not match the trace")
    if trace.inputs.shape[1] != params.arch.input_dim:
        raise ValueError("trace does not match the model architecture")
    if params.arch.is_linear:
        if trace.pre_hidden is not None:
            raise ValueError("trace does not match the model architecture")
        return Gradients(weights=[trace.inputs.T @ g], biases=[g.sum(axis=0)])
    if trace.pre_hidden is None or trace.hidden is None:
        raise ValueError("trace does not match the model architecture")
    d_w2 = trace.hidden.T @ g
    d_b2 = g.sum(axis=0)
    d_hid = g @ params.weights[1].T
    d_pre = d_hid * (trace.pre_hidden > 0.0)
    d_w1 = trace.inputs.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    return Gradients(weights=[d_w1, d_w2], biases=[d_b1, d_b2])


@dataclass
class GradCheckResult:
    """Outcome of a finite-difference gradient check."""

    max_rel_error: float
    worst_coordinate: tuple[str, int, int]
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(params: ModelParams, loss_fn, tolerance: float = 1e-6,
                   h: float = 1e-5, max_coords: int | None = None,
                   rng: Rng | None = None,
                   denom_floor: float = 1e-2) -> GradCheckResult:
    """Compare analytic parameter gradients against central differences.

    ``loss_fn(params)`` must deterministically return ``(loss, Gradients)``.
    Every coordinate is perturbed by +/- h unless ``max_coords`` (at least
    200 when sampling) limits the check to a random subset.  The reported
    error is ``|fd - analytic| / max(|fd|, |analytic|, denom_floor)``: a
    relative error with an absolute floor on the denominator, since
    central differences cannot resolve near-zero gradients below roundoff.
    """
    _, analytic = loss_fn(params)
    coords = []
    arrays = [("W", i, w) for i, w in enumerate(params.weights)]
    arrays += [("b", i, b) for i, b in enumerate(params.biases)]
    for kind, layer, arr in arrays:
        for flat in range(arr.size):
            coords.append((kind, layer, flat))
    if max_coords is not None and len(coords) > max_coords:
        if max_coords < 200:
            raise ValueError("sampled gradient checks need at least 200 coordinates")
        if rng is None:
            raise ValueError("rng required when sampling coordinates")
        picked = rng.choice(len(coords), max_coords)
        coords = [coords[i] for i in picked]

    worst = 0.0
    worst_coord = ("W", 0, 0)
    for kind, layer, flat in coords:
        arr = params.weights[layer] if kind == "W" else params.biases[layer]
        an = (analytic.weights[layer] if kind == "W" else analytic.biases[layer]).flat[flat]
        old = arr.flat[flat]
        arr.flat[flat] = old + h
        up = loss_fn(params)[0]
        arr.flat[flat] = old - h
        down = loss_fn(params)[0]
        arr.flat[flat] = old
        fd = (up - down) / (2.0 * h)
        err = abs(fd - an) / max(abs(fd), abs(an), denom_floor)
        if err > worst:
            worst = err
            worst_coord = (kind, layer, flat)
    return GradCheckResult(max_rel_error=worst, worst_coordinate=worst_coord,
                           n_checked=len(coords), tolerance=tolerance)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
#
# Little-endian layout:
#   magic "NLAM" | u32 version | u32 input_dim | u32 hidden_dim |
#   u32 n_classes | u64 seed | parameter arrays as raw float64,
#   row-major, ordered W0, b0 [, W1, b1].

def save_checkpoint(params: ModelParams, path) -> None:
    a = params.arch
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<IIIIQ", _VERSION, a.input_dim, a.hidden_dim,
                        a.n_classes, params.seed)
    for w, b in zip(params.weights, params.biases):
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"not a model checkpoint: bad magic {blob[:4]!r}")
    version, d, h, k, seed = struct.unpack_from("<IIIIQ", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    arch = Arch(input_dim=d, hidden_dim=h, n_classes=k)
    dims = [(d, k)] if arch.is_linear else [(d, h), (h, k)]
    offset = 4 + struct.calcsize("<IIIIQ")
    weights, biases = [], []
    for fan_in, fan_out in dims:
        n_w = fan_in * fan_out
        w = np.frombuffer(blob, dtype="<f8", count=n_w, offset=offset).reshape(fan_in, fan_out)
        offset += n_w * 8
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += fan_out * 8
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(blob):
        raise ValueError("checkpoint has trailing bytes")
    return ModelParams(arch=arch, weights=weights, biases=biases, seed=seed)
