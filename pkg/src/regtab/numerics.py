"""Dense float tensors with reverse-mode gradients.

Just enough operator coverage for the table model: affine maps, 1x1/3x3
same-padded 2D convolution, layer norm, ReLU, softmax cross entropy, the
pairwise/window concatenations, and a finite-difference gradient checker.
Values are float64 by default; float32 works by passing float32 arrays in.
"""

from __future__ import annotations

import json
import os
from typing import Callable, Iterator, Optional

import numpy as np

from .core import DataFormatError, NumericError

# Debug guard: every op output is checked for NaN/Inf while this is on.
FINITE_CHECKS = True

CHECKPOINT_FORMAT = "regtab-params"
CHECKPOINT_VERSION = 1


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    # contiguity matters: grad_check perturbs values through a reshape view,
    # which would silently copy (and so do nothing) on strided input;
    # ascontiguousarray is avoided because it promotes 0-d arrays to 1-d
    if not arr.flags.c_contiguous:
        arr = arr.copy()
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if FINITE_CHECKS and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """A node in the computation graph; grads accumulate into `.grad`."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] = lambda: None
        self._parents: tuple["Tensor", ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise NumericError(f"backward() needs a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(value: np.ndarray, parents: tuple[Tensor, ...], what: str) -> Tensor:
    _check_finite(value, what)
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def relu(x: Tensor) -> Tensor:
    out = _make(np.maximum(x.data, 0.0), (x,), "relu")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * (x.data > 0))
        out._backward = _backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise NumericError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                b._accumulate(out.grad)
        out._backward = _backward
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = _make(x.data * c, (x,), "scale")
    if out.requires_grad:
        def _backward():
            x._accumulate(out.grad * c)
        out._backward = _backward
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _make(np.asarray(x.data.sum()), (x,), "sum_all")
    if out.requires_grad:
        def _backward():
            x._accumulate(np.full_like(x.data, float(out.grad)))
        out._backward = _backward
    return out


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x @ w (+ b)."""
    if x.shape[-1] != w.shape[0]:
        raise NumericError(f"linear shape mismatch: input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise NumericError(f"linear bias shape {b.shape} does not match weight {w.shape}")
    value = x.data @ w.data
    if b is not None:
        value = value + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(value, parents, "linear")
    if out.requires_grad:
        def _backward():
            g = out.grad
            g2 = g.reshape(-1, w.shape[1])
            x2 = x.data.reshape(-1, w.shape[0])
            if x.requires_grad:
                x._accumulate((g2 @ w.data.T).reshape(x.shape))
            if w.requires_grad:
                w._accumulate(x2.T @ g2)
            if b is not None and b.requires_grad:
                b._accumulate(g2.sum(axis=0))
        out._backward = _backward
    return out


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-padded cross-correlation; kernel (k, k, c_in, c_out), k in {1, 3}."""
    if kernel.data.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise NumericError(f"conv kernel must be (k, k, c_in, c_out), got {kernel.shape}")
    k = kernel.shape[0]
    if k not in (1, 3):
        raise NumericError(f"unsupported kernel size {k}, expected 1 or 3")
    if x.data.ndim != 3 or x.shape[2] != kernel.shape[2]:
        raise NumericError(f"conv input {x.shape} incompatible with kernel {kernel.shape}")

    h, w_dim, _ = x.shape
    c_out = kernel.shape[3]
    pad = k // 2
    if pad:
        padded = np.zeros((h + 2 * pad, w_dim + 2 * pad, x.shape[2]), dtype=x.data.dtype)
        padded[pad : pad + h, pad : pad + w_dim, :] = x.data
    else:
        padded = x.data

    value = np.zeros((h, w_dim, c_out), dtype=x.data.dtype)
    for di in range(k):
        for dj in range(k):
            value += padded[di : di + h, dj : dj + w_dim, :] @ kernel.data[di, dj]

    out = _make(value, (x, kernel), "conv2d")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if kernel.requires_grad:
                gk = np.empty_like(kernel.data)
                for di in range(k):
                    for dj in range(k):
                        patch = padded[di : di + h, dj : dj + w_dim, :]
                        gk[di, dj] = np.einsum("ijc,ijo->co", patch, g)
                kernel._accumulate(gk)
            if x.requires_grad:
                gpad = np.zeros_like(padded)
                for di in range(k):
                    for dj in range(k):
                        gpad[di : di + h, dj : dj + w_dim, :] += g @ kernel.data[di, dj].T
                gx = gpad[pad : pad + h, pad : pad + w_dim, :] if pad else gpad
                x._accumulate(gx)
        out._backward = _backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last (channel) axis to zero mean / unit variance."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise NumericError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def _backward():
            g = out.grad
            lead = (-1, d)
            if gain.requires_grad:
                gain._accumulate((g * xhat).reshape(lead).sum(axis=0))
            if bias.requires_grad:
                bias._accumulate(g.reshape(lead).sum(axis=0))
            if x.requires_grad:
                gxhat = g * gain.data
                m1 = gxhat.mean(axis=-1, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv * (gxhat - m1 - xhat * m2))
        out._backward = _backward
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiable) softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-position negative log likelihood of integer `targets`."""
    targets = np.asarray(targets)
    n_classes = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise NumericError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise NumericError(f"target class outside [0, {n_classes})")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = _make(-picked, (logits,), "softmax_cross_entropy")
    if out.requires_grad:
        def _backward():
            grad = np.exp(logp)
            np.put_along_axis(
                grad,
                targets[..., None],
                np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0,
                axis=-1,
            )
            logits._accumulate(grad * out.grad[..., None])
        out._backward = _backward
    return out


def pair_concat(h: Tensor) -> Tensor:
    """(N, d) token reps -> (N, N, 2d) with cell (i, j) = [h_i; h_j]."""
    n, d = h.shape
    value = np.concatenate(
        [
            np.broadcast_to(h.data[:, None, :], (n, n, d)),
            np.broadcast_to(h.data[None, :, :], (n, n, d)),
        ],
        axis=2,
    )
    out = _make(value, (h,), "pair_concat")
    if out.requires_grad:
        def _backward():
            g = out.grad
            h._accumulate(g[:, :, :d].sum(axis=1) + g[:, :, d:].sum(axis=0))
        out._backward = _backward
    return out


def window_concat(e: Tensor, radius: int) -> Tensor:
    """(N, d) -> (N, (2r+1)d): concat rows i-r..i+r, zeros past the edges."""
    if radius < 0:
        raise NumericError("window radius must be >= 0")
    n, d = e.shape
    padded = np.zeros((n + 2 * radius, d), dtype=e.data.dtype)
    padded[radius : radius + n] = e.data
    value = np.concatenate([padded[k : k + n] for k in range(2 * radius + 1)], axis=1)
    out = _make(value, (e,), "window_concat")
    if out.requires_grad:
        def _backward():
            gpad = np.zeros_like(padded)
            for k in range(2 * radius + 1):
                gpad[k : k + n] += out.grad[:, k * d : (k + 1) * d]
            e._accumulate(gpad[radius : radius + n])
        out._backward = _backward
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of an embedding table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise NumericError(f"embedding id outside [0, {table.shape[0]})")
    out = _make(table.data[ids], (table,), "embedding")
    if out.requires_grad:
        def _backward():
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, out.grad)
            table._accumulate(gt)
        out._backward = _backward
    return out


class ParamStore:
    """Named trainable tensors with insertion-ordered, unique names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise NumericError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise DataFormatError(f"missing parameter {name!r} in loaded values")
            arr = np.asarray(values[name])
            if arr.shape != t.data.shape:
                raise DataFormatError(
                    f"parameter {name!r}: shape {arr.shape} does not match {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, h: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Per parameter tensor, errors are normalized by the sup norm of the two
    gradient arrays (floored at 1e-6) so uniformly tiny gradients do not
    blow up the ratio.
    """
    params.zero_grads()
    out = f(params)
    if out.data.size != 1:
        raise NumericError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite function value in grad_check")
    out.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(params).data)
            flat[i] = orig - h
            f_minus = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite value while perturbing {name!r}")
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)
        denom = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-6)
        err = float(np.abs(a - numeric).max(initial=0.0) / denom)
        worst = max(worst, err)
    return worst


def save_params(path: str, values: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write a checkpoint: one JSON manifest line, then raw row-major bytes.

    The byte payload round-trips bit-exactly; identical values produce
    byte-identical files.
    """
    entries = []
    blobs = []
    for name, arr in values.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            arr = arr.astype("<f4", copy=False)
            dtype = "<f4"
        else:
            arr = arr.astype("<f8", copy=False)
            dtype = "<f8"
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": entries,
        "meta": meta or {},
    }
    tmp = path + ".partial"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_params(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by :func:`save_params`."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header)
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise DataFormatError(f"{path}: not a parameter checkpoint") from None
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise DataFormatError(f"{path}: unexpected checkpoint format")
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version")
        values = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise DataFormatError(f"{path}: truncated payload for {entry['name']!r}")
            values[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after payload")
    return values, manifest.get("meta", {})
