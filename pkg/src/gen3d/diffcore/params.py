"""Named flat parameter segments, SGD updates, and checkpoint serialization.

A ParameterStore is an immutable ordered collection of (name, 1-D float
vector) segments; generator and discriminator weights both live in stores.
Updates return new stores.  Checkpoints are a versioned container: an ASCII
header with a segment table, then raw little-endian float32 payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, EvaluationError

_MAGIC = "GEN3D-CKPT"
_VERSION = 1


class ParameterStore:
    __slots__ = ("names", "values", "_index")

    def __init__(self, names, values):
        names = tuple(names)
        values = tuple(np.asarray(v) for v in values)
        if len(names) != len(values):
            raise ContractError("names and values length mismatch")
        if len(set(names)) != len(names):
            raise ContractError("segment names must be unique")
        for n, v in zip(names, values):
            if not n or any(c.isspace() for c in n):
                raise ContractError(f"bad segment name {n!r}")
            if v.ndim != 1:
                raise ContractError(f"segment {n!r} must be a flat vector")
            if not np.all(np.isfinite(v)):
                raise ContractError(f"segment {n!r} contains non-finite values")
        self.names = names
        self.values = values
        self._index = {n: i for i, n in enumerate(names)}
        for v in values:
            v.flags.writeable = False

    @property
    def total_len(self):
        return int(sum(v.size for v in self.values))

    @property
    def dtype(self):
        return self.values[0].dtype if self.values else np.dtype(np.float32)

    def segment(self, name):
        return self.values[self._index[name]]

    def __contains__(self, name):
        return name in self._index

    def astype(self, dtype):
        return ParameterStore(self.names, [v.astype(dtype) for v in self.values])

    def replace(self, new_values):
        return ParameterStore(self.names, new_values)

    def perturbed(self, seg_idx, coord, delta):
        """Copy of the store with one coordinate shifted by delta."""
        vals = list(self.values)
        v = vals[seg_idx].copy()
        v[coord] += delta
        vals[seg_idx] = v
        return ParameterStore(self.names, vals)

    def allclose(self, other, **kw):
        return self.names == other.names and all(
            np.allclose(a, b, **kw) for a, b in zip(self.values, other.values)
        )

    def equal(self, other):
        return self.names == other.names and all(
            np.array_equal(a, b) for a, b in zip(self.values, other.values)
        )


@dataclass(frozen=True)
class GradientRecord:
    """Per-segment gradients mirroring a ParameterStore, plus the loss value.

    Non-finite entries are a hard error: a NaN here means a bug upstream, not
    a condition to recover from.
    """

    names: tuple
    grads: tuple
    loss_value: float

    def __post_init__(self):
        if len(self.names) != len(self.grads):
            raise ContractError("gradient record misaligned with names")
        for n, g in zip(self.names, self.grads):
            if not np.all(np.isfinite(g)):
                raise EvaluationError(f"non-finite gradient in segment {n!r}")
        if not np.isfinite(self.loss_value):
            raise EvaluationError("non-finite loss value")

    @classmethod
    def from_store(cls, store, grads, loss_value):
        grads = tuple(np.asarray(g).reshape(-1) for g in grads)
        for n, g, v in zip(store.names, grads, store.values):
            if g.shape != v.shape:
                raise ContractError(f"gradient shape mismatch in segment {n!r}")
        return cls(store.names, grads, float(loss_value))

    def segment(self, name):
        return self.grads[self.names.index(name)]

    def scaled(self, c):
        return GradientRecord(self.names, tuple(g * c for g in self.grads), self.loss_value)


def sgd_update(params, grads, lr, *, ascent=False, momentum=0.0, velocity=None):
    """One SGD step; descent by default, ascent when flagged.

    With momentum > 0 pass/receive the velocity list to carry state between
    steps.  Returns (new_store, new_velocity).
    """
    if not np.isfinite(lr):
        raise ContractError("learning rate must be finite")
    if params.names != grads.names:
        raise ContractError("parameter/gradient segment mismatch")
    for v, g in zip(params.values, grads.grads):
        if v.shape != g.shape:
            raise ContractError("parameter/gradient shape mismatch")
    sign = 1.0 if ascent else -1.0
    if velocity is None:
        velocity = [np.zeros_like(v) for v in params.values]
    new_vel = []
    new_vals = []
    for p, g, v in zip(params.values, grads.grads, velocity):
        nv = momentum * v + g if momentum else g
        new_vel.append(nv)
        new_vals.append((p + sign * lr * nv).astype(p.dtype))
    return params.replace(new_vals), new_vel


def save_checkpoint(store, path):
    """Write a store as a versioned binary container (float32 payload)."""
    if store.dtype != np.float32:
        raise ContractError("checkpoints hold float32 stores")
    lines = [f"{_MAGIC} {_VERSION}", f"segments {len(store.names)}"]
    offset = 0
    for n, v in zip(store.names, store.values):
        lines.append(f"{n} {offset} {v.size}")
        offset += v.size
    lines.append("payload")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for v in store.values:
            fh.write(v.astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    mark = raw.find(b"payload\n")
    if mark < 0:
        raise ContractError(f"{path}: not a checkpoint file")
    header = raw[:mark].decode("ascii").splitlines()
    magic = header[0].split()
    if magic[0] != _MAGIC:
        raise ContractError(f"{path}: bad magic {magic[0]!r}")
    if int(magic[1]) != _VERSION:
        raise ContractError(f"{path}: unsupported version {magic[1]}")
    nseg = int(header[1].split()[1])
    payload = raw[mark + len(b"payload\n"):]
    flat = np.frombuffer(payload, dtype="<f4")
    names, values = [], []
    for line in header[2 : 2 + nseg]:
        name, off, length = line.split()
        names.append(name)
        values.append(flat[int(off) : int(off) + int(length)].astype(np.float32))
    return ParameterStore(names, values)
