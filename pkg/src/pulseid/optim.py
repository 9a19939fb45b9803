"""Trainable parameter storage, the Adam update, and a finite-difference oracle."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor table with a seeded initializer stream.

    Iteration follows insertion order, which is deterministic given the
    seed and the construction code path.
    """

    def __init__(self, rng_seed: int):
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._entries: dict[str, Tensor] = {}

    @classmethod
    def from_tensors(cls, entries: dict[str, Tensor], rng_seed: int = 0) -> "ParamStore":
        """Wrap already-materialized tensors (e.g. a loaded checkpoint)."""
        ps = cls(rng_seed)
        ps._entries = dict(entries)
        return ps

    def create(self, name: str, shape: tuple, init: str = "glorot") -> Tensor:
        """Create and register a parameter. init: 'glorot' | 'zeros'."""
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        if init == "zeros":
            t = Tensor(np.zeros(shape))
        elif init == "glorot":
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            fan_out = shape[0] if len(shape) > 1 else shape[0]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            t = Tensor(self._rng.uniform(-limit, limit, size=shape))
        else:
            raise ContractError(f"unknown init {init!r}")
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        if name not in self._entries:
            raise ContractError(f"unknown parameter {name!r}")
        if value.shape != self._entries[name].shape:
            raise ContractError(f"shape change for {name!r}")
        self._entries[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        if set(snap) != set(self._entries):
            raise ContractError("snapshot names do not match store")
        for k, v in snap.items():
            self._entries[k] = Tensor(v.copy())

    def digest(self) -> str:
        """SHA-256 over names and raw little-endian payloads."""
        h = hashlib.sha256()
        for k, v in self._entries.items():
            h.update(k.encode())
            h.update(v.data.astype("<f8").tobytes())
        return h.hexdigest()


@dataclass
class AdamState:
    """First/second moments and per-parameter step counts."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(
    params: ParamStore,
    grads: dict[str, Tensor],
    lr: float,
    state: AdamState | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamStore, AdamState]:
    """One Adam update; grads must be keyed exactly like the store."""
    if state is None:
        state = AdamState()
    if set(grads) != set(params.names()):
        raise ContractError("gradient keys do not match parameter names")
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.shape:
            raise ContractError(f"gradient shape mismatch for {name!r}")
        t = state.t.get(name, 0) + 1
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params[name] = Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + eps))
        state.m[name], state.v[name], state.t[name] = m, v, t
    return params, state


def finite_diff(
    f: Callable[[ParamStore], float], params: ParamStore, eps: float = 1e-4
) -> dict[str, Tensor]:
    """Central-difference gradients of a deterministic scalar function.

    Independent of the tape machinery on purpose: this is the oracle the
    analytic gradients are checked against.
    """
    out = {}
    for name, p in list(params.items()):
        base = p.data.copy()
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            params[name] = Tensor(base)
            fp = f(params)
            flat[i] = orig - eps
            params[name] = Tensor(base)
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        params[name] = Tensor(base)
        out[name] = Tensor(g)
    return out
