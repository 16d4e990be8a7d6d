"""Parameter containers and the layers shared by every DERL stage."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from . import tensor as T
from .tensor import ConformanceError, Tensor, parameter


class Module:
    """Base class that discovers parameters through attributes.

    Attributes holding a Tensor with ``requires_grad``, a Module, or a
    list/dict of Modules are walked in definition order. A parameter reachable
    through several paths (shared experts) is reported once, under the first
    name it was found at.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        seen: set[int] = set()
        yield from self._walk(prefix, seen)

    def _walk(self, prefix: str, seen: set[int]) -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            yield from _walk_value(name, value, seen)

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ConformanceError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data[...] = value


def _walk_value(name: str, value, seen: set[int]) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad and id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        yield from value._walk(f"{name}.", seen)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{name}.{i}", item, seen)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_value(f"{name}.{key}", item, seen)


# ----------------------------- Layers -----------------------------

class Linear(Module):
    """y = x @ W + b with W stored as (in_features, out_features)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ) -> None:
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            limit = math.sqrt(6.0 / (in_features + out_features))
            w = rng.uniform(-limit, limit, size=(in_features, out_features))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ConformanceError(
                f"linear: expected last axis {self.in_features}, got input shape {x.shape}"
            )
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class MLP(Module):
    """Two-layer perceptron with GELU; optional residual path around it."""

    def __init__(
        self,
        in_features: int,
        hidden: int,
        out_features: int,
        rng: np.random.Generator,
        residual: bool = False,
        zero_last: bool = False,
    ) -> None:
        if residual and in_features != out_features:
            raise ConformanceError(
                f"residual MLP needs equal in/out widths, got {in_features} -> {out_features}"
            )
        self.residual = residual
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng, zero_init=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        out = self.fc2(T.gelu(self.fc1(x)))
        return T.add(x, out) if self.residual else out


class LayerNorm(Module):
    def __init__(self, dim: int) -> None:
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class SelfAttention(Module):
    """Multi-head self-attention over (batch, length, dim) inputs."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        if dim % heads:
            raise ConformanceError(f"attention: dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self._identity_weights = False

    def force_identity_weights(self, enabled: bool = True) -> None:
        """Debug: make every position attend only to itself."""
        self._identity_weights = enabled

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return T.transpose(T.reshape(x, (b, n, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        v = self._split(self.value(x))
        ctx = T.attention(q, k, v, identity_weights=self._identity_weights)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, self.dim))
        return self.out(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x)) with hidden 4*dim."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, 4 * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x)))
        return T.add(x, self.mlp(self.norm2(x)))


class TransformerStack(Module):
    def __init__(self, dim: int, depth: int, heads: int, rng: np.random.Generator) -> None:
        self.blocks = [TransformerBlock(dim, heads, rng) for _ in range(depth)]
        self._passthrough = False

    def set_passthrough(self, enabled: bool = True) -> None:
        """Debug: return inputs unchanged."""
        self._passthrough = enabled

    def __call__(self, x: Tensor) -> Tensor:
        if self._passthrough:
            return x
        for block in self.blocks:
            x = block(x)
        return x
