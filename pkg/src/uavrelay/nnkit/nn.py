"""Parameter store and the layer zoo used by the learner.

Initialization is uniform fan-in scaling (U(-1/sqrt(fan_in), +1/sqrt(fan_in)))
for weights and zeros for biases.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .tensor import Tensor, avg_pool2d, conv2d, matmul, relu, reshape, sigmoid, tanh


class ParamStore:
    """Ordered name -> parameter map; shapes are frozen after creation."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.version = 0

    def create(self, name: str, shape: tuple[int, ...], rng: Optional[np.random.Generator],
               fan_in: Optional[int] = None) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        if fan_in is None or rng is None:
            data = np.zeros(shape, dtype=self.dtype)
        else:
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            data = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
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

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def copy_from(self, other: "ParamStore") -> None:
        """Bit-exact copy of every matching-shape parameter (target sync)."""
        if self.names() != other.names():
            raise ValueError("parameter stores have different layouts")
        for name, t in self._params.items():
            src = other[name]
            if src.data.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            t.data = src.data.copy()
        self.version += 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            a = np.asarray(arrays[name], dtype=self.dtype)
            if a.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            t.data = a.copy()
        self.version += 1


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y + b if b is not None else y


class Dense:
    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.w = store.create(f"{prefix}/w", (n_in, n_out), rng, fan_in=n_in)
        self.b = store.create(f"{prefix}/b", (n_out,), rng=None)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)


_GRU_GATES = ("z", "r", "h")


def create_gru_params(store: ParamStore, prefix: str, n_in: int, n_hidden: int,
                      rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for gate in _GRU_GATES:
        params[f"W_{gate}"] = store.create(f"{prefix}/W_{gate}", (n_in, n_hidden), rng, fan_in=n_in)
        params[f"U_{gate}"] = store.create(f"{prefix}/U_{gate}", (n_hidden, n_hidden), rng,
                                           fan_in=n_hidden)
        params[f"b_{gate}"] = store.create(f"{prefix}/b_{gate}", (n_hidden,), rng=None)
    return params


def gru_cell(x: Tensor, h_prev: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Standard gated recurrent unit step.

    z = sig(x W_z + h U_z + b_z); r = sig(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r*h) U_h + b_h); h' = (1-z)*h + z*h~
    """
    z = sigmoid(matmul(x, p["W_z"]) + matmul(h_prev, p["U_z"]) + p["b_z"])
    r = sigmoid(matmul(x, p["W_r"]) + matmul(h_prev, p["U_r"]) + p["b_r"])
    h_tilde = tanh(matmul(x, p["W_h"]) + matmul(r * h_prev, p["U_h"]) + p["b_h"])
    one = Tensor(np.ones((), dtype=z.dtype))
    return (one - z) * h_prev + z * h_tilde


class GruCell:
    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.params = create_gru_params(store, prefix, n_in, n_hidden, rng)

    def __call__(self, x: Tensor, h_prev: Tensor) -> Tensor:
        return gru_cell(x, h_prev, self.params)

    def zero_state(self, batch: int, dtype) -> Tensor:
        return Tensor(np.zeros((batch, self.n_hidden), dtype=dtype))


def _pick_pool(n: int) -> int:
    for d in (4, 3, 2):
        if n % d == 0:
            return d
    return 1


class ResidualExtractor:
    """Strided input conv, residual conv blocks, average pool, flatten.

    Block form: y = relu(x + conv(relu(conv(x)))), channels preserved.
    """

    def __init__(self, store: ParamStore, prefix: str, in_shape: tuple[int, int, int],
                 rng: np.random.Generator, trunk_channels: int = 8, blocks: int = 2,
                 stride: Optional[tuple[int, int]] = None):
        c, h, w = in_shape
        self.in_shape = in_shape
        if stride is None:
            # Aim for a trunk of at most ~12 cells per axis.
            stride = (max(1, -(-h // 12)), max(1, -(-w // 12)))
        self.stride = stride
        # Kernel must cover the stride so no input pixel is skipped.
        self.k_in = max(5, max(stride) + 1)
        self.blocks = blocks
        sh, sw = stride

        def trunk(dim: int, s: int, pad: int) -> int:
            return (dim + 2 * pad - self.k_in) // s + 1

        def pick_pad(dim: int, s: int) -> int:
            # Prefer a padding that makes the trunk divisible by 4 (then 3),
            # so pooling actually reduces the flattened feature size.
            base = self.k_in // 2
            for mod in (4, 3):
                for pad in range(base, base + s + 1):
                    t = trunk(dim, s, pad)
                    if t > 0 and t % mod == 0:
                        return pad
            return base

        self.pad_in = (pick_pad(h, sh), pick_pad(w, sw))
        ho = trunk(h, sh, self.pad_in[0])
        wo = trunk(w, sw, self.pad_in[1])
        if ho <= 0 or wo <= 0:
            raise ValueError(f"extractor stride {stride} too large for input {in_shape}")
        self.trunk_hw = (ho, wo)
        self.pool = (_pick_pool(ho), _pick_pool(wo))
        self.out_dim = trunk_channels * (ho // self.pool[0]) * (wo // self.pool[1])

        fan_in = c * self.k_in * self.k_in
        self.w_in = store.create(f"{prefix}/conv_in/w", (trunk_channels, c, self.k_in, self.k_in),
                                 rng, fan_in=fan_in)
        self.b_in = store.create(f"{prefix}/conv_in/b", (trunk_channels,), rng=None)
        self.block_params = []
        fan_blk = trunk_channels * 9
        for i in range(blocks):
            w1 = store.create(f"{prefix}/block{i}/w1", (trunk_channels, trunk_channels, 3, 3),
                              rng, fan_in=fan_blk)
            b1 = store.create(f"{prefix}/block{i}/b1", (trunk_channels,), rng=None)
            w2 = store.create(f"{prefix}/block{i}/w2", (trunk_channels, trunk_channels, 3, 3),
                              rng, fan_in=fan_blk)
            b2 = store.create(f"{prefix}/block{i}/b2", (trunk_channels,), rng=None)
            self.block_params.append((w1, b1, w2, b2))

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(conv2d(x, self.w_in, self.b_in, stride=self.stride,
                        padding=self.pad_in))
        for w1, b1, w2, b2 in self.block_params:
            inner = conv2d(relu(conv2d(y, w1, b1, padding=(1, 1))), w2, b2, padding=(1, 1))
            y = relu(y + inner)
        y = avg_pool2d(y, self.pool)
        return reshape(y, (y.shape[0], self.out_dim))


def residual_extractor(x: Tensor, extractor: ResidualExtractor) -> Tensor:
    return extractor(x)
