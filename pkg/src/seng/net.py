"""A small feed-forward network whose backward pass keeps per-sample
gradient factors.

For every parametric layer and sample ``i`` the weight gradient of the
per-sample loss is ``G_hat[i] @ A_hat[i].T``: ``A_hat`` is the layer input
(or its im2col patch matrix) and ``G_hat`` the back-propagated output signal.
Layers carry no bias so that ``n == n_G * n_A`` holds exactly.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .linalg import vec


class StructureError(ValueError):
    """Shape mismatch between a layer and its input, or a misused cache."""


@dataclass
class GradientFactors:
    """Per-sample factors of one layer's gradient.

    ``G_hat`` has shape ``(batch, n_G, kappa)`` and ``A_hat`` has shape
    ``(batch, n_A, kappa)``. Unbatched 2-D factors are accepted too.
    """

    G_hat: np.ndarray
    A_hat: np.ndarray

    def __post_init__(self):
        if self.G_hat.ndim != self.A_hat.ndim or self.G_hat.shape[-1] != self.A_hat.shape[-1]:
            raise StructureError(
                f"factor shapes {self.G_hat.shape} and {self.A_hat.shape} disagree")

    @property
    def n_G(self):
        return self.G_hat.shape[-2]

    @property
    def n_A(self):
        return self.A_hat.shape[-2]

    @property
    def kappa(self):
        return self.G_hat.shape[-1]

    @property
    def n(self):
        return self.n_G * self.n_A

    def __len__(self):
        return self.G_hat.shape[0] if self.G_hat.ndim == 3 else 1

    def sample(self, i):
        return GradientFactors(self.G_hat[i], self.A_hat[i])

    def subset(self, idx):
        return GradientFactors(self.G_hat[idx], self.A_hat[idx])


def materialize_gradient(f):
    """``vec(G_hat @ A_hat.T)``, one row per sample for batched factors."""
    prod = np.matmul(f.G_hat, np.swapaxes(f.A_hat, -1, -2))
    if prod.ndim == 2:
        return vec(prod)
    return prod.reshape(prod.shape[0], -1)


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description used by :meth:`Network.from_specs`."""

    kind: str
    out_features: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0

    @classmethod
    def parse(cls, text):
        """Parse ``dense:64``, ``conv:8:3:1:1`` (channels, kernel, stride, padding),
        ``relu`` or ``flatten``."""
        parts = text.strip().split(":")
        kind = parts[0].lower()
        nums = [int(p) for p in parts[1:]]
        if kind == "dense" and len(nums) == 1:
            return cls("dense", out_features=nums[0])
        if kind in ("conv", "conv2d") and 1 <= len(nums) <= 4:
            defaults = [0, 1, 1, 0]
            defaults[: len(nums)] = nums
            c, k, s, p = defaults
            return cls("conv2d", out_channels=c, kernel=k, stride=s, padding=p)
        if kind in ("relu", "flatten") and not nums:
            return cls(kind)
        raise ValueError(f"bad layer spec {text!r}")


class Layer:
    parametric = False
    name = "layer"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dout):
        raise NotImplementedError


class Dense(Layer):
    """``y = x @ W.T`` with ``W`` of shape (out_features, in_features); kappa = 1."""

    parametric = True

    def __init__(self, in_features, out_features, rng=None):
        self.in_features = in_features
        self.out_features = out_features
        self.name = f"dense({in_features}->{out_features})"
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = rng.standard_normal((out_features, in_features)) * np.sqrt(2.0 / in_features)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise StructureError(f"{self.name}: expected input ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    @property
    def factor_dims(self):
        return self.out_features, self.in_features

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise StructureError(f"{self.name}: input shape {x.shape}")
        return x @ self.W.T, x

    def backward(self, x, dout):
        factors = GradientFactors(dout[:, :, None], x[:, :, None])
        return dout @ self.W, factors


class Conv2d(Layer):
    """2-D convolution as ``W @ im2col(x)``; ``W`` is (out_channels, C*k*k)."""

    parametric = True

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, rng=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.name = f"conv2d({in_channels}->{out_channels},k={kernel},s={stride},p={padding})"
        fan_in = in_channels * kernel * kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = rng.standard_normal((out_channels, fan_in)) * np.sqrt(2.0 / fan_in)

    @property
    def factor_dims(self):
        return self.out_channels, self.in_channels * self.kernel * self.kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise StructureError(f"{self.name}: expected ({self.in_channels}, H, W), got {in_shape}")
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise StructureError(f"{self.name}: input {in_shape} smaller than kernel")
        return (self.out_channels, ho, wo)

    def forward(self, x):
        if x.ndim != 4:
            raise StructureError(f"{self.name}: input shape {x.shape}")
        _, ho, wo = self.output_shape(x.shape[1:])
        patches = kernels.im2col(x, self.kernel, self.kernel, self.stride, self.padding)
        y = np.matmul(self.W, patches)
        return y.reshape(x.shape[0], self.out_channels, ho, wo), (x.shape, patches)

    def backward(self, cache, dout):
        x_shape, patches = cache
        delta = dout.reshape(dout.shape[0], self.out_channels, -1)
        factors = GradientFactors(delta, patches)
        dcols = np.matmul(self.W.T, delta)
        dx = kernels.col2im(dcols, x_shape, self.kernel, self.kernel, self.stride, self.padding)
        return dx, factors


class ReLU(Layer):
    name = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dout):
        return dout * mask, None


class Flatten(Layer):
    name = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dout):
        return dout.reshape(shape), None


@dataclass
class ForwardCache:
    caches: list
    version: int
    used: bool = False


class Network:
    """Sequential stack of layers with per-sample factor extraction."""

    def __init__(self, layers: Sequence[Layer], input_shape=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self._version = 0
        if self.input_shape is not None:
            shape = self.input_shape
            for layer in self.layers:
                shape = layer.output_shape(shape)
            self.output_shape = shape

    @classmethod
    def from_specs(cls, specs, input_shape, seed=0):
        rng = np.random.default_rng(seed)
        shape = tuple(input_shape)
        layers: List[Layer] = []
        for spec in specs:
            if isinstance(spec, str):
                spec = LayerSpec.parse(spec)
            if spec.kind == "dense":
                if len(shape) != 1:
                    layers.append(Flatten())
                    shape = (int(np.prod(shape)),)
                layer = Dense(shape[0], spec.out_features, rng=rng)
            elif spec.kind == "conv2d":
                layer = Conv2d(shape[0], spec.out_channels, spec.kernel, spec.stride,
                               spec.padding, rng=rng)
            elif spec.kind == "relu":
                layer = ReLU()
            elif spec.kind == "flatten":
                layer = Flatten()
            else:
                raise StructureError(f"unknown layer kind {spec.kind!r}")
            shape = layer.output_shape(shape)
            layers.append(layer)
        return cls(layers, input_shape)

    @property
    def param_layers(self):
        return [layer for layer in self.layers if layer.parametric]

    @property
    def params(self):
        return [layer.W for layer in self.param_layers]

    def set_params(self, params):
        layers = self.param_layers
        if len(params) != len(layers):
            raise StructureError(f"expected {len(layers)} parameter arrays, got {len(params)}")
        for layer, w in zip(layers, params):
            if w.shape != layer.W.shape:
                raise StructureError(f"{layer.name}: parameter shape {w.shape} != {layer.W.shape}")
            layer.W = np.array(w, dtype=np.float64)
        self.touch()

    def touch(self):
        """Mark parameters as modified, invalidating outstanding caches."""
        self._version += 1

    def flat_params(self):
        return np.concatenate([vec(w) for w in self.params])

    def forward(self, x):
        """Run the batch ``x`` through the network; returns ``(outputs, cache)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            raise StructureError("empty batch")
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, ForwardCache(caches, self._version)

    def predict(self, x):
        return self.forward(x)[0]

    def backward_factors(self, cache: ForwardCache, dout, reduction="mean"):
        """Per-layer :class:`GradientFactors` plus the batch gradient.

        ``dout`` holds per-sample loss gradients w.r.t. the outputs. The batch
        gradient is the mean (or sum) over samples of the per-sample layer
        gradients, returned as one flat vector per parametric layer.
        """
        if cache.version != self._version or cache.used:
            raise StructureError("stale forward cache")
        cache.used = True
        factors: List[Optional[GradientFactors]] = []
        delta = np.asarray(dout, dtype=np.float64)
        for layer, c in zip(reversed(self.layers), reversed(cache.caches)):
            delta, f = layer.backward(c, delta)
            if layer.parametric:
                factors.append(f)
        factors.reverse()
        batch = delta.shape[0]
        grads = []
        for f in factors:
            g = vec(np.einsum("igk,iak->ga", f.G_hat, f.A_hat))
            grads.append(g / batch if reduction == "mean" else g)
        return factors, grads


def loss_and_grad(f, y, kind="mse", reduction="mean"):
    """Loss value and per-sample gradients w.r.t. the outputs ``f``.

    MSE uses ``psi_i = 0.5 * ||f_i - y_i||^2``; cross-entropy takes integer
    class targets. ``reduction`` only affects the returned scalar.
    """
    f = np.asarray(f, dtype=np.float64)
    if kind == "mse":
        y = np.asarray(y, dtype=np.float64).reshape(f.shape)
        r = f - y
        per = 0.5 * np.sum(r.reshape(r.shape[0], -1) ** 2, axis=1)
        grad = r
    elif kind == "cross_entropy":
        y = np.asarray(y)
        if y.shape != (f.shape[0],) or not np.issubdtype(y.dtype, np.integer):
            raise ValueError("cross_entropy targets must be one integer class per sample")
        if np.any(y < 0) or np.any(y >= f.shape[1]):
            raise ValueError(f"class index out of range [0, {f.shape[1]})")
        z = f - f.max(axis=1, keepdims=True)
        logsum = np.log(np.sum(np.exp(z), axis=1))
        idx = np.arange(f.shape[0])
        per = logsum - z[idx, y]
        grad = np.exp(z - logsum[:, None])
        grad[idx, y] -= 1.0
    else:
        raise ValueError(f"unknown loss {kind!r}")
    loss = float(per.mean() if reduction == "mean" else per.sum())
    return loss, grad


def accuracy(f, y):
    return float(np.mean(np.argmax(f, axis=1) == np.asarray(y)))


def mlp(in_features, hidden, out_features, seed=0):
    """Dense-ReLU-...-Dense stack."""
    specs = []
    for h in hidden:
        specs += [LayerSpec("dense", out_features=h), LayerSpec("relu")]
    specs.append(LayerSpec("dense", out_features=out_features))
    return Network.from_specs(specs, (in_features,), seed=seed)
