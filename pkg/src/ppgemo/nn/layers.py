"""Dense-tensor layer primitives with exact reverse-mode gradients.

Tensors are plain float64 numpy arrays in row-major order. Every layer
follows one protocol: ``forward(x, mode, rng)`` computes the output and
records the values needed for differentiation (the tape), and
``backward(dy)`` consumes that tape, fills ``self.grads`` with parameter
gradients, and returns the gradient with respect to the layer input.
Randomness is never ambient: layers that need it take an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, StateError

MODES = ("train", "infer")
PADDINGS = ("same", "causal")
CONV_ACTIVATIONS = ("relu", "none")
DENSE_ACTIVATIONS = ("softmax", "none")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for numerical stability."""
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Layer:
    """Base forward/backward pair with parameter and gradient dicts."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, mode="train", rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def named_params(self) -> dict[str, np.ndarray]:
        """Live references to the trainable arrays."""
        return dict(self.params)

    def named_grads(self) -> dict[str, np.ndarray]:
        return dict(self.grads)

    def named_buffers(self) -> dict[str, np.ndarray]:
        """Live references to non-trainable state (e.g. running stats)."""
        return {}

    def kink_margin(self) -> float:
        """Distance from the last forward pass to the nearest point where
        the layer is not differentiable (relu corner, pooling tie). Used
        by the finite-difference checker to reject ill-posed cases."""
        return np.inf

    def _tape(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache


@dataclass(frozen=True)
class Conv1dSpec:
    filters: int
    kernel_size: int
    stride: int = 1
    padding: str = "same"
    activation: str = "none"
    dilation: int = 1

    def __post_init__(self):
        if self.filters < 1:
            raise ConfigError(f"filters must be >= 1, got {self.filters}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding not in PADDINGS:
            raise ConfigError(f"padding must be one of {PADDINGS}, got {self.padding!r}")
        if self.activation not in CONV_ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {CONV_ACTIVATIONS}, got {self.activation!r}"
            )
        if self.padding == "causal" and self.stride != 1:
            raise ConfigError("causal padding supports stride 1 only")
        if self.padding == "same" and self.dilation != 1:
            raise ConfigError("dilation > 1 is only supported with causal padding")


class Conv1d(Layer):
    """1-d convolution over [batch, time, channels] inputs.

    'same' padding keeps time_out = ceil(time / stride), splitting the
    total pad floor(pad/2) left and the remainder right. 'causal' padding
    puts all (kernel-1)*dilation pad samples on the left so output t never
    sees input beyond t, and keeps time_out = time.
    """

    def __init__(self, in_channels: int, spec: Conv1dSpec, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.spec = spec
        k, f = spec.kernel_size, spec.filters
        self.params = {
            "W": glorot_uniform(rng, (k, in_channels, f), k * in_channels, k * f),
            "b": np.zeros(f),
        }

    def output_len(self, time: int) -> int:
        if self.spec.padding == "same":
            return -(-time // self.spec.stride)
        return time

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeError(
                f"conv1d expected [batch, time, {self.in_channels}], got {x.shape}"
            )
        spec = self.spec
        k, s, d = spec.kernel_size, spec.stride, spec.dilation
        bsz, t, _ = x.shape
        if spec.padding == "same":
            t_out = -(-t // s)
            pad = max((t_out - 1) * s + k - t, 0)
            left = pad // 2
            right = pad - left
        else:
            t_out = t
            left = (k - 1) * d
            right = 0
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        w = self.params["W"]
        z = np.zeros((bsz, t_out, spec.filters))
        span = (t_out - 1) * s + 1
        for j in range(k):
            z += xp[:, j * d : j * d + span : s, :] @ w[j]
        z += self.params["b"]
        self._cache = (xp, z, t, left)
        if spec.activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def backward(self, dy):
        xp, z, t, left = self._tape()
        spec = self.spec
        k, s, d = spec.kernel_size, spec.stride, spec.dilation
        dy = np.asarray(dy, dtype=np.float64)
        if spec.activation == "relu":
            dy = dy * (z > 0.0)
        w = self.params["W"]
        dw = np.empty_like(w)
        dxp = np.zeros_like(xp)
        t_out = dy.shape[1]
        span = (t_out - 1) * s + 1
        for j in range(k):
            sl = slice(j * d, j * d + span, s)
            dw[j] = np.einsum("btc,btf->cf", xp[:, sl, :], dy)
            dxp[:, sl, :] += dy @ w[j].T
        self.grads = {"W": dw, "b": dy.sum(axis=(0, 1))}
        return dxp[:, left : left + t, :]

    def kink_margin(self) -> float:
        if self._cache is None or self.spec.activation != "relu":
            return np.inf
        z = self._cache[1]
        return float(np.abs(z).min()) if z.size else np.inf


@dataclass(frozen=True)
class MaxPool1dSpec:
    pool_size: int
    stride: int | None = None  # defaults to pool_size (non-overlapping)

    def __post_init__(self):
        if self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")


class MaxPool1d(Layer):
    """Per-channel window maximum; trailing samples that cannot fill a
    window are dropped."""

    def __init__(self, spec: MaxPool1dSpec):
        super().__init__()
        self.pool = spec.pool_size
        self.stride = spec.stride if spec.stride is not None else spec.pool_size

    def output_len(self, time: int) -> int:
        return (time - self.pool) // self.stride + 1

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"maxpool expected [batch, time, channels], got {x.shape}")
        bsz, t, c = x.shape
        if t < self.pool:
            raise ShapeError(f"time axis {t} shorter than pool window {self.pool}")
        t_out = (t - self.pool) // self.stride + 1
        starts = np.arange(t_out) * self.stride
        windows = x[:, starts[:, None] + np.arange(self.pool)[None, :], :]
        arg = windows.argmax(axis=2)
        out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (x, starts, arg)
        return out

    def backward(self, dy):
        x, starts, arg = self._tape()
        dy = np.asarray(dy, dtype=np.float64)
        dx = np.zeros_like(x)
        pos = starts[None, :, None] + arg
        bb = np.arange(x.shape[0])[:, None, None]
        cc = np.arange(x.shape[2])[None, None, :]
        # add.at handles positions selected by several overlapping windows
        np.add.at(dx, (bb, pos, cc), dy)
        return dx

    def kink_margin(self) -> float:
        if self._cache is None:
            return np.inf
        x, starts, _ = self._cache
        windows = x[:, starts[:, None] + np.arange(self.pool)[None, :], :]
        if windows.shape[2] < 2:
            return np.inf
        top2 = np.sort(windows, axis=2)[:, :, -2:, :]
        return float((top2[:, :, 1, :] - top2[:, :, 0, :]).min())


class GlobalMaxPool(Layer):
    """Maximum over the time axis: [batch, time, channels] -> [batch, channels]."""

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"global max pool expected 3-d input, got {x.shape}")
        arg = x.argmax(axis=1)
        self._cache = (x, arg)
        return np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]

    def backward(self, dy):
        x, arg = self._tape()
        dy = np.asarray(dy, dtype=np.float64)
        dx = np.zeros_like(x)
        bb = np.arange(x.shape[0])[:, None]
        cc = np.arange(x.shape[2])[None, :]
        dx[bb, arg, cc] = dy
        return dx

    def kink_margin(self) -> float:
        if self._cache is None:
            return np.inf
        x, _ = self._cache
        if x.shape[1] < 2:
            return np.inf
        top2 = np.sort(x, axis=1)[:, -2:, :]
        return float((top2[:, 1, :] - top2[:, 0, :]).min())


@dataclass(frozen=True)
class BatchNorm1dSpec:
    # 0.9 keeps inference within ~10 updates of the weights; framework-style
    # 0.99 assumes hundreds of optimizer steps per epoch, which subject-scale
    # PPG training does not have (often a single batch per epoch)
    momentum: float = 0.9
    epsilon: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


class BatchNorm1d(Layer):
    """Channel-wise normalization pooling statistics over batch and time.

    Train mode normalizes with the current batch's statistics and keeps an
    exponential moving average (running = m*running + (1-m)*batch) for
    inference; infer mode uses the running statistics only and fails if no
    training batch has ever been seen.
    """

    def __init__(self, channels: int, spec: BatchNorm1dSpec):
        super().__init__()
        self.channels = channels
        self.spec = spec
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.seen_batch = False

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise ShapeError(
                f"batchnorm expected [batch, time, {self.channels}], got {x.shape}"
            )
        if mode == "train":
            mean = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            # in-place so external references to the buffers stay live;
            # the first batch seeds the running stats outright, otherwise
            # inference is biased toward the arbitrary 0/1 init for the
            # first ~1/(1-momentum) updates
            m = self.spec.momentum if self.seen_batch else 0.0
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mean
            self.running_var *= m
            self.running_var += (1.0 - m) * var
            self.seen_batch = True
        else:
            if not self.seen_batch:
                raise StateError(
                    "batchnorm inference requested before any training batch"
                )
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.spec.epsilon)
        xhat = (x - mean) * inv
        out = self.params["gamma"] * xhat + self.params["beta"]
        self._cache = (xhat, inv, mode, x.shape[0] * x.shape[1])
        return out

    def backward(self, dy):
        xhat, inv, mode, n = self._tape()
        dy = np.asarray(dy, dtype=np.float64)
        g = self.params["gamma"]
        dgamma = (dy * xhat).sum(axis=(0, 1))
        dbeta = dy.sum(axis=(0, 1))
        self.grads = {"gamma": dgamma, "beta": dbeta}
        if mode == "train":
            # batch statistics depend on every element, hence the centering terms
            return (g * inv) * (dy - dbeta / n - xhat * (dgamma / n))
        return dy * g * inv


@dataclass(frozen=True)
class DropoutSpec:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"rate must be in [0, 1), got {self.rate}")


class Dropout(Layer):
    """Inverted dropout: train-time zeroing with a 1/(1-rate) rescale on
    the survivors, so inference is exactly the identity."""

    def __init__(self, spec: DropoutSpec):
        super().__init__()
        self.rate = spec.rate

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if mode == "infer" or self.rate == 0.0:
            self._cache = (None,)
            return x
        if rng is None:
            raise StateError("dropout in train mode needs an explicit rng")
        scale = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = (scale,)
        return x * scale

    def backward(self, dy):
        (scale,) = self._tape()
        dy = np.asarray(dy, dtype=np.float64)
        return dy if scale is None else dy * scale


@dataclass(frozen=True)
class DenseSpec:
    units: int
    activation: str = "none"

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError(f"units must be >= 1, got {self.units}")
        if self.activation not in DENSE_ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {DENSE_ACTIVATIONS}, got {self.activation!r}"
            )


class Dense(Layer):
    """Affine map on [batch, features], optionally through softmax."""

    def __init__(self, in_features: int, spec: DenseSpec, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.spec = spec
        self.params = {
            "W": glorot_uniform(rng, (in_features, spec.units), in_features, spec.units),
            "b": np.zeros(spec.units),
        }

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expected [batch, {self.in_features}], got {x.shape}")
        z = x @ self.params["W"] + self.params["b"]
        if self.spec.activation == "softmax":
            p = softmax(z)
            self._cache = (x, p)
            return p
        self._cache = (x, None)
        return z

    def backward(self, dy):
        x, p = self._tape()
        dy = np.asarray(dy, dtype=np.float64)
        if p is not None:
            dz = p * (dy - (dy * p).sum(axis=1, keepdims=True))
        else:
            dz = dy
        self.grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T
