"""LSTM layer returning the final hidden state, with exact BPTT.

Recurrence, with sigma the logistic function:

    z_t = x_t W + h_{t-1} R + b          (gates packed as i, f, g, o)
    i, f, o = sigma(z_i), sigma(z_f), sigma(z_o)
    g = tanh(z_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

h_0 = c_0 = 0 and only h_T is emitted. The forget-gate bias starts at 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .layers import Layer, _check_mode, glorot_uniform


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LstmSpec:
    units: int

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError(f"units must be >= 1, got {self.units}")


class Lstm(Layer):
    def __init__(self, in_features: int, spec: LstmSpec, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.units = spec.units
        u = spec.units
        b = np.zeros(4 * u)
        b[u : 2 * u] = 1.0
        self.params = {
            "W": glorot_uniform(rng, (in_features, 4 * u), in_features, 4 * u),
            "R": glorot_uniform(rng, (u, 4 * u), u, 4 * u),
            "b": b,
        }

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeError(
                f"lstm expected [batch, time, {self.in_features}], got {x.shape}"
            )
        bsz, t, _ = x.shape
        u = self.units
        w, r, bias = self.params["W"], self.params["R"], self.params["b"]
        h = np.zeros((bsz, u))
        c = np.zeros((bsz, u))
        gates = np.empty((t, bsz, 4 * u))
        cells = np.empty((t, bsz, u))
        hiddens = np.zeros((t + 1, bsz, u))  # hiddens[k] is h_{k-1} seen by step k
        for k in range(t):
            z = x[:, k, :] @ w + h @ r + bias
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u : 2 * u])
            g = np.tanh(z[:, 2 * u : 3 * u])
            o = _sigmoid(z[:, 3 * u :])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates[k, :, :u] = i
            gates[k, :, u : 2 * u] = f
            gates[k, :, 2 * u : 3 * u] = g
            gates[k, :, 3 * u :] = o
            cells[k] = c
            hiddens[k + 1] = h
        self._cache = (x, gates, cells, hiddens)
        return h

    def backward(self, dh_last):
        x, gates, cells, hiddens = self._tape()
        bsz, t, _ = x.shape
        u = self.units
        w, r = self.params["W"], self.params["R"]
        dw = np.zeros_like(w)
        dr = np.zeros_like(r)
        db = np.zeros_like(self.params["b"])
        dx = np.empty_like(x)
        dh = np.asarray(dh_last, dtype=np.float64).copy()
        dc = np.zeros((bsz, u))
        for k in range(t - 1, -1, -1):
            i = gates[k, :, :u]
            f = gates[k, :, u : 2 * u]
            g = gates[k, :, 2 * u : 3 * u]
            o = gates[k, :, 3 * u :]
            c_prev = cells[k - 1] if k > 0 else np.zeros((bsz, u))
            tc = np.tanh(cells[k])
            do = dh * tc * o * (1.0 - o)
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g * i * (1.0 - i)
            df = dc * c_prev * f * (1.0 - f)
            dg = dc * i * (1.0 - g * g)
            dz = np.concatenate([di, df, dg, do], axis=1)
            dw += x[:, k, :].T @ dz
            dr += hiddens[k].T @ dz
            db += dz.sum(axis=0)
            dx[:, k, :] = dz @ w.T
            dh = dz @ r.T
            dc = dc * f
        self.grads = {"W": dw, "R": dr, "b": db}
        return dx
