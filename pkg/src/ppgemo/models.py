"""The three evaluated architectures, assembled from the layer primitives.

All variants share the same convolutional trunk (conv -> pool -> batchnorm
-> dropout, twice) so that performance differences are attributable to the
branch structure alone:

    cnn           trunk -> global max over time -> dense(2, softmax)
    cnn_lstm      trunk -> LSTM (last state)     -> dense(2, softmax)
    cnn_tcn_lstm  trunk -> TCN last step (F) and LSTM last state (U)
                        -> concat (F+U)          -> dense(2, softmax)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn.layers import (
    BatchNorm1d,
    BatchNorm1dSpec,
    Conv1d,
    Conv1dSpec,
    Dense,
    DenseSpec,
    Dropout,
    DropoutSpec,
    GlobalMaxPool,
    MaxPool1d,
    MaxPool1dSpec,
)
from .nn.lstm import Lstm, LstmSpec
from .nn.tcn import Tcn, TcnSpec

VARIANTS = ("cnn", "cnn_lstm", "cnn_tcn_lstm")

MANIFEST_FORMAT = "ppgemo-model/1"


@dataclass(frozen=True)
class ConvStage:
    filters: int
    kernel_size: int
    stride: int

    def __post_init__(self):
        if min(self.filters, self.kernel_size, self.stride) < 1:
            raise ConfigError(f"conv stage fields must be >= 1, got {self}")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the defaults are the evaluated model."""

    input_len: int = 6000
    conv1: ConvStage = field(default_factory=lambda: ConvStage(8, 64, 4))
    conv2: ConvStage = field(default_factory=lambda: ConvStage(16, 32, 2))
    pool_size: int = 2
    dropout: float = 0.3
    tcn: TcnSpec = field(default_factory=TcnSpec)
    lstm_units: int = 12
    output_classes: int = 2
    variant: str = "cnn_tcn_lstm"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_len < 1:
            raise ConfigError(f"input_len must be >= 1, got {self.input_len}")
        if self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lstm_units < 1:
            raise ConfigError(f"lstm_units must be >= 1, got {self.lstm_units}")
        if self.output_classes < 2:
            raise ConfigError(f"output_classes must be >= 2, got {self.output_classes}")


def model_config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["tcn"]["dilations"] = list(config.tcn.dilations)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    try:
        d["conv1"] = ConvStage(**d["conv1"])
        d["conv2"] = ConvStage(**d["conv2"])
        tcn = dict(d["tcn"])
        tcn["dilations"] = tuple(tcn["dilations"])
        d["tcn"] = TcnSpec(**tcn)
        return ModelConfig(**d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model config: {exc}") from exc


class Model:
    """Ordered layer graph with an explicit train/infer mode on forward.

    `shape_trace` records the (stage, shape) sequence of the latest
    forward call. Parameters are exposed as one flat dict of live arrays
    keyed by dotted layer paths, which the optimizer updates in place.
    """

    def __init__(self, config: ModelConfig, trunk, branches, head):
        self.config = config
        self.trunk = trunk  # list of (name, layer)
        self.branches = branches  # dict name -> layer
        self.head = head
        self.shape_trace: list[tuple[str, tuple[int, ...]]] = []

    # -- parameter plumbing -------------------------------------------------

    def _named_layers(self):
        for name, layer in self.trunk:
            yield f"trunk.{name}", layer
        for name, layer in self.branches.items():
            yield name, layer
        yield "head", self.head

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for scope, layer in self._named_layers():
            for k, v in layer.named_params().items():
                out[f"{scope}.{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for scope, layer in self._named_layers():
            for k, v in layer.named_grads().items():
                out[f"{scope}.{k}"] = v
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for scope, layer in self._named_layers():
            for k, v in layer.named_buffers().items():
                out[f"{scope}.{k}"] = v
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameters and buffers, e.g. for restore-best."""
        return {k: v.copy() for k, v in {**self.params(), **self.buffers()}.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        live = {**self.params(), **self.buffers()}
        if set(snap) != set(live):
            raise ConfigError(
                f"snapshot keys do not match this model "
                f"(missing {sorted(set(live) - set(snap))[:3]}...)"
            )
        for k, arr in live.items():
            arr[...] = snap[k]

    # -- forward / backward ---------------------------------------------------

    def forward(self, x, mode="infer", rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.config.input_len or x.shape[2] != 1:
            raise ShapeError(
                f"stage input: expected [batch, {self.config.input_len}, 1], "
                f"got {x.shape}"
            )
        trace = [("input", x.shape)]
        h = x
        for name, layer in self.trunk:
            h = layer.forward(h, mode, rng)
            trace.append((name, h.shape))
        variant = self.config.variant
        if variant == "cnn":
            feat = self.branches["gpool"].forward(h, mode, rng)
            trace.append(("gpool", feat.shape))
        elif variant == "cnn_lstm":
            feat = self.branches["lstm"].forward(h, mode, rng)
            trace.append(("lstm", feat.shape))
        else:
            t_feat = self.branches["tcn"].forward(h, mode, rng)
            trace.append(("tcn", t_feat.shape))
            l_feat = self.branches["lstm"].forward(h, mode, rng)
            trace.append(("lstm", l_feat.shape))
            feat = np.concatenate([t_feat, l_feat], axis=1)
            trace.append(("concat", feat.shape))
        probs = self.head.forward(feat, mode, rng)
        trace.append(("head", probs.shape))
        self.shape_trace = trace
        return probs

    def backward(self, dprobs) -> np.ndarray:
        dfeat = self.head.backward(dprobs)
        variant = self.config.variant
        if variant == "cnn":
            dh = self.branches["gpool"].backward(dfeat)
        elif variant == "cnn_lstm":
            dh = self.branches["lstm"].backward(dfeat)
        else:
            split = self.config.tcn.filters
            dh = self.branches["tcn"].backward(dfeat[:, :split])
            dh = dh + self.branches["lstm"].backward(dfeat[:, split:])
        for _, layer in reversed(self.trunk):
            dh = layer.backward(dh)
        return dh

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """JSON manifest: config plus every array as shape + row-major values."""

        def pack(d):
            return {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in d.items()
            }

        manifest = {
            "format": MANIFEST_FORMAT,
            "config": model_config_to_dict(self.config),
            "params": pack(self.params()),
            "buffers": pack(self.buffers()),
            "bn_initialized": any(
                getattr(layer, "seen_batch", False) for _, layer in self._named_layers()
            ),
        }
        with open(path, "w") as fh:
            json.dump(manifest, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Model":
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ConfigError(
                f"unsupported model manifest format {manifest.get('format')!r}"
            )
        config = model_config_from_dict(manifest["config"])
        model = build(config, np.random.default_rng(0))
        stored = {}
        for section in ("params", "buffers"):
            for k, v in manifest[section].items():
                stored[k] = np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
        model.restore(stored)
        if manifest.get("bn_initialized"):
            for _, layer in model._named_layers():
                if isinstance(layer, BatchNorm1d):
                    layer.seen_batch = True
        return model


def build(config: ModelConfig, rng: np.random.Generator) -> Model:
    """Construct a model; trunk parameters are drawn first so all variants
    share identical trunk shapes (and values, for a given rng)."""
    trunk = []
    ch = 1  # raw PPG is the single input channel
    for idx, conv in ((1, config.conv1), (2, config.conv2)):
        spec = Conv1dSpec(conv.filters, conv.kernel_size, conv.stride, "same", "relu")
        trunk.append((f"conv{idx}", Conv1d(ch, spec, rng)))
        trunk.append((f"pool{idx}", MaxPool1d(MaxPool1dSpec(config.pool_size))))
        trunk.append((f"bn{idx}", BatchNorm1d(conv.filters, BatchNorm1dSpec())))
        trunk.append((f"drop{idx}", Dropout(DropoutSpec(config.dropout))))
        ch = conv.filters

    branches = {}
    if config.variant == "cnn":
        branches["gpool"] = GlobalMaxPool()
        feat = ch
    elif config.variant == "cnn_lstm":
        branches["lstm"] = Lstm(ch, LstmSpec(config.lstm_units), rng)
        feat = config.lstm_units
    elif config.variant == "cnn_tcn_lstm":
        branches["tcn"] = Tcn(ch, config.tcn, rng)
        branches["lstm"] = Lstm(ch, LstmSpec(config.lstm_units), rng)
        feat = config.tcn.filters + config.lstm_units
    else:  # pragma: no cover - rejected by ModelConfig
        raise ConfigError(f"unknown variant {config.variant!r}")

    head = Dense(feat, DenseSpec(config.output_classes, "softmax"), rng)
    return Model(config, trunk, branches, head)
