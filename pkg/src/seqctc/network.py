"""Network assembly: residual CNN feature extractor, bridge to sequence
form, and dual-direction recurrent branches merged into per-frame logits.

The stack, bottom to top:

    conv 5x5/s1/p1 -> relu -> maxpool 3x3/s1
    [conv 3x3 -> relu -> conv 3x3] + identity shortcut -> relu
    3 x ([conv 3x3/s2 -> relu -> conv 3x3] + conv 1x1/s2 shortcut -> relu)
    permute width to time
    forward branch:  lstm -> lstm -> project -> project-to-logits
    backward branch: reverse -> lstm -> lstm -> project -> project -> reverse
    elementwise sum of both branches = per-frame logits

Rectifiers follow every backbone convolution except the last one inside a
residual branch, where the activation applies after the shortcut sum;
projection shortcuts carry no activation. Softmax is left to the caller so
the CTC loss can fuse with it.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import ConfigError, NumericError, ShapeError, StateError
from .seeding import derive_rng


@dataclass(frozen=True)
class NetworkConfig:
    """Declarative sizes; `scale` shrinks channels and hidden units for
    desk-scale training runs while keeping the topology intact."""

    input_height: int = 32
    input_width: int = 128
    channel_schedule: tuple = (64, 64, 64, 128, 256, 512)
    lstm_hidden: int = 100
    projection_units: int = 100
    output_units: int = 11
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(int(c) for c in self.channel_schedule))
        if len(self.channel_schedule) != 6:
            raise ConfigError(
                f"channel_schedule needs 6 entries (stem, pair, three blocks), got {len(self.channel_schedule)}"
            )
        sizes = (
            self.input_height,
            self.input_width,
            self.lstm_hidden,
            self.projection_units,
            *self.channel_schedule,
        )
        if any(s < 1 for s in sizes):
            raise ConfigError("all configured sizes must be >= 1")
        if self.output_units < 2:
            raise ConfigError("output_units must cover at least one label plus blank")
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.channel_schedule[2] != self.channel_schedule[0]:
            raise ConfigError(
                "third channel entry must match the first: the identity shortcut "
                f"adds the pooled stem to the conv pair output ({self.channel_schedule})"
            )

    def _scaled(self, n):
        return max(1, int(round(n * self.scale)))

    @property
    def channels(self):
        return tuple(self._scaled(c) for c in self.channel_schedule)

    @property
    def hidden(self):
        return self._scaled(self.lstm_hidden)

    @property
    def projection(self):
        return self._scaled(self.projection_units)

    def to_dict(self):
        return {
            "input_height": self.input_height,
            "input_width": self.input_width,
            "channel_schedule": list(self.channel_schedule),
            "lstm_hidden": self.lstm_hidden,
            "projection_units": self.projection_units,
            "output_units": self.output_units,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_height=int(d["input_height"]),
            input_width=int(d["input_width"]),
            channel_schedule=tuple(d["channel_schedule"]),
            lstm_hidden=int(d["lstm_hidden"]),
            projection_units=int(d["projection_units"]),
            output_units=int(d["output_units"]),
            scale=float(d["scale"]),
        )


def _shrink(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if span < 0:
        raise ConfigError(f"{what}: kernel {k} exceeds input extent {size} (pad {pad})")
    out = span // stride + 1
    if out < 1:
        raise ConfigError(f"{what}: spatial extent collapses to {out}")
    return out


def _conv_stack_geometry(config: NetworkConfig):
    """(height, width) trace through the extractor; raises ConfigError when
    any stage collapses."""
    h, w = config.input_height, config.input_width
    h, w = _shrink(h, 5, 1, 1, "stem conv"), _shrink(w, 5, 1, 1, "stem conv")
    h, w = _shrink(h, 3, 1, 0, "maxpool"), _shrink(w, 3, 1, 0, "maxpool")
    # the 3x3/s1/p1 pair preserves extent
    for i in range(3):
        name = f"block{i + 1}"
        h, w = _shrink(h, 3, 2, 1, name), _shrink(w, 3, 2, 1, name)
    return h, w


def parameter_specs(config: NetworkConfig):
    """Ordered mapping name -> (shape, init kind, fan_in)."""
    c = config.channels
    final_h, _ = _conv_stack_geometry(config)
    feature_dim = c[5] * final_h
    hidden = config.hidden
    proj = config.projection
    out = config.output_units

    specs = {}

    def conv(name, cout, cin, k):
        specs[f"{name}.w"] = ((cout, cin, k, k), "uniform", cin * k * k)
        specs[f"{name}.b"] = ((cout,), "zeros", 0)

    conv("conv1", c[0], 1, 5)
    conv("conv2", c[1], c[0], 3)
    conv("conv3", c[2], c[1], 3)
    cin = c[2]
    for i, cout in enumerate((c[3], c[4], c[5]), start=1):
        conv(f"block{i}.conv_a", cout, cin, 3)
        conv(f"block{i}.conv_b", cout, cout, 3)
        conv(f"block{i}.proj", cout, cin, 1)
        cin = cout

    for branch in ("fwd", "bwd"):
        for stage, d_in in (("lstm1", feature_dim), ("lstm2", hidden)):
            specs[f"{branch}.{stage}.wx"] = ((d_in, 4 * hidden), "uniform", d_in)
            specs[f"{branch}.{stage}.wh"] = ((hidden, 4 * hidden), "uniform", hidden)
            specs[f"{branch}.{stage}.b"] = ((4 * hidden,), "lstm_bias", 0)
        specs[f"{branch}.proj.w"] = ((hidden, proj), "uniform", hidden)
        specs[f"{branch}.proj.b"] = ((proj,), "zeros", 0)
        specs[f"{branch}.out.w"] = ((proj, out), "uniform", proj)
        specs[f"{branch}.out.b"] = ((out,), "zeros", 0)
    return specs


def init_parameters(config: NetworkConfig, seed: int):
    """Every parameter draws from its own named substream of `seed`, so the
    values of one block never depend on the presence of another."""
    params = {}
    for name, (shape, kind, fan_in) in parameter_specs(config).items():
        if kind == "zeros":
            params[name] = np.zeros(shape)
        elif kind == "lstm_bias":
            params[name] = layers.lstm_bias_init(shape[0] // 4)
        else:
            params[name] = layers.uniform_fan_in(derive_rng(seed, "init", name), shape, fan_in)
    return params


def topology_fingerprint(config: NetworkConfig) -> str:
    """Stable hash of layer kinds and every parameter shape."""
    payload = {
        "family": "residual-bilstm-ctc",
        "input": [config.input_height, config.input_width],
        "params": [[name, list(spec[0])] for name, spec in sorted(parameter_specs(config).items())],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class NetworkCache:
    fingerprint: str
    items: dict = field(default_factory=dict)


def head_forward(seq, params, prefix_pair=("fwd", "bwd")):
    """Dual-branch recurrent head on an N x T x D sequence -> N x T x K
    logits. Exposed separately so the branch symmetry is testable without
    the extractor."""
    fwd, bwd = prefix_pair
    items = {}

    def branch(x, name):
        h1, items[f"{name}.lstm1"] = layers.lstm_forward(
            x, params[f"{name}.lstm1.wx"], params[f"{name}.lstm1.wh"], params[f"{name}.lstm1.b"]
        )
        h2, items[f"{name}.lstm2"] = layers.lstm_forward(
            h1, params[f"{name}.lstm2.wx"], params[f"{name}.lstm2.wh"], params[f"{name}.lstm2.b"]
        )
        p1, items[f"{name}.proj"] = layers.inner_product_forward(
            h2, params[f"{name}.proj.w"], params[f"{name}.proj.b"]
        )
        p2, items[f"{name}.out"] = layers.inner_product_forward(
            p1, params[f"{name}.out.w"], params[f"{name}.out.b"]
        )
        return p2

    f_logits = branch(seq, fwd)
    rev_in, _ = layers.reverse_forward(seq)
    b_inner = branch(rev_in, bwd)
    b_logits, _ = layers.reverse_forward(b_inner)
    logits, _ = layers.eltwise_sum_forward(f_logits, b_logits)
    items["prefixes"] = (fwd, bwd)
    return logits, items


def head_backward(dlogits, items):
    """Gradients for every head parameter plus the input sequence."""
    fwd, bwd = items["prefixes"]
    grads = {}

    def branch_back(dout, name):
        d, dw, db = layers.inner_product_backward(dout, items[f"{name}.out"])
        grads[f"{name}.out.w"], grads[f"{name}.out.b"] = dw, db
        d, dw, db = layers.inner_product_backward(d, items[f"{name}.proj"])
        grads[f"{name}.proj.w"], grads[f"{name}.proj.b"] = dw, db
        d, dwx, dwh, dbl = layers.lstm_backward(d, items[f"{name}.lstm2"])
        grads[f"{name}.lstm2.wx"], grads[f"{name}.lstm2.wh"], grads[f"{name}.lstm2.b"] = dwx, dwh, dbl
        d, dwx, dwh, dbl = layers.lstm_backward(d, items[f"{name}.lstm1"])
        grads[f"{name}.lstm1.wx"], grads[f"{name}.lstm1.wh"], grads[f"{name}.lstm1.b"] = dwx, dwh, dbl
        return d

    df, db_outer = layers.eltwise_sum_backward(dlogits, None)
    dseq_f = branch_back(df, fwd)
    db_inner = layers.reverse_backward(db_outer, None)
    dseq_rev = branch_back(db_inner, bwd)
    dseq_b = layers.reverse_backward(dseq_rev, None)
    return dseq_f + dseq_b, grads


class Network:
    """Parameter container plus hand-wired forward/backward passes.

    Parameters are plain float64 arrays in `self.params`; forward returns
    an explicit cache object consumed by backward, so several evaluations
    can be in flight over the same (read-only) parameters.
    """

    def __init__(self, config: NetworkConfig, params: dict):
        self.config = config
        self.fingerprint = topology_fingerprint(config)
        specs = parameter_specs(config)
        if set(params) != set(specs):
            missing = sorted(set(specs) - set(params))[:3]
            extra = sorted(set(params) - set(specs))[:3]
            raise ConfigError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, (shape, _, _) in specs.items():
            if tuple(params[name].shape) != shape:
                raise ConfigError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        self.params = params
        h, w = _conv_stack_geometry(config)
        self.sequence_length = w
        self.feature_dim = config.channels[5] * h

    @classmethod
    def build(cls, config: NetworkConfig, seed: int) -> "Network":
        return cls(config, init_parameters(config, seed))

    def forward(self, images):
        """images: N x 1 x H x W in [0,1] -> (logits N x T x K, cache)."""
        cfg = self.config
        if images.ndim != 4 or images.shape[1] != 1:
            raise ShapeError(f"expected N x 1 x H x W images, got {images.shape}")
        if images.shape[2] != cfg.input_height or images.shape[3] != cfg.input_width:
            raise ShapeError(
                f"image size {images.shape[2]}x{images.shape[3]} does not match "
                f"configured {cfg.input_height}x{cfg.input_width}"
            )
        p = self.params
        items = {}

        h, items["conv1"] = layers.conv2d_forward(images, p["conv1.w"], p["conv1.b"], 1, 1)
        h, items["relu1"] = layers.relu_forward(h)
        pooled, items["pool"] = layers.maxpool2d_forward(h, 3, 1)
        h, items["conv2"] = layers.conv2d_forward(pooled, p["conv2.w"], p["conv2.b"], 1, 1)
        h, items["relu2"] = layers.relu_forward(h)
        h, items["conv3"] = layers.conv2d_forward(h, p["conv3.w"], p["conv3.b"], 1, 1)
        h, _ = layers.eltwise_sum_forward(h, pooled)
        cur, items["relu3"] = layers.relu_forward(h)
        for i in (1, 2, 3):
            name = f"block{i}"
            h, items[f"{name}.conv_a"] = layers.conv2d_forward(
                cur, p[f"{name}.conv_a.w"], p[f"{name}.conv_a.b"], 2, 1
            )
            h, items[f"{name}.relu_a"] = layers.relu_forward(h)
            h, items[f"{name}.conv_b"] = layers.conv2d_forward(
                h, p[f"{name}.conv_b.w"], p[f"{name}.conv_b.b"], 1, 1
            )
            short, items[f"{name}.proj"] = layers.conv2d_forward(
                cur, p[f"{name}.proj.w"], p[f"{name}.proj.b"], 2, 0
            )
            h, _ = layers.eltwise_sum_forward(h, short)
            cur, items[f"{name}.relu_b"] = layers.relu_forward(h)
        seq, items["permute"] = layers.permute_forward(cur)
        logits, items["head"] = head_forward(seq, p)
        if not np.isfinite(logits).all():
            raise NumericError("forward pass produced non-finite logits")
        cache = NetworkCache(fingerprint=self.fingerprint, items=items)
        return logits, cache

    def backward(self, dlogits, cache):
        """dlogits: N x T x K -> dict of parameter gradients."""
        if not isinstance(cache, NetworkCache) or cache.fingerprint != self.fingerprint:
            raise StateError("backward needs the cache of a forward pass on this network")
        items = cache.items
        dseq, grads = head_backward(dlogits, items["head"])
        dcur = layers.permute_backward(dseq, items["permute"])
        p = self.params
        for i in (3, 2, 1):
            name = f"block{i}"
            dsum = layers.relu_backward(dcur, items[f"{name}.relu_b"])
            dshort, dw, db = layers.conv2d_backward(dsum, items[f"{name}.proj"])
            grads[f"{name}.proj.w"], grads[f"{name}.proj.b"] = dw, db
            dh, dw, db = layers.conv2d_backward(dsum, items[f"{name}.conv_b"])
            grads[f"{name}.conv_b.w"], grads[f"{name}.conv_b.b"] = dw, db
            dh = layers.relu_backward(dh, items[f"{name}.relu_a"])
            dh, dw, db = layers.conv2d_backward(dh, items[f"{name}.conv_a"])
            grads[f"{name}.conv_a.w"], grads[f"{name}.conv_a.b"] = dw, db
            dcur = dh + dshort
        dsum = layers.relu_backward(dcur, items["relu3"])
        dh, dw, db = layers.conv2d_backward(dsum, items["conv3"])
        grads["conv3.w"], grads["conv3.b"] = dw, db
        dh = layers.relu_backward(dh, items["relu2"])
        dpool, dw, db = layers.conv2d_backward(dh, items["conv2"])
        grads["conv2.w"], grads["conv2.b"] = dw, db
        dpool = dpool + dsum  # the identity shortcut reuses the pooled map
        dh = layers.maxpool2d_backward(dpool, items["pool"])
        dh = layers.relu_backward(dh, items["relu1"])
        _, dw, db = layers.conv2d_backward(dh, items["conv1"])
        grads["conv1.w"], grads["conv1.b"] = dw, db
        return grads

    def posteriors(self, logits):
        """Row softmax over the label axis; same leading shape as logits."""
        return layers.softmax_per_frame(logits)


def save_network(path, net: Network, extra_metadata: dict | None = None, extra_arrays: dict | None = None):
    """Write parameters (and optionally optimizer state) with enough
    metadata to rebuild the exact topology."""
    from .checkpoint import save_container

    metadata = {
        "kind": "network",
        "config": net.config.to_dict(),
        "fingerprint": net.fingerprint,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    save_container(path, metadata, arrays)


def load_network(path):
    """Returns (Network, metadata, extra_arrays). Fails when the stored
    fingerprint does not match the topology rebuilt from the metadata."""
    from .checkpoint import load_container
    from .errors import CheckpointError

    metadata, arrays = load_container(path)
    if metadata.get("kind") != "network":
        raise CheckpointError(f"{path} is not a network checkpoint")
    config = NetworkConfig.from_dict(metadata["config"])
    if topology_fingerprint(config) != metadata.get("fingerprint"):
        raise CheckpointError(
            "checkpoint fingerprint does not match its stored configuration"
        )
    params = {k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")}
    extra = {k: v for k, v in arrays.items() if not k.startswith("param/")}
    net = Network(config, params)
    return net, metadata, extra
