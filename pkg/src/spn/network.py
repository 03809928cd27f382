"""Layer stack with a soft proposal layer after the last convolution.

The network is described by a :class:`NetworkSpec` (a list of layer records)
and a flat dict of named parameter arrays. ``spn_forward`` recomputes the
proposal map for every image on every pass; ``spn_backward`` reuses the maps
cached by the forward and treats them as constants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from spn import layers as L
from spn.errors import ConfigError, InputError
from spn.sp_core import ProposalMap, SpConfig, generate_proposal, sp_backward, sp_forward

LAYER_TYPES = ("conv", "relu", "maxpool2", "sp", "gap", "fc")


@dataclass
class NetworkSpec:
    layers: list  # dicts: {"type": "conv", "out": 16, "kernel": 3, "stride": 1, "padding": 1}, ...
    class_count: int
    in_channels: int = 3
    input_size: int = 32
    sp_config: SpConfig = field(default_factory=SpConfig)
    loss_mode: str = "softmax"
    use_sp: bool = True  # False: proposal map forced uniform (ablation)
    input_mean: float = 0.0  # subtracted from every pixel before the first layer

    def __post_init__(self):
        types = [layer["type"] for layer in self.layers]
        bad = [t for t in types if t not in LAYER_TYPES]
        if bad:
            raise ConfigError(f"unknown layer types {bad}")
        if self.loss_mode not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}")
        if self.class_count < 1:
            raise ConfigError("class_count must be >= 1")
        if types.count("sp") > 1:
            raise ConfigError("at most one sp layer is allowed")
        if types.count("fc") != 1 or types[-1] != "fc" or types[-2] != "gap":
            raise ConfigError("the stack must end with gap followed by fc")
        if "sp" in types:
            pos = types.index("sp")
            convs = [i for i, t in enumerate(types) if t == "conv"]
            if not convs or pos < convs[-1]:
                raise ConfigError("sp must follow the last conv layer")
            if any(t != "relu" for t in types[convs[-1] + 1 : pos]):
                raise ConfigError("only relu may sit between the last conv and sp")
            if types[pos + 1] != "gap":
                raise ConfigError("sp must be followed by the spatial pooling layer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sp_config"] = asdict(self.sp_config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["sp_config"] = SpConfig(**d.get("sp_config", {}))
        d["layers"] = [dict(layer) for layer in d["layers"]]
        return cls(**d)


def reference_spec(class_count: int = 3, use_sp: bool = True, loss_mode: str = "softmax",
                   sp_config: SpConfig | None = None) -> NetworkSpec:
    """32x32x3 -> conv16/relu/pool -> conv32/relu/pool -> conv64/relu -> sp(8x8) -> gap -> fc."""
    conv = lambda out: {"type": "conv", "out": out, "kernel": 3, "stride": 1, "padding": 1}  # noqa: E731
    layers = [
        conv(16), {"type": "relu"}, {"type": "maxpool2"},
        conv(32), {"type": "relu"}, {"type": "maxpool2"},
        conv(64), {"type": "relu"},
        {"type": "sp"}, {"type": "gap"}, {"type": "fc"},
    ]
    return NetworkSpec(layers, class_count, in_channels=3, input_size=32,
                       sp_config=sp_config or SpConfig(), loss_mode=loss_mode, use_sp=use_sp,
                       input_mean=0.5)


def tiny_spec(class_count: int = 3, channels: int = 4, relu: bool = False) -> NetworkSpec:
    """16x16x1 -> conv3x3 -> [relu] -> sp(16x16) -> gap -> fc; used for gradient checks."""
    layers = [{"type": "conv", "out": channels, "kernel": 3, "stride": 1, "padding": 1}]
    if relu:
        layers.append({"type": "relu"})
    layers += [{"type": "sp"}, {"type": "gap"}, {"type": "fc"}]
    return NetworkSpec(layers, class_count, in_channels=1, input_size=16)


class Network:
    """A :class:`NetworkSpec` plus its named float64 parameters."""

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int = 0) -> "Network":
        """Fan-in scaled uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        ch, size = spec.in_channels, spec.input_size
        for idx, layer in enumerate(spec.layers):
            kind = layer["type"]
            if kind == "conv":
                k = layer["kernel"]
                fan_in = ch * k * k
                bound = np.sqrt(6.0 / fan_in)
                params[f"conv{idx}.weight"] = rng.uniform(-bound, bound, (layer["out"], ch, k, k))
                params[f"conv{idx}.bias"] = np.zeros(layer["out"])
                size = (size + 2 * layer.get("padding", 0) - k) // layer.get("stride", 1) + 1
                ch = layer["out"]
            elif kind == "maxpool2":
                size //= 2
            elif kind == "fc":
                # Coupling with a unit-mass map and averaging shrink the pooled
                # features by 1/N^2; the readout is scaled up to compensate.
                bound = np.sqrt(1.0 / ch) * size * size
                params["fc.weight"] = rng.uniform(-bound, bound, (spec.class_count, ch))
                params["fc.bias"] = np.zeros(spec.class_count)
        return cls(spec, params)

    def conv_layer(self, idx: int) -> L.ConvLayer:
        layer = self.spec.layers[idx]
        return L.ConvLayer(self.params[f"conv{idx}.weight"], self.params[f"conv{idx}.bias"],
                           layer.get("stride", 1), layer.get("padding", 0))

    def copy(self) -> "Network":
        return Network(NetworkSpec.from_dict(self.spec.to_dict()),
                       {k: v.copy() for k, v in self.params.items()})


@dataclass
class ForwardCache:
    layer_caches: list
    proposals: list  # one ProposalMap per image, exactly as used
    features: np.ndarray | None  # (B, K, N, N) maps entering sp, before coupling
    coupled: np.ndarray | None  # (B, K, N, N) after coupling
    logits: np.ndarray
    single: bool = False

    @property
    def walk_iterations(self) -> list:
        return [p.iterations for p in self.proposals]


def spn_forward(net: Network, images, frozen=None):
    """Run the stack on one image (C,H,W) or a batch (B,C,H,W).

    ``frozen`` optionally supplies the proposal maps to use instead of running
    the walk (a list of ProposalMap or an array of N x N maps).
    """
    x = np.asarray(images, dtype=np.float64)
    if net.spec.input_mean:
        x = x - net.spec.input_mean
    single = x.ndim == 3
    if single:
        x = x[None]
    spec = net.spec
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise InputError(f"expected images with {spec.in_channels} channels, got shape {x.shape}")
    caches, proposals = [], []
    features = coupled = None
    for idx, layer in enumerate(spec.layers):
        kind = layer["type"]
        if kind == "conv":
            x, c = L.conv2d_forward(x, net.conv_layer(idx))
        elif kind == "relu":
            x, c = L.relu_forward(x)
        elif kind == "maxpool2":
            x, c = L.maxpool2_forward(x)
        elif kind == "sp":
            features = x
            proposals = _proposals_for(net, x, frozen)
            maps = np.stack([p.data for p in proposals])
            x = np.stack([sp_forward(u, m) for u, m in zip(features, maps)])
            coupled = x
            c = maps
        elif kind == "gap":
            x, c = L.global_avg_pool_forward(x)
        else:
            x, c = L.fc_forward(x, net.params["fc.weight"], net.params["fc.bias"])
        caches.append(c)
    cache = ForwardCache(caches, proposals, features, coupled, x, single)
    return (x[0] if single else x), cache


def _proposals_for(net: Network, U: np.ndarray, frozen) -> list:
    n = U.shape[-1]
    if frozen is not None:
        maps = [f if isinstance(f, ProposalMap) else ProposalMap(np.asarray(f, dtype=np.float64))
                for f in frozen]
        if len(maps) != U.shape[0] or any(m.data.shape != (n, n) for m in maps):
            raise InputError("frozen proposal maps do not match the batch")
        return maps
    if not net.spec.use_sp:
        return [ProposalMap.uniform(n) for _ in range(U.shape[0])]
    return [generate_proposal(u, net.spec.sp_config) for u in U]


def spn_backward(net: Network, cache: ForwardCache, d_logits) -> dict:
    """Gradients of every parameter given ``dE/dlogits``."""
    d = np.asarray(d_logits, dtype=np.float64)
    if cache.single:
        d = d[None]
    if len(cache.layer_caches) != len(net.spec.layers) or d.shape != cache.logits.shape:
        raise InputError("forward cache does not belong to this network/batch")
    grads = {}
    for idx in range(len(net.spec.layers) - 1, -1, -1):
        kind = net.spec.layers[idx]["type"]
        c = cache.layer_caches[idx]
        if kind == "fc":
            d, grads["fc.weight"], grads["fc.bias"] = L.fc_backward(d, c, net.params["fc.weight"])
        elif kind == "gap":
            d = L.global_avg_pool_backward(d, c)
        elif kind == "sp":
            d = np.stack([sp_backward(g, m) for g, m in zip(d, c)])
        elif kind == "maxpool2":
            d = L.maxpool2_backward(d, c)
        elif kind == "relu":
            d = L.relu_backward(d, c)
        else:
            d, grads[f"conv{idx}.weight"], grads[f"conv{idx}.bias"] = L.conv2d_backward(
                d, c, net.conv_layer(idx))
    return grads


def batch_loss(net: Network, logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    total, grads = 0.0, np.empty_like(logits)
    for i, t in enumerate(targets):
        e, g = L.loss(logits[i], t, net.spec.loss_mode)
        total += e
        grads[i] = g
    b = len(targets)
    return total / b, grads / b
