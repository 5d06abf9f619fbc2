"""Declarative network builder.

A NetworkSpec lists layers by kind; build() validates the channel chain and
returns a Network whose forward runs on the autodiff tape. Downsampling
layers all share the ceil(extent/stride) shape law, so attention pooling,
max pooling, and strided 1x1 convolution are interchangeable transitions.
A network with a global pooling head accepts any spatial input size at or
above its stride pyramid's minimum and always emits num_classes logits.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import ail, ops, tensor
from .autodiff import Node, Parameter
from .errors import BuildError, ConfigurationError, ContractError, DomainError

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "Network",
    "LAYER_KINDS",
    "TRANSITION_KINDS",
    "build",
    "preset",
    "preset_names",
    "save_spec",
    "load_spec",
    "save_checkpoint",
    "load_checkpoint",
]

LAYER_KINDS = (
    "Conv2d",
    "Conv1d",
    "Lail",
    "Gail",
    "MaxPool",
    "StridedConv",
    "DenseBlock",
    "BatchNorm",
    "Classifier",
)
TRANSITION_KINDS = ("ail", "maxpool", "stridedconv")


@dataclass
class LayerSpec:
    kind: str
    channels: int | None = None  # output channels where the kind takes them
    kernel: int = 3  # conv size or pooling window edge
    stride: int = 1
    relu: bool = True  # Conv2d/Conv1d only
    repetitions: int = 0  # DenseBlock
    growth: int = 0  # DenseBlock
    bottleneck: bool = True  # DenseBlock
    grad_mode: str = ail.GRAD_ANALYTIC  # Lail/Gail

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")


@dataclass
class NetworkSpec:
    name: str
    layers: list[LayerSpec]
    num_classes: int
    in_channels: int
    variable_size: bool = True  # require a global head so any input size works

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "variable_size": self.variable_size,
            "layers": [asdict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            layers = [LayerSpec(**l) for l in d["layers"]]
            return cls(
                name=d["name"],
                layers=layers,
                num_classes=int(d["num_classes"]),
                in_channels=int(d["in_channels"]),
                variable_size=bool(d.get("variable_size", True)),
            )
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"bad network spec: {e}") from e


def save_spec(spec: NetworkSpec, path: str) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_dict(), f, indent=2)


def load_spec(path: str) -> NetworkSpec:
    with open(path) as f:
        return NetworkSpec.from_dict(json.load(f))


class _Bn:
    """Gamma/beta plus running statistics for one normalization site."""

    def __init__(self, c: int, name: str, dtype):
        self.name = name
        self.gamma = Parameter(np.ones(c, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(c, dtype=dtype), f"{name}.beta")
        self.state = ops.BatchNormState.for_channels(c, dtype=dtype)

    def __call__(self, x: Node, training: bool) -> Node:
        return ops.batchnorm(x, self.gamma, self.beta, self.state, training)

    def parameters(self):
        return [self.gamma, self.beta]

    def extra_state(self):
        return {
            f"{self.name}.running_mean": self.state.mean,
            f"{self.name}.running_var": self.state.var,
        }

    def load_extra(self, name, arr):
        if name.endswith(".running_mean"):
            self.state.mean = arr
        else:
            self.state.var = arr

    def flags(self):
        return {f"{self.name}.initialized": self.state.initialized}

    def set_flag(self, name, value):
        self.state.initialized = bool(value)


class _Layer:
    """Common shape bookkeeping; concrete layers override forward."""

    def __init__(self, name: str, out_channels: int, stride: int = 1):
        self.name = name
        self.out_channels = out_channels
        self.stride = stride

    def forward(self, x: Node, training: bool, collect) -> Node:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def bns(self) -> list[_Bn]:
        return []


class _ConvLayer(_Layer):
    def __init__(self, name, c_in, spec: LayerSpec, ndim, rng, dtype):
        super().__init__(name, spec.channels, spec.stride)
        shape = (
            (spec.kernel, spec.kernel, c_in, spec.channels)
            if ndim == 2
            else (spec.kernel, c_in, spec.channels)
        )
        self.conv = ops.init_conv(shape, name, rng, stride=spec.stride, dtype=dtype)
        self.ndim = ndim
        self.relu = spec.relu

    def forward(self, x, training, collect):
        y = (ops.conv2d if self.ndim == 2 else ops.conv1d)(x, self.conv)
        return ops.relu(y) if self.relu else y

    def parameters(self):
        return self.conv.parameters()


class _AilLayer(_Layer):
    def __init__(self, name, c_in, spec: LayerSpec, ndim, rng, dtype, is_global):
        stride = 1 if is_global else spec.stride
        super().__init__(name, spec.channels, stride)
        kernel = ail.Global() if is_global else (
            ail.Local(spec.kernel, spec.kernel) if ndim == 2 else ail.Local(spec.kernel)
        )
        self.config = ail.AilConfig(
            kernel,
            c_in=c_in,
            c_out=spec.channels,
            stride=stride,
            grad_mode=spec.grad_mode,
            ndim=ndim,
        )
        self.params = ail.init_ail_params(self.config, name, rng, dtype=dtype)
        self.is_global = is_global

    def forward(self, x, training, collect):
        return ail.ail_forward(x, self.config, self.params, collect=collect)

    def parameters(self):
        return self.params.parameters()


class _MaxPoolLayer(_Layer):
    """Pooling paired with a 1x1 conv so its channel budget matches an
    attention transition of the same c'."""

    def __init__(self, name, c_in, spec: LayerSpec, ndim, rng, dtype):
        super().__init__(name, spec.channels, spec.stride)
        self.window = spec.kernel
        self.ndim = ndim
        shape = (1, 1, c_in, spec.channels) if ndim == 2 else (1, c_in, spec.channels)
        self.proj = ops.init_conv(shape, f"{name}.proj", rng, dtype=dtype)

    def forward(self, x, training, collect):
        if self.ndim == 2:
            y = ops.maxpool2d(x, self.window, self.stride, ceil_mode=True)
            return ops.conv2d(y, self.proj)
        y = ops.maxpool1d(x, self.window, self.stride, ceil_mode=True)
        return ops.conv1d(y, self.proj)

    def parameters(self):
        return self.proj.parameters()


class _StridedConvLayer(_Layer):
    def __init__(self, name, c_in, spec: LayerSpec, ndim, rng, dtype):
        super().__init__(name, spec.channels, spec.stride)
        k = spec.kernel
        shape = (k, k, c_in, spec.channels) if ndim == 2 else (k, c_in, spec.channels)
        self.conv = ops.init_conv(shape, name, rng, stride=spec.stride, dtype=dtype)
        self.ndim = ndim

    def forward(self, x, training, collect):
        return (ops.conv2d if self.ndim == 2 else ops.conv1d)(x, self.conv)

    def parameters(self):
        return self.conv.parameters()


class _DenseBlockLayer(_Layer):
    """repetitions x [BN -> relu -> 1x1 conv(4g) -> BN -> relu -> 3x3 conv(g)],
    each repetition concatenated onto the running feature map."""

    def __init__(self, name, c_in, spec: LayerSpec, ndim, rng, dtype):
        super().__init__(name, c_in + spec.repetitions * spec.growth)
        g = spec.growth
        self.ndim = ndim
        self.reps = []
        c = c_in
        for r in range(spec.repetitions):
            rep = {}
            rname = f"{name}.rep{r}"
            if spec.bottleneck:
                rep["bn1"] = _Bn(c, f"{rname}.bn1", dtype)
                s1 = (1, 1, c, 4 * g) if ndim == 2 else (1, c, 4 * g)
                # bias-free: bn2 right after would cancel any channel shift
                rep["conv1"] = ops.init_conv(s1, f"{rname}.conv1", rng, dtype=dtype, bias=False)
                inner = 4 * g
            else:
                inner = c
            rep["bn2"] = _Bn(inner, f"{rname}.bn2", dtype)
            s2 = (3, 3, inner, g) if ndim == 2 else (3, inner, g)
            rep["conv2"] = ops.init_conv(s2, f"{rname}.conv2", rng, dtype=dtype)
            self.reps.append(rep)
            c += g
        self.bottleneck = spec.bottleneck

    def forward(self, x, training, collect):
        conv = ops.conv2d if self.ndim == 2 else ops.conv1d
        for rep in self.reps:
            h = x
            if self.bottleneck:
                h = conv(ops.relu(rep["bn1"](h, training)), rep["conv1"])
            h = conv(ops.relu(rep["bn2"](h, training)), rep["conv2"])
            x = ops.concat_channels([x, h])
        return x

    def parameters(self):
        out = []
        for rep in self.reps:
            for key in ("bn1", "conv1", "bn2", "conv2"):
                if key in rep:
                    out.extend(rep[key].parameters())
        return out

    def bns(self):
        return [rep[k] for rep in self.reps for k in ("bn1", "bn2") if k in rep]


class _BatchNormLayer(_Layer):
    def __init__(self, name, c_in, ndim, dtype):
        super().__init__(name, c_in)
        self.bn = _Bn(c_in, name, dtype)

    def forward(self, x, training, collect):
        return self.bn(x, training)

    def parameters(self):
        return self.bn.parameters()

    def bns(self):
        return [self.bn]


class _ClassifierLayer(_Layer):
    """Flatten (spatial extents must be 1 by now) and map to class logits.
    Zero init keeps the untrained class distribution uniform."""

    def __init__(self, name, c_in, num_classes, dtype):
        super().__init__(name, num_classes)
        self.weights = Parameter(np.zeros((c_in, num_classes), dtype=dtype), f"{name}.weights")
        self.bias = Parameter(np.zeros(num_classes, dtype=dtype), f"{name}.bias")
        self.c_in = c_in

    def forward(self, x, training, collect):
        spatial = x.value.shape[1:-1]
        if any(e != 1 for e in spatial):
            raise ContractError(
                f"classifier expects spatial extent 1, got {x.value.shape}"
            )
        flat = ops.reshape(x, (x.value.shape[0], self.c_in))
        return ops.linear(flat, self.weights, self.bias)

    def parameters(self):
        return [self.weights, self.bias]


class Network:
    def __init__(self, spec: NetworkSpec, layers: list[_Layer], ndim: int):
        self.spec = spec
        self.layers = layers
        self.ndim = ndim
        self.num_classes = spec.num_classes

    def forward(self, x, training: bool = False, collect: list | None = None) -> Node:
        x = ops.as_node(x)
        unbatched = x.value.ndim == self.ndim + 1
        if unbatched:
            x = ops.expand_batch(x)
        if x.value.ndim != self.ndim + 2:
            raise ConfigurationError(
                f"rank {x.value.ndim} input does not fit a {self.ndim}-D network"
            )
        if x.value.shape[-1] != self.spec.in_channels:
            raise ConfigurationError(
                f"input has {x.value.shape[-1]} channels, network expects {self.spec.in_channels}"
            )
        for layer in self.layers:
            x = layer.forward(x, training, collect)
        return ops.squeeze_batch(x) if unbatched else x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def min_input(self) -> int:
        """Smallest spatial extent per axis the stride pyramid supports."""
        m = 1
        for layer in self.layers:
            m *= layer.stride
        return m

    def predict(self, x) -> np.ndarray:
        """Class probabilities for one sample or a batch, eval mode."""
        arr = np.asarray(x.value if isinstance(x, Node) else x)
        spatial = arr.shape[:-1] if arr.ndim == self.ndim + 1 else arr.shape[1:-1]
        m = self.min_input()
        if any(e < m for e in spatial):
            raise DomainError(
                f"input extent {tuple(spatial)} is below this network's minimum {m}"
            )
        logits = self.forward(arr, training=False).value
        return tensor.softmax(logits, axis=-1)

    # State maps: parameter values, BN running stats, and BN bootstrap flags.

    def _bns(self) -> list[_Bn]:
        return [bn for layer in self.layers for bn in layer.bns()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value for p in self.parameters()}
        for bn in self._bns():
            out.update(bn.extra_state())
        return out

    def flags(self) -> dict[str, bool]:
        out = {}
        for bn in self._bns():
            out.update(bn.flags())
        return out

    def load_state(self, arrays: dict[str, np.ndarray], flags: dict[str, bool] | None = None):
        params = {p.name: p for p in self.parameters()}
        extras = {}
        for bn in self._bns():
            for name in bn.extra_state():
                extras[name] = bn
        for name, arr in arrays.items():
            if name in params:
                if params[name].value.shape != arr.shape:
                    raise ConfigurationError(
                        f"tensor {name!r} has shape {arr.shape}, expected "
                        f"{params[name].value.shape}"
                    )
                params[name].value[...] = arr
            elif name in extras:
                extras[name].load_extra(name, arr.astype(extras[name].state.mean.dtype))
            else:
                raise ConfigurationError(f"checkpoint tensor {name!r} has no home here")
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigurationError(f"checkpoint is missing tensors: {sorted(missing)[:4]}")
        for bn in self._bns():
            for fname in bn.flags():
                if flags and fname in flags:
                    bn.set_flag(fname, flags[fname])


def build(spec: NetworkSpec, rng: np.random.Generator | None = None, dtype=None) -> Network:
    """Validate the spec and construct layers with freshly drawn parameters."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dtype = dtype if dtype is not None else tensor.STANDARD
    if not spec.layers:
        raise BuildError("network has no layers")
    kinds = [l.kind for l in spec.layers]
    ndim = 1 if "Conv1d" in kinds else 2
    if ndim == 1 and "Conv2d" in kinds:
        raise BuildError("layer 0: cannot mix Conv1d and Conv2d in one network")
    if kinds[-1] != "Classifier":
        raise BuildError(f"layer {len(kinds) - 1}: final layer must be Classifier")
    if kinds.count("Classifier") > 1:
        raise BuildError(f"layer {kinds.index('Classifier')}: Classifier before the end")
    if spec.variable_size:
        gails = [i for i, k in enumerate(kinds) if k == "Gail"]
        if len(gails) != 1:
            raise BuildError(
                f"layer {gails[1] if len(gails) > 1 else len(kinds) - 1}: "
                "variable-size network needs exactly one global pooling layer"
            )

    layers: list[_Layer] = []
    c = spec.in_channels
    for i, ls in enumerate(spec.layers):
        name = f"l{i:02d}.{ls.kind.lower()}"
        needs_c = ls.kind in ("Conv2d", "Conv1d", "Lail", "Gail", "MaxPool", "StridedConv")
        if needs_c and (ls.channels is None or ls.channels < 1):
            raise BuildError(f"layer {i}: {ls.kind} needs a positive channel count")
        try:
            if ls.kind in ("Conv2d", "Conv1d"):
                want = 2 if ls.kind == "Conv2d" else 1
                if want != ndim:
                    raise BuildError(f"layer {i}: {ls.kind} in a {ndim}-D network")
                layer = _ConvLayer(name, c, ls, ndim, rng, dtype)
            elif ls.kind == "Lail":
                layer = _AilLayer(name, c, ls, ndim, rng, dtype, is_global=False)
            elif ls.kind == "Gail":
                layer = _AilLayer(name, c, ls, ndim, rng, dtype, is_global=True)
            elif ls.kind == "MaxPool":
                layer = _MaxPoolLayer(name, c, ls, ndim, rng, dtype)
            elif ls.kind == "StridedConv":
                layer = _StridedConvLayer(name, c, ls, ndim, rng, dtype)
            elif ls.kind == "DenseBlock":
                if ls.repetitions < 0 or (ls.repetitions > 0 and ls.growth < 1):
                    raise BuildError(f"layer {i}: dense block needs growth >= 1")
                layer = _DenseBlockLayer(name, c, ls, ndim, rng, dtype)
            elif ls.kind == "BatchNorm":
                layer = _BatchNormLayer(name, c, ndim, dtype)
            elif ls.kind == "Classifier":
                layer = _ClassifierLayer(name, c, spec.num_classes, dtype)
            else:  # pragma: no cover - LayerSpec already validates
                raise BuildError(f"layer {i}: unknown kind {ls.kind}")
        except ConfigurationError as e:
            raise BuildError(f"layer {i}: {e}") from e
        layers.append(layer)
        c = layer.out_channels
    return Network(spec, layers, ndim)


# Named presets. Channel widths after each transition follow half-compression
# where the source table leaves them unstated.


def _tiny_layers(transition: str, grad_mode: str) -> list[LayerSpec]:
    t = _transition_maker(transition, grad_mode)
    return [
        LayerSpec("Conv2d", channels=16, kernel=3, stride=1),
        t(16),
        LayerSpec("DenseBlock", repetitions=4, growth=12),
        t(64),
        LayerSpec("DenseBlock", repetitions=4, growth=12),
        LayerSpec("Gail", channels=64, grad_mode=grad_mode),
        LayerSpec("Classifier"),
    ]


def _transition_maker(transition: str, grad_mode: str):
    if transition not in TRANSITION_KINDS:
        raise ConfigurationError(
            f"transition must be one of {TRANSITION_KINDS}, got {transition!r}"
        )

    def make(channels: int) -> LayerSpec:
        if transition == "ail":
            return LayerSpec("Lail", channels=channels, kernel=3, stride=2, grad_mode=grad_mode)
        if transition == "maxpool":
            return LayerSpec("MaxPool", channels=channels, kernel=2, stride=2)
        return LayerSpec("StridedConv", channels=channels, kernel=1, stride=2)

    return make


def _deep_layers(reps: tuple[int, ...], transition: str, grad_mode: str) -> list[LayerSpec]:
    t = _transition_maker(transition, grad_mode)
    layers = [LayerSpec("Conv2d", channels=64, kernel=7, stride=2)]
    c = 64
    for i, r in enumerate(reps):
        layers.append(t(c))
        layers.append(LayerSpec("DenseBlock", repetitions=r, growth=32))
        c = c + r * 32
        c = c // 2  # half-compression into the next transition
    layers.append(LayerSpec("Gail", channels=512, grad_mode=grad_mode))
    layers.append(LayerSpec("Classifier"))
    return layers


def _audio_layers(transition: str, grad_mode: str) -> list[LayerSpec]:
    t = _transition_maker(transition, grad_mode)
    return [
        LayerSpec("Conv1d", channels=64, kernel=15, stride=2),
        t(64),
        LayerSpec("Conv1d", channels=128, kernel=5, stride=1),
        LayerSpec("Gail", channels=128, grad_mode=grad_mode),
        LayerSpec("Classifier"),
    ]


_PRESETS = {
    "ain-tiny": (_tiny_layers, 10, 3),
    "ain-small": (None, 10, 3),  # filled below
    "ain-121": (lambda t, g: _deep_layers((6, 12, 24, 16), t, g), 128, 3),
    "ain-169": (lambda t, g: _deep_layers((6, 12, 32, 32), t, g), 128, 3),
    "ain-audio": (_audio_layers, 30, 40),
}


def _small_layers(transition: str, grad_mode: str) -> list[LayerSpec]:
    t = _transition_maker(transition, grad_mode)
    return [
        LayerSpec("Conv2d", channels=16, kernel=3, stride=1),
        t(16),
        LayerSpec("DenseBlock", repetitions=4, growth=12),
        t(64),
        LayerSpec("DenseBlock", repetitions=4, growth=12),
        t(112),
        LayerSpec("DenseBlock", repetitions=4, growth=12),
        LayerSpec("Gail", channels=128, grad_mode=grad_mode),
        LayerSpec("Classifier"),
    ]


_PRESETS["ain-small"] = (_small_layers, 10, 3)


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(
    name: str,
    num_classes: int | None = None,
    transition: str = "ail",
    grad_mode: str = ail.GRAD_ANALYTIC,
) -> NetworkSpec:
    if name not in _PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; have {preset_names()}")
    maker, default_classes, in_channels = _PRESETS[name]
    return NetworkSpec(
        name=name,
        layers=maker(transition, grad_mode),
        num_classes=num_classes if num_classes is not None else default_classes,
        in_channels=in_channels,
    )


# Checkpoints: one binary tensor file per state array plus a JSON manifest
# embedding the network spec, so a checkpoint alone rebuilds the model.


def save_checkpoint(net: Network, directory: str, extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    arrays = net.state_arrays()
    files = {}
    for tname, arr in arrays.items():
        fname = tname + ".aint"
        tensor.save_tensor(os.path.join(directory, fname), arr)
        files[tname] = fname
    manifest = {
        "network": net.spec.to_dict(),
        "tensors": files,
        "flags": net.flags(),
        "extra": extra or {},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(
    directory: str, rng: np.random.Generator | None = None, dtype=None
) -> tuple[Network, dict]:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no checkpoint manifest at {path}")
    with open(path) as f:
        manifest = json.load(f)
    spec = NetworkSpec.from_dict(manifest["network"])
    net = build(spec, rng=rng, dtype=dtype)
    have = net.state_arrays()
    arrays = {}
    for tname, fname in manifest["tensors"].items():
        arr = tensor.load_tensor(os.path.join(directory, fname))
        want = have.get(tname)
        arrays[tname] = arr.astype(want.dtype) if want is not None else arr
    net.load_state(arrays, manifest.get("flags"))
    return net, manifest.get("extra", {})
