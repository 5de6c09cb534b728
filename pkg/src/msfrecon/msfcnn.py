"""Multi-scale fully convolutional network with periodic-shuffling scale changes.

The network is described by a flat *layer plan*: a tuple of :class:`LayerOp`
steps interpreted by :func:`forward`.  Spatial downscaling is ``ps_down`` and
upscaling ``ps_up``, so every trunk feature map holds the same number of
values.  Residual blocks are pre-activation (act, conv, act, conv, + skip)
and encoder features are added back onto the decoder at each scale.

Layout for ``n_scales = 2``::

    lift -> enc0 blocks -> PS down -> enc1 blocks -> PS down -> bottom blocks
         -> PS up (+ enc1) -> dec1 blocks -> PS up (+ enc0) -> dec0 blocks
         -> act -> output conv
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import shuffle, tensor_ops
from .errors import ConfigurationError, ContractViolation, DataError
from .tensor_ops import ConvKernel

ACTIVATIONS = ("relu", "none")
MAGIC = b"MSFCNN1\x00"


@dataclass(frozen=True)
class NetworkSpec:
    base_channels: int = 2
    r: int = 2
    n_scales: int = 2
    blocks_per_scale: int = 1
    dilation: int = 2
    activation: str = "relu"
    long_skips: bool = True

    def __post_init__(self):
        if self.base_channels < 1 or self.n_scales < 0 or self.blocks_per_scale < 0:
            raise ConfigurationError(f"invalid network spec {self}")
        if self.r < 2:
            raise ConfigurationError(f"shuffle rate must be >= 2, got {self.r}")
        if self.dilation not in (1, 2):
            raise ConfigurationError(f"dilation must be 1 or 2, got {self.dilation}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}")

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this."""
        return self.r ** self.n_scales

    def channels(self, scale: int) -> int:
        return self.base_channels * self.r ** (2 * scale)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown network spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LayerOp:
    kind: str  # conv | act | ps_down | ps_up | push | add
    name: str = ""
    in_depth: int = 0
    out_depth: int = 0
    dilation: int = 1
    scale: int = 0
    rate: int = 0  # shuffle rate for ps_down / ps_up


def _block(plan: list, prefix: str, depth: int, spec: NetworkSpec, scale: int):
    plan.append(LayerOp("push", prefix, scale=scale))
    for k in (1, 2):
        if spec.activation != "none":
            plan.append(LayerOp("act", scale=scale))
        plan.append(LayerOp("conv", f"{prefix}_conv{k}", depth, depth, spec.dilation, scale))
    plan.append(LayerOp("add", prefix, scale=scale))


def build(spec: NetworkSpec) -> tuple[LayerOp, ...]:
    """Layer plan for ``spec``; a pure function of the spec."""
    c0 = spec.channels(0)
    plan = [LayerOp("conv", "lift", 1, c0, 1, 0)]
    for s in range(spec.n_scales):
        for b in range(spec.blocks_per_scale):
            _block(plan, f"enc{s}_block{b + 1}", spec.channels(s), spec, s)
        if spec.long_skips:
            plan.append(LayerOp("push", f"skip{s}", scale=s))
        plan.append(LayerOp("ps_down", scale=s + 1, rate=spec.r))
    n = spec.n_scales
    for b in range(spec.blocks_per_scale):
        _block(plan, f"bottom_block{b + 1}", spec.channels(n), spec, n)
    for s in reversed(range(n)):
        plan.append(LayerOp("ps_up", scale=s, rate=spec.r))
        if spec.long_skips:
            plan.append(LayerOp("add", f"skip{s}", scale=s))
        for b in range(spec.blocks_per_scale):
            _block(plan, f"dec{s}_block{b + 1}", spec.channels(s), spec, s)
    if spec.activation != "none":
        plan.append(LayerOp("act", scale=0))
    plan.append(LayerOp("conv", "output", c0, 1, 1, 0))
    return tuple(plan)


def conv_layers(spec: NetworkSpec) -> list[LayerOp]:
    return [op for op in build(spec) if op.kind == "conv"]


def plan_shapes(spec: NetworkSpec, height: int, width: int) -> list[tuple[LayerOp, tuple[int, int, int]]]:
    """Feature-map shape after every plan step for an (H, W, 1) input."""
    _check_divisible(spec, height, width)
    h, w, d = height, width, 1
    out = []
    for op in build(spec):
        if op.kind == "conv":
            d = op.out_depth
        elif op.kind == "ps_down":
            h, w, d = h // spec.r, w // spec.r, d * spec.r ** 2
        elif op.kind == "ps_up":
            h, w, d = h * spec.r, w * spec.r, d // spec.r ** 2
        out.append((op, (h, w, d)))
    return out


def receptive_field(plan_or_spec) -> int:
    """Side length (input pixels) of the region that can influence one output pixel.

    Accepts a :class:`NetworkSpec` or any layer plan.  Each 3x3 conv widens
    the field by ``2 * dilation * stride`` where ``stride`` is the current
    input-pixel spacing of feature positions; ``ps_down`` merges ``r`` columns
    (widening by ``(r - 1) * stride``) and multiplies the spacing by ``r``;
    ``ps_up`` divides it again.  A skip sum takes the wider branch.
    """
    plan = build(plan_or_spec) if isinstance(plan_or_spec, NetworkSpec) else plan_or_spec
    rf, jump = 1, 1
    saved: dict[str, int] = {}
    for op in plan:
        if op.kind == "conv":
            rf += (tensor_ops.KERNEL_SIZE - 1) * op.dilation * jump
        elif op.kind == "ps_down":
            rf += (op.rate - 1) * jump
            jump *= op.rate
        elif op.kind == "ps_up":
            jump //= op.rate
        elif op.kind == "push":
            saved[op.name] = rf
        elif op.kind == "add":
            rf = max(rf, saved.pop(op.name))
    return rf


@dataclass
class Parameters:
    """Learned kernels keyed by layer name, plus the input normalisation constant."""

    spec: NetworkSpec
    kernels: dict[str, ConvKernel]
    input_scale: float = 1.0
    _cast: dict = field(default_factory=dict, repr=False, compare=False)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, k in self.kernels.items():
            out[f"{name}.weights"] = k.weights
            out[f"{name}.bias"] = k.bias
        return out

    @classmethod
    def from_arrays(cls, spec: NetworkSpec, arrays: dict[str, np.ndarray],
                    input_scale: float = 1.0) -> "Parameters":
        kernels = {}
        for op in conv_layers(spec):
            kernels[op.name] = ConvKernel(arrays[f"{op.name}.weights"],
                                          arrays[f"{op.name}.bias"], op.dilation)
        return cls(spec, kernels, input_scale)

    def copy(self) -> "Parameters":
        return Parameters.from_arrays(self.spec, {k: v.copy() for k, v in self.arrays().items()},
                                      self.input_scale)

    def kernels_as(self, dtype) -> dict[str, ConvKernel]:
        dtype = np.dtype(dtype)
        if dtype == np.float64:
            return self.kernels
        if dtype not in self._cast:
            self._cast[dtype] = {n: ConvKernel(k.weights.astype(dtype), k.bias.astype(dtype),
                                               k.dilation) for n, k in self.kernels.items()}
        return self._cast[dtype]

    @property
    def n_values(self) -> int:
        return sum(v.size for v in self.arrays().values())


def init_he(spec: NetworkSpec, seed: int = 0) -> Parameters:
    """He-normal weights (variance 2 / (9 * in_depth)) and zero biases."""
    rng = np.random.default_rng(seed)
    kernels = {}
    for op in conv_layers(spec):
        std = np.sqrt(2.0 / (9 * op.in_depth))
        w = rng.normal(0.0, std, size=(3, 3, op.in_depth, op.out_depth))
        kernels[op.name] = ConvKernel(w, np.zeros(op.out_depth), op.dilation)
    return Parameters(spec, kernels)


def init_zeros(spec: NetworkSpec) -> Parameters:
    return Parameters(spec, {op.name: ConvKernel.zeros(op.in_depth, op.out_depth, op.dilation)
                             for op in conv_layers(spec)})


def _check_divisible(spec: NetworkSpec, h: int, w: int):
    m = spec.divisor
    if h % m or w % m:
        raise ContractViolation(
            f"input of size {h}x{w} is not supported: height and width must be divisible "
            f"by r^n_scales = {spec.r}^{spec.n_scales} = {m}")


def _check_input(spec: NetworkSpec, x: np.ndarray):
    if x.ndim < 3 or x.shape[-1] != 1:
        raise ContractViolation(f"network input must be (..., H, W, 1), got {x.shape}")
    _check_divisible(spec, x.shape[-3], x.shape[-2])


def run(params: Parameters, x, tape: list | None = None, dtype=np.float64) -> np.ndarray:
    """Evaluate the raw network (no input scaling) on ``x``.

    When ``tape`` is a list, the inputs needed for :func:`backward` are
    appended to it.
    """
    spec = params.spec
    x = np.asarray(x, dtype=dtype)
    _check_input(spec, x)
    kernels = params.kernels_as(dtype)
    stash: dict[str, np.ndarray] = {}
    for op in build(spec):
        if tape is not None and op.kind in ("conv", "act"):
            tape.append(x)
        if op.kind == "conv":
            x = tensor_ops.conv2d(x, kernels[op.name])
        elif op.kind == "act":
            x = tensor_ops.relu(x)
        elif op.kind == "ps_down":
            x = shuffle.ps_down(x, spec.r)
        elif op.kind == "ps_up":
            x = shuffle.ps_up(x, spec.r)
        elif op.kind == "push":
            stash[op.name] = x
        elif op.kind == "add":
            x = tensor_ops.add(x, stash.pop(op.name))
    return x


def backward(params: Parameters, tape: list, grad_out) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse pass of :func:`run`.

    Returns ``(grads, grad_input)`` where ``grads`` is keyed like
    :meth:`Parameters.arrays`.  The tape is consumed.
    """
    spec = params.spec
    g = np.asarray(grad_out, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    slot_grads: dict[str, np.ndarray] = {}
    for op in reversed(build(spec)):
        if op.kind == "conv":
            x = tape.pop()
            g, gw, gb = tensor_ops.conv2d_grad(x, params.kernels[op.name], g)
            grads[f"{op.name}.weights"] = gw
            grads[f"{op.name}.bias"] = gb
        elif op.kind == "act":
            g = tensor_ops.relu_grad(tape.pop(), g)
        elif op.kind == "ps_down":
            g = shuffle.ps_down_grad(g, spec.r)
        elif op.kind == "ps_up":
            g = shuffle.ps_up_grad(g, spec.r)
        elif op.kind == "add":
            slot_grads[op.name] = g
        elif op.kind == "push":
            g = g + slot_grads.pop(op.name)
    if tape:
        raise ContractViolation("tape does not match the layer plan")
    ordered = {k: grads[k] for k in params.arrays()}
    return ordered, g


def forward(params: Parameters, x, dtype=np.float64) -> np.ndarray:
    """Reconstruct from back-projection input(s) ``x`` of shape (..., H, W, 1).

    Applies the stored input normalisation and undoes it on the output.
    """
    x = np.asarray(x, dtype=dtype)
    s = np.asarray(params.input_scale, dtype=dtype)
    return run(params, x / s, dtype=dtype) * s


# -- parameter file ---------------------------------------------------------

def save_parameters(params: Parameters, path, extra: dict | None = None) -> None:
    """Write ``MSFCNN1`` magic, uint64 header length, JSON header, LE float64 payload."""
    layers, blobs, offset = [], [], 0
    for name, arr in params.arrays().items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        layers.append({"name": name, "shape": list(arr.shape), "offset": offset,
                       "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {"format": "MSFCNN1", "spec": params.spec.to_dict(),
              "input_scale": float(params.input_scale), "layers": layers}
    if extra:
        header["extra"] = extra
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not an MSFCNN1 parameter file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8"))


def load_parameters(path) -> Parameters:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not an MSFCNN1 parameter file")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n].decode("utf-8"))
    payload = memoryview(blob)[16 + n:]
    spec = NetworkSpec.from_dict(header["spec"])
    arrays = {}
    for layer in header["layers"]:
        raw = payload[layer["offset"]:layer["offset"] + layer["nbytes"]]
        arrays[layer["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(layer["shape"])
    expected = {f"{op.name}.{part}" for op in conv_layers(spec) for part in ("weights", "bias")}
    if set(arrays) != expected:
        raise DataError(f"{path}: layer set does not match the stored network spec")
    return Parameters.from_arrays(spec, arrays, header["input_scale"])
