"""Selectional auto-encoders: topology construction, window inference,
thresholding, page-level binarization and checkpoints.

Three encoder/decoder layouts are supported, all with the same number of
filters in every hidden layer and a final 1-filter convolution followed by a
sigmoid, so a ``w x w`` window maps to a ``w x w`` map of foreground
confidences:

``CAE``
    ``depth x (conv, relu, maxpool2)`` then ``depth x (conv, relu, upsample2)``.
``SWWAE``
    ``depth x (conv, relu, maxpool2)`` keeping the pooling switches, then
    ``depth x (deconv, relu, unpool2)`` where each unpooling consumes the
    switches of the mirrored encoder stage.
``REDNET``
    ``depth x (conv stride 2, relu)`` then ``depth x (deconv stride 2, relu)``;
    every decoder stage after the first has the encoder output of matching
    resolution added to its input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import imagery
from . import tensor as T

KINDS = ("CAE", "SWWAE", "REDNET")
DEFAULT_TAU = 0.5
INFERENCE_BATCH = 16

MAGIC = b"SAEB"
VERSION = 1
_HEADER = struct.Struct("<4sHBHHBB")


class CheckpointError(ValueError):
    """Raised when a checkpoint blob cannot be decoded."""


def default_depth(window_side: int) -> int:
    return 3 if window_side < 128 else 5


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "REDNET"
    window_side: int = 256
    filters: int = 64
    kernel_side: int = 5
    depth: int | None = None

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown topology {self.kind!r}; expected one of {KINDS}")
        if self.depth is None:
            object.__setattr__(self, "depth", default_depth(self.window_side))
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.kernel_side < 1 or self.kernel_side % 2 == 0:
            raise ValueError(f"kernel side must be odd, got {self.kernel_side}")
        if self.window_side < 1 or self.window_side % (2 ** self.depth):
            raise ValueError(
                f"window side {self.window_side} is not divisible by 2^{self.depth}"
            )

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of all parameters in build order."""
        f, k = self.filters, self.kernel_side
        shapes = []
        for i in range(self.depth):
            shapes += [(f"enc{i}.w", (f, 1 if i == 0 else f, k, k)), (f"enc{i}.b", (f,))]
        for i in range(self.depth):
            shapes += [(f"dec{i}.w", (f, f, k, k)), (f"dec{i}.b", (f,))]
        shapes += [("out.w", (1, f, k, k)), ("out.b", (1,))]
        return shapes

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.parameter_shapes())


# full-size configuration and a CPU-sized one for desk runs
PRESETS = {
    "full": TopologySpec("REDNET", 256, 64, 5),
    "small": TopologySpec("REDNET", 64, 16, 5),
}


@dataclass
class Model:
    spec: TopologySpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.spec.parameter_shapes()
        if [n for n, _ in expected] != list(self.params):
            raise ValueError("parameter names do not match the topology")
        for name, shape in expected:
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def graph(self, x: np.ndarray, requires_grad: bool = False) -> tuple[T.Tensor, dict[str, T.Tensor]]:
        """Run a batch ``(N, 1, w, w)`` through the network.

        Returns the output tensor and the parameter leaves (carrying
        gradients after ``backward`` when ``requires_grad`` is set).
        """
        leaves = {n: T.Tensor(v, requires_grad=requires_grad, name=n) for n, v in self.params.items()}
        return _FORWARD[self.spec.kind](self.spec, leaves, T.Tensor(x)), leaves

    def predict(self, windows: np.ndarray) -> np.ndarray:
        """Activations for a stack of ``(N, w, w)`` windows."""
        windows = np.asarray(windows, dtype=np.float32)
        s = self.spec.window_side
        if windows.ndim != 3 or windows.shape[1:] != (s, s):
            raise ValueError(f"expected windows of {s}x{s}, got array of shape {windows.shape}")
        out = np.empty(windows.shape, dtype=np.float32)
        for i in range(0, len(windows), INFERENCE_BATCH):
            chunk = windows[i:i + INFERENCE_BATCH, None]
            out[i:i + INFERENCE_BATCH] = self.graph(chunk)[0].values[:, 0]
        return out


def _cae(spec: TopologySpec, p: dict[str, T.Tensor], h: T.Tensor) -> T.Tensor:
    for i in range(spec.depth):
        h = T.relu(T.conv2d(h, p[f"enc{i}.w"], p[f"enc{i}.b"]))
        h, _ = T.maxpool2(h)
    for i in range(spec.depth):
        h = T.relu(T.conv2d(h, p[f"dec{i}.w"], p[f"dec{i}.b"]))
        h = T.upsample2(h)
    return T.sigmoid(T.conv2d(h, p["out.w"], p["out.b"]))


def _swwae(spec: TopologySpec, p: dict[str, T.Tensor], h: T.Tensor) -> T.Tensor:
    switches = []
    for i in range(spec.depth):
        h = T.relu(T.conv2d(h, p[f"enc{i}.w"], p[f"enc{i}.b"]))
        h, s = T.maxpool2(h)
        switches.append(s)
    for i in range(spec.depth):
        h = T.relu(T.deconv2d(h, p[f"dec{i}.w"], p[f"dec{i}.b"]))
        h = T.unpool2(h, switches[spec.depth - 1 - i])
    return T.sigmoid(T.conv2d(h, p["out.w"], p["out.b"]))


def _rednet(spec: TopologySpec, p: dict[str, T.Tensor], h: T.Tensor) -> T.Tensor:
    skips = []
    for i in range(spec.depth):
        h = T.relu(T.conv2d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], stride=2))
        skips.append(h)
    for i in range(spec.depth):
        if i > 0:
            h = T.add(h, skips[spec.depth - 1 - i])
        h = T.relu(T.deconv2d(h, p[f"dec{i}.w"], p[f"dec{i}.b"], stride=2))
    return T.sigmoid(T.conv2d(h, p["out.w"], p["out.b"]))


_FORWARD = {"CAE": _cae, "SWWAE": _swwae, "REDNET": _rednet}


def build_model(spec: TopologySpec, seed: int = 0) -> Model:
    """Fresh model with Glorot-uniform kernels and zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.parameter_shapes():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        receptive = shape[2] * shape[3]
        limit = np.sqrt(6.0 / ((shape[0] + shape[1]) * receptive))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    return Model(spec, params)


def forward_window(model: Model, window: np.ndarray) -> np.ndarray:
    """Activation map of a single ``w x w`` window."""
    window = np.asarray(window)
    s = model.spec.window_side
    if window.shape != (s, s):
        raise ValueError(f"window must be {s}x{s}, got {window.shape}")
    return model.predict(window[None])[0]


def binarize_activations(activations: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Foreground where the activation strictly exceeds ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    return np.asarray(activations) > tau


def predict_document(model: Model, img: np.ndarray) -> np.ndarray:
    """Tile a page, run every window and stitch the activations back."""
    grid, windows = imagery.split_into_windows(img, model.spec.window_side)
    return imagery.stitch_windows(grid, model.predict(windows))


def binarize_document(model: Model, img: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    return binarize_activations(predict_document(model, img), tau)


def save_checkpoint(model: Model) -> bytes:
    s = model.spec
    header = _HEADER.pack(MAGIC, VERSION, KINDS.index(s.kind), s.window_side,
                          s.filters, s.kernel_side, s.depth)
    body = b"".join(model.params[n].astype("<f4").tobytes() for n, _ in s.parameter_shapes())
    return header + body


def load_checkpoint(blob: bytes) -> Model:
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, kind, window, filters, kernel, depth = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if kind >= len(KINDS):
        raise CheckpointError(f"unknown topology code {kind}")
    try:
        spec = TopologySpec(KINDS[kind], window, filters, kernel, depth)
    except ValueError as exc:
        raise CheckpointError(f"inconsistent topology header: {exc}") from exc
    expected = _HEADER.size + 4 * spec.parameter_count()
    if len(blob) != expected:
        raise CheckpointError(f"checkpoint is {len(blob)} bytes, expected {expected}")
    params = {}
    offset = _HEADER.size
    for name, shape in spec.parameter_shapes():
        n = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(shape)
        offset += 4 * n
    return Model(spec, params)


def read_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())


def write_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(model))
