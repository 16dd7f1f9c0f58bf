"""Reverse-mode autodiff over Tensor4 and the layer set for a shuffle-wrapped 3D U-net.

The graph is micrograd-style: every operation returns a Node holding its
Tensor4 value, references to its parents, and a closure that scatters the
node's gradient back to them. ``backward`` runs the closures once each in
reverse topological order. Everything is float64.

Convolution is cross-correlation (no kernel flip) with zero padding and the
output-extent formula floor((in + 2*pad - kernel) / stride) + 1 per axis.
Kernel weights live in a Tensor4 of shape (kx, ky, kz, c_in*c_out) whose
channel index is ci * c_out + co.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .shuffle import ShuffleFactors, down_shuffle, up_shuffle
from .tensor import Rng, Shape4, Tensor4


class Node:
    """One value in the computation record."""

    __slots__ = ("value", "grad", "op", "_parents", "_backprop", "_backward_done")

    def __init__(self, value: Tensor4, parents: tuple = (), op: str = "leaf",
                 backprop: Callable[["Node"], None] | None = None):
        self.value = value
        self.grad = np.zeros_like(value.zyxc)
        self.op = op
        self._parents = parents
        self._backprop = backprop
        self._backward_done = False

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def constant(t: Tensor4) -> Node:
    return Node(t)


def backward(root: Node) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable node."""
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, has {root.value.size} elements")
    if root._backward_done:
        raise RuntimeError("backward already ran for this node; rebuild the graph")
    root._backward_done = True

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad.fill(1.0)
    for node in reversed(order):
        if node._backprop is not None:
            node._backprop(node)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    value = a.value.add(b.value)

    def backprop(out: Node) -> None:
        a.grad += out.grad
        b.grad += out.grad

    return Node(value, (a, b), "add", backprop)


def mul(a: Node, b: Node) -> Node:
    value = a.value.mul(b.value)

    def backprop(out: Node) -> None:
        a.grad += out.grad * b.value.zyxc
        b.grad += out.grad * a.value.zyxc

    return Node(value, (a, b), "mul", backprop)


def scale(a: Node, factor: float) -> Node:
    value = a.value.scale(factor)

    def backprop(out: Node) -> None:
        a.grad += out.grad * factor

    return Node(value, (a,), "scale", backprop)


def sum_all(a: Node) -> Node:
    value = Tensor4.from_zyxc(np.array([[[[a.value.zyxc.sum()]]]]))

    def backprop(out: Node) -> None:
        a.grad += out.grad[0, 0, 0, 0]

    return Node(value, (a,), "sum", backprop)


def activation(x: Node, kind: str = "relu") -> Node:
    """Elementwise nonlinearity. Kinds: relu (max(0, v)), identity."""
    if kind == "identity":
        def backprop_id(out: Node) -> None:
            x.grad += out.grad

        return Node(x.value, (x,), "identity", backprop_id)
    if kind == "relu":
        value = Tensor4.from_zyxc(np.maximum(x.value.zyxc, 0.0))

        def backprop(out: Node) -> None:
            x.grad += out.grad * (x.value.zyxc > 0.0)

        return Node(value, (x,), "relu", backprop)
    raise ValueError(f"unknown activation kind {kind!r}")


def relu(x: Node) -> Node:
    return activation(x, "relu")


def concat_channels(a: Node, b: Node) -> Node:
    value = a.value.concat_channels(b.value)
    ca = a.value.shape.c

    def backprop(out: Node) -> None:
        a.grad += out.grad[:, :, :, :ca]
        b.grad += out.grad[:, :, :, ca:]

    return Node(value, (a, b), "concat", backprop)


# ---------------------------------------------------------------------------
# shuffles as graph ops
# ---------------------------------------------------------------------------

def down_shuffle_op(x: Node, factors: ShuffleFactors) -> Node:
    factors = ShuffleFactors(*factors)
    value = down_shuffle(x.value, factors)

    def backprop(out: Node) -> None:
        x.grad += up_shuffle(Tensor4.from_zyxc(out.grad, copy=False), factors).zyxc

    return Node(value, (x,), "down_shuffle", backprop)


def up_shuffle_op(x: Node, factors: ShuffleFactors) -> Node:
    factors = ShuffleFactors(*factors)
    value = up_shuffle(x.value, factors)

    def backprop(out: Node) -> None:
        x.grad += down_shuffle(Tensor4.from_zyxc(out.grad, copy=False), factors).zyxc

    return Node(value, (x,), "up_shuffle", backprop)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(shape: Shape4, kernel, stride, padding) -> tuple[int, int, int]:
    out = []
    for extent, k, s, p in zip(shape.spatial, kernel, stride, padding):
        o = (extent + 2 * p - k) // s + 1
        if o < 1:
            raise ValueError(
                f"degenerate convolution output: extent {extent}, kernel {k}, "
                f"stride {s}, padding {p}"
            )
        out.append(o)
    return tuple(out)


def conv3d(x: Node, weight: Node, bias: Node, kernel: tuple[int, int, int],
           stride: tuple[int, int, int] = (1, 1, 1),
           padding: tuple[int, int, int] = (0, 0, 0)) -> Node:
    """Cross-correlate ``x`` with a filter bank.

    ``weight`` has Tensor4 shape (kx, ky, kz, c_in*c_out) with channel index
    ci * c_out + co; ``bias`` has shape (1, 1, 1, c_out).
    """
    kx, ky, kz = kernel
    c_out = bias.value.shape.c
    c_in = weight.value.shape.c // c_out
    if weight.value.shape.spatial != (kx, ky, kz) or weight.value.shape.c != c_in * c_out:
        raise ValueError("weight tensor does not match the declared kernel geometry")
    if x.value.shape.c != c_in:
        raise ValueError(
            f"channel mismatch: input has {x.value.shape.c}, filter expects {c_in}"
        )
    ox, oy, oz = _conv_geometry(x.value.shape, kernel, stride, padding)
    sx, sy, sz = stride
    px, py, pz = padding

    xp = np.pad(x.value.zyxc, ((pz, pz), (py, py), (px, px), (0, 0)))
    windows = sliding_window_view(xp, (kz, ky, kx), axis=(0, 1, 2))[::sz, ::sy, ::sx]
    w5 = weight.value.zyxc.reshape(kz, ky, kx, c_in, c_out)
    out = np.tensordot(windows, w5, axes=([3, 4, 5, 6], [3, 0, 1, 2]))
    out += bias.value.zyxc[0, 0, 0, :]
    value = Tensor4.from_zyxc(np.ascontiguousarray(out), copy=False)

    def backprop(out_node: Node) -> None:
        g = out_node.grad  # (oz, oy, ox, c_out)
        # weights: contract padded-input windows against the output gradient
        gw = np.tensordot(windows, g, axes=([0, 1, 2], [0, 1, 2]))
        weight.grad += gw.transpose(1, 2, 3, 0, 4).reshape(kz, ky, kx, c_in * c_out)
        bias.grad[0, 0, 0, :] += g.sum(axis=(0, 1, 2))
        # input: scatter each kernel tap back over its strided window
        gxp = np.zeros_like(xp)
        gmat = g.reshape(-1, c_out)
        for dkz in range(kz):
            for dky in range(ky):
                for dkx in range(kx):
                    contrib = gmat @ w5[dkz, dky, dkx].T  # (-1, c_in)
                    gxp[dkz : dkz + sz * (oz - 1) + 1 : sz,
                        dky : dky + sy * (oy - 1) + 1 : sy,
                        dkx : dkx + sx * (ox - 1) + 1 : sx, :] += contrib.reshape(
                            oz, oy, ox, c_in)
        Z, Y, X, _ = xp.shape
        x.grad += gxp[pz : Z - pz, py : Y - py, px : X - px, :]

    return Node(value, (x, weight, bias), "conv3d", backprop)


# ---------------------------------------------------------------------------
# pooling / softmax / loss
# ---------------------------------------------------------------------------

def maxpool3(x: Node, factors: tuple[int, int, int]) -> Node:
    """Per-window maximum with window = stride = factors.

    Gradient goes to the first maximum in buffer layout order.
    """
    fx, fy, fz = factors
    if min(factors) < 1:
        raise ValueError(f"pool factors must be >= 1, got {factors}")
    X, Y, Z, C = x.value.shape
    if X % fx or Y % fy or Z % fz:
        raise ValueError(f"extents {(X, Y, Z)} not divisible by pool factors {factors}")
    oz, oy, ox = Z // fz, Y // fy, X // fx
    win = fz * fy * fx

    blocks = x.value.zyxc.reshape(oz, fz, oy, fy, ox, fx, C)
    blocks = blocks.transpose(0, 2, 4, 6, 1, 3, 5).reshape(oz, oy, ox, C, win)
    idx = blocks.argmax(axis=4)
    value = Tensor4.from_zyxc(
        np.ascontiguousarray(np.take_along_axis(blocks, idx[..., None], axis=4)[..., 0]),
        copy=False,
    )

    def backprop(out: Node) -> None:
        gwin = np.zeros((oz, oy, ox, C, win))
        np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=4)
        gwin = gwin.reshape(oz, oy, ox, C, fz, fy, fx).transpose(0, 4, 1, 5, 2, 6, 3)
        x.grad += gwin.reshape(Z, Y, X, C)

    return Node(value, (x,), "maxpool", backprop)


def softmax_channels(x: Node) -> Node:
    """Per-voxel channel distribution, stabilized by max subtraction."""
    a = x.value.zyxc
    shifted = a - a.max(axis=3, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=3, keepdims=True)
    value = Tensor4.from_zyxc(p, copy=False)

    def backprop(out: Node) -> None:
        inner = (out.grad * p).sum(axis=3, keepdims=True)
        x.grad += p * (out.grad - inner)

    return Node(value, (x,), "softmax", backprop)


def _check_one_hot(labels: Tensor4) -> None:
    g = labels.zyxc
    if not (((g == 0.0) | (g == 1.0)).all() and (g.sum(axis=3) == 1.0).all()):
        raise ValueError("labels must be one-hot over the channel axis")


def ce_dice_loss(probs: Node, labels: Tensor4, lam_ce: float = 1.0,
                 lam_dice: float = 1.0, smooth: float = 1e-5,
                 prob_floor: float = 1e-12) -> Node:
    """Weighted sum of mean voxelwise cross-entropy and soft-Dice losses.

    Soft Dice per foreground class is (2*sum(p*g) + smooth) /
    (sum(p) + sum(g) + smooth); the Dice loss is one minus the mean over
    foreground classes (channel 0 is background). Probabilities are floored
    at ``prob_floor`` inside the log only.
    """
    if probs.value.shape != labels.shape:
        raise ValueError(f"shape mismatch: {probs.value.shape} vs {labels.shape}")
    K = labels.shape.c
    if K < 2:
        raise ValueError("need at least 2 classes (background + foreground)")
    _check_one_hot(labels)

    p = probs.value.zyxc
    g = labels.zyxc
    n_vox = p.shape[0] * p.shape[1] * p.shape[2]
    p_safe = np.maximum(p, prob_floor)
    ce = -(g * np.log(p_safe)).sum() / n_vox

    fg = range(1, K)
    sums_pg = [(p[..., c] * g[..., c]).sum() for c in fg]
    sums_p = [p[..., c].sum() for c in fg]
    sums_g = [g[..., c].sum() for c in fg]
    dices = [
        (2.0 * spg + smooth) / (sp + sg + smooth)
        for spg, sp, sg in zip(sums_pg, sums_p, sums_g)
    ]
    dice_mean = sum(dices) / len(dices)
    total = lam_ce * ce + lam_dice * (1.0 - dice_mean)
    value = Tensor4.from_zyxc(np.array([[[[total]]]]))

    def backprop(out: Node) -> None:
        gl = out.grad[0, 0, 0, 0]
        grad = np.zeros_like(p)
        # cross-entropy: -g/p per element where the floor is inactive
        grad += lam_ce * (-(g / p_safe) * (p > prob_floor)) / n_vox
        # soft Dice, foreground channels only
        for c, spg, sp, sg in zip(fg, sums_pg, sums_p, sums_g):
            denom = sp + sg + smooth
            ddice = (2.0 * g[..., c] * denom - (2.0 * spg + smooth)) / (denom * denom)
            grad[..., c] -= lam_dice * ddice / len(dices)
        probs.grad += gl * grad

    return Node(value, (probs,), "ce_dice", backprop)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Conv3d:
    """Filter bank + bias with fixed stride/padding; owns its parameter nodes.

    Default padding "same" keeps spatial extents (odd kernels only);
    weights are sampled N(0, sigma) and biases start at zero. Without an
    rng the weights start at zero too (for hand-set filters in tests).
    """

    def __init__(self, c_in: int, c_out: int, kernel: tuple[int, int, int] = (3, 3, 3),
                 stride: tuple[int, int, int] = (1, 1, 1),
                 padding: tuple[int, int, int] | str = "same",
                 rng: Rng | None = None, sigma: float = 0.01):
        if c_in < 1 or c_out < 1:
            raise ValueError("channel counts must be >= 1")
        if padding == "same":
            if any(k % 2 == 0 for k in kernel):
                raise ValueError(f"'same' padding requires odd kernel extents, got {kernel}")
            padding = tuple(k // 2 for k in kernel)
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.c_in = c_in
        self.c_out = c_out
        wshape = Shape4(kernel[0], kernel[1], kernel[2], c_in * c_out)
        if rng is None:
            weight_value = Tensor4.zeros(wshape)
        else:
            weight_value = Tensor4.gaussian(wshape, 0.0, sigma, rng)
        self.weight = Node(weight_value, op="param")
        self.bias = Node(Tensor4.zeros(Shape4(1, 1, 1, c_out)), op="param")

    def __call__(self, x: Node) -> Node:
        return conv3d(x, self.weight, self.bias, self.kernel, self.stride, self.padding)

    def parameters(self) -> list[tuple[str, Node]]:
        return [("weight", self.weight), ("bias", self.bias)]


class DownShuffleConv:
    """Periodic down-shuffle followed by a low-resolution convolution.

    Turns an (nx*d, ny*h, nz*w, C) input into (d, h, w, k) features while
    keeping every input element visible to the convolution.
    """

    def __init__(self, c_in: int, k: int, factors: ShuffleFactors, rng: Rng,
                 kernel: tuple[int, int, int] = (3, 3, 3), act: str = "relu",
                 sigma: float = 0.01):
        self.factors = ShuffleFactors(*factors).validate()
        self.act = act
        self.conv = Conv3d(c_in * self.factors.product, k, kernel=kernel,
                           rng=rng, sigma=sigma)

    def __call__(self, x: Node) -> Node:
        return activation(self.conv(down_shuffle_op(x, self.factors)), self.act)

    def parameters(self) -> list[tuple[str, Node]]:
        return self.conv.parameters()


class ConvUpShuffle:
    """Low-resolution convolution producing factor-product channel groups,
    then periodic up-shuffle back to full resolution."""

    def __init__(self, c_in: int, c_out: int, factors: ShuffleFactors, rng: Rng,
                 kernel: tuple[int, int, int] = (3, 3, 3), sigma: float = 0.01):
        self.factors = ShuffleFactors(*factors).validate()
        self.c_out = c_out
        self.conv = Conv3d(c_in, c_out * self.factors.product, kernel=kernel,
                           rng=rng, sigma=sigma)

    def __call__(self, x: Node) -> Node:
        return up_shuffle_op(self.conv(x), self.factors)

    def parameters(self) -> list[tuple[str, Node]]:
        return self.conv.parameters()


# ---------------------------------------------------------------------------
# backbone
# ---------------------------------------------------------------------------

@dataclass
class BackboneSpec:
    """Topology of the shuffle-wrapped U-net.

    ``widths`` gives the encoder feature width per level (depth = len);
    ``pool`` is the per-axis pooling factor between levels; ``factors`` wraps
    the whole net in a down-shuffle stem and an up-shuffle head.
    """

    class_count: int
    in_channels: int = 1
    factors: tuple[int, int, int] = (1, 1, 1)
    stem_channels: int = 64
    widths: tuple[int, ...] = (32, 64, 128)
    pool: tuple[int, int, int] = (2, 2, 2)
    act: str = "relu"
    init_sigma: float = 0.01

    def validate(self) -> "BackboneSpec":
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.in_channels < 1 or self.stem_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError(f"bad encoder widths {self.widths}")
        ShuffleFactors(*self.factors).validate()
        if min(self.pool) < 1:
            raise ValueError(f"pool factors must be >= 1, got {self.pool}")
        return self

    @property
    def depth(self) -> int:
        return len(self.widths)

    def check_input_extents(self, extents: tuple[int, int, int]) -> None:
        """Raise unless extents survive the stem shuffle and all poolings."""
        for name, extent, f in zip("xyz", extents, self.factors):
            if extent % f:
                raise ValueError(f"extent {name}={extent} not divisible by shuffle factor {f}")
        reduced = [e // f for e, f in zip(extents, self.factors)]
        for level in range(self.depth - 1):
            for i, (name, p) in enumerate(zip("xyz", self.pool)):
                if reduced[i] % p:
                    raise ValueError(
                        f"extent {name}={reduced[i]} at level {level} not divisible "
                        f"by pool factor {p}"
                    )
                reduced[i] //= p


class ShuffleUNet3d:
    """Down-shuffle stem, U-net style encoder/decoder with skip concatenation,
    conv+up-shuffle head, softmax output.

    With factors (1, 1, 1) at both ends this is a plain U-net baseline.
    Each forward pass records the element count of every backbone activation
    (stem output through the last decoder feature map) in
    ``last_activation_counts`` for cost instrumentation.
    """

    def __init__(self, spec: BackboneSpec, rng: Rng):
        spec = spec.validate()
        self.spec = spec
        factors = ShuffleFactors(*spec.factors)
        widths = spec.widths
        self.stem = DownShuffleConv(spec.in_channels, spec.stem_channels, factors,
                                    rng.spawn(0), act=spec.act, sigma=spec.init_sigma)
        self.enc: list[Conv3d] = []
        prev = spec.stem_channels
        for i, w in enumerate(widths):
            self.enc.append(Conv3d(prev, w, rng=rng.spawn(1 + i), sigma=spec.init_sigma))
            prev = w
        self.ups: list[ConvUpShuffle] = []
        self.dec: list[Conv3d] = []
        for i in range(spec.depth - 2, -1, -1):
            self.ups.append(ConvUpShuffle(widths[i + 1], widths[i], ShuffleFactors(*spec.pool),
                                          rng.spawn(100 + i), kernel=(1, 1, 1),
                                          sigma=spec.init_sigma))
            self.dec.append(Conv3d(2 * widths[i], widths[i], rng=rng.spawn(200 + i),
                                   sigma=spec.init_sigma))
        self.head = ConvUpShuffle(widths[0], spec.class_count, factors,
                                  rng.spawn(999), sigma=spec.init_sigma)
        self.last_activation_counts: list[tuple[str, int]] = []

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> "OrderedDict[str, Node]":
        params: OrderedDict[str, Node] = OrderedDict()
        def put(prefix: str, layer) -> None:
            for name, node in layer.parameters():
                params[f"{prefix}.{name}"] = node
        put("stem", self.stem)
        for i, layer in enumerate(self.enc):
            put(f"enc{i}", layer)
        for i, layer in enumerate(self.ups):
            put(f"up{i}", layer)
        for i, layer in enumerate(self.dec):
            put(f"dec{i}", layer)
        put("head", self.head)
        return params

    def parameter_count(self) -> int:
        return sum(node.value.size for node in self.parameters().values())

    def zero_grad(self) -> None:
        for node in self.parameters().values():
            node.zero_grad()

    # -- forward ------------------------------------------------------------

    def forward(self, patch: Tensor4 | Node) -> Node:
        """Class probability map for one patch (softmax over channels)."""
        self.spec.check_input_extents(
            patch.shape.spatial if isinstance(patch, Tensor4) else patch.value.shape.spatial
        )
        x = constant(patch) if isinstance(patch, Tensor4) else patch
        acts: list[tuple[str, int]] = []

        def track(label: str, node: Node) -> Node:
            acts.append((label, node.value.size))
            return node

        x = track("stem", self.stem(x))
        skips: list[Node] = []
        act = self.spec.act
        for i, layer in enumerate(self.enc):
            x = track(f"enc{i}", activation(layer(x), act))
            if i < self.spec.depth - 1:
                skips.append(x)
                x = track(f"pool{i}", maxpool3(x, self.spec.pool))
        for j, (up, dec) in enumerate(zip(self.ups, self.dec)):
            skip = skips.pop()
            x = track(f"up{j}", up(x))
            x = track(f"cat{j}", concat_channels(skip, x))
            x = track(f"dec{j}", activation(dec(x), act))
        logits = self.head(x)
        probs = softmax_channels(logits)
        self.last_activation_counts = acts
        return probs

    def predict(self, patch: Tensor4) -> Tensor4:
        return self.forward(patch).value

    @property
    def backbone_elements_total(self) -> int:
        return sum(n for _, n in self.last_activation_counts)

    @property
    def backbone_elements_peak(self) -> int:
        return max(n for _, n in self.last_activation_counts)


def build_backbone(spec: BackboneSpec, rng: Rng) -> ShuffleUNet3d:
    return ShuffleUNet3d(spec, rng)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"VCKP"
_CKPT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: Mapping[str, Node] | Mapping[str, Tensor4]) -> None:
    """Write parameters as little-endian records: magic, u32 version, then
    (u32 name length, utf-8 name, 4 x u32 extents, raw float64 data) each."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        for name, entry in params.items():
            tensor = entry.value if isinstance(entry, Node) else entry
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<4I", *tensor.shape))
            fh.write(tensor.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> "OrderedDict[str, Tensor4]":
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    buf = io.BytesIO(raw)
    if buf.read(4) != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    header = buf.read(4)
    if len(header) < 4 or struct.unpack("<I", header)[0] != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    params: OrderedDict[str, Tensor4] = OrderedDict()
    while True:
        head = buf.read(4)
        if not head:
            break
        if len(head) < 4:
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack("<I", head)
        name_bytes = buf.read(name_len)
        shape_bytes = buf.read(16)
        if len(name_bytes) < name_len or len(shape_bytes) < 16:
            raise CheckpointError(f"{path}: truncated record")
        shape = Shape4(*struct.unpack("<4I", shape_bytes))
        payload = buf.read(8 * shape.element_count)
        if len(payload) < 8 * shape.element_count:
            raise CheckpointError(f"{path}: truncated tensor payload")
        data = np.frombuffer(payload, dtype="<f8")
        params[name_bytes.decode("utf-8")] = Tensor4.from_flat(shape, data)
    return params


def load_into_network(net: ShuffleUNet3d, params: Mapping[str, Tensor4]) -> None:
    """Copy checkpoint tensors into a compatible network, checking names and shapes."""
    own = net.parameters()
    if set(own) != set(params):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise CheckpointError(
            f"parameter names do not match network (missing {missing}, unexpected {extra})"
        )
    for name, node in own.items():
        if params[name].shape != node.value.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {params[name].shape} "
                f"vs network {node.value.shape}"
            )
        node.value = params[name].copy()
        node.grad = np.zeros_like(node.value.zyxc)
