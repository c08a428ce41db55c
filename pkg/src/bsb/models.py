"""Model constructors for the two benchmark families, their dropout-Bayesian
variants, Monte-Carlo predictive inference, and the versioned model file format.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Dense, Dropout, Flatten, MaxPool, Network, ReLU, ResidualBlock, softmax

FAMILIES = ("lenet5", "resnet_small")

MODEL_MAGIC = b"BSBM"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file malformed or inconsistent with this format version."""


@dataclass
class ModelSpec:
    family: str
    bayesian: bool = False
    dropout_rate: float = 0.5
    mc_samples: int = 30
    input_shape: tuple = (1, 28, 28)
    num_classes: int = 10

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.input_shape) != 3 or self.input_shape[0] not in (1, 3):
            raise ValueError(f"input_shape must be (channels, h, w) with 1 or 3 channels, got {self.input_shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


def _weighted(layer, spec):
    """A weight layer, followed by Dropout when the spec is Bayesian."""
    if spec.bayesian:
        return [layer, Dropout(spec.dropout_rate)]
    return [layer]


def _build_lenet5(spec, rng):
    c, h, w = spec.input_shape
    if h != w or h % 4 != 0 or h // 2 - 4 < 2:
        raise ValueError(f"lenet5 needs a square side divisible by 4 and >= 16, got {h}x{w}")
    side = (h // 2 - 4) // 2
    layers = []
    layers += _weighted(Conv2d(c, 6, 5, pad=2, rng=rng), spec)
    layers += [ReLU(), MaxPool(2)]
    layers += _weighted(Conv2d(6, 16, 5, pad=0, rng=rng), spec)
    layers += [ReLU(), MaxPool(2), Flatten()]
    layers += _weighted(Dense(16 * side * side, 120, rng=rng), spec)
    layers += [ReLU()]
    layers += _weighted(Dense(120, 84, rng=rng), spec)
    layers += [ReLU()]
    layers += _weighted(Dense(84, spec.num_classes, rng=rng), spec)
    return layers


def _residual_block(channels, spec, rng):
    inner = []
    inner += _weighted(Conv2d(channels, channels, 3, pad=1, rng=rng), spec)
    inner += [ReLU()]
    inner += _weighted(Conv2d(channels, channels, 3, pad=1, rng=rng), spec)
    return ResidualBlock(inner)


def _build_resnet_small(spec, rng):
    c, h, w = spec.input_shape
    if h != w or h % 4 != 0 or h < 8:
        raise ValueError(f"resnet_small needs a square side divisible by 4 and >= 8, got {h}x{w}")
    ch = 16
    layers = []
    layers += _weighted(Conv2d(c, ch, 3, pad=1, rng=rng), spec)
    layers += [ReLU()]
    layers += [_residual_block(ch, spec, rng), ReLU()]
    layers += [_residual_block(ch, spec, rng), ReLU(), MaxPool(2)]
    layers += [_residual_block(ch, spec, rng), ReLU(), MaxPool(2), Flatten()]
    layers += _weighted(Dense(ch * (h // 4) * (w // 4), spec.num_classes, rng=rng), spec)
    return layers


def build(spec: ModelSpec, seed=0) -> Network:
    """Build an initialized network for the spec (He-uniform, seed-derived)."""
    rng = np.random.default_rng(seed)
    if spec.family == "lenet5":
        layers = _build_lenet5(spec, rng)
    else:
        layers = _build_resnet_small(spec, rng)
    return Network(layers, spec.input_shape, spec.num_classes)


def mc_sample_posteriors(net: Network, x, T, rng):
    """The T stochastic softmax outputs underlying an MC prediction, [T, k]."""
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    tiled = np.broadcast_to(x, (T,) + x.shape).reshape((T,) + x.shape)
    out = np.empty((T, net.num_classes))
    chunk = max(1, 256)
    for start in range(0, T, chunk):
        out[start : start + chunk] = softmax(net.forward(tiled[start : start + chunk], train=True, rng=rng))
    return out


def mc_predict(net: Network, x, T, rng=None):
    """Mean of T dropout-active softmax passes; one eval pass if no dropout."""
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if not net.has_dropout():
        return softmax(net.forward(x[None]))[0]
    if rng is None:
        raise ValueError("mc_predict on a dropout network needs a random generator")
    return mc_sample_posteriors(net, x, T, rng).mean(axis=0)


def predict_probs_batch(net: Network, xs, T=1, rng=None, chunk_inputs=2048):
    """Posteriors [n, k] for a batch: MC-averaged when the net has dropout.

    Forward passes are chunked so the tiled MC batch stays within a bounded
    working-set size.
    """
    xs = np.asarray(xs, dtype=np.float64)
    n = len(xs)
    if not net.has_dropout():
        out = np.empty((n, net.num_classes))
        for start in range(0, n, chunk_inputs):
            out[start : start + chunk_inputs] = softmax(net.forward(xs[start : start + chunk_inputs]))
        return out
    if rng is None:
        raise ValueError("MC prediction needs a random generator")
    if T < 1:
        raise ValueError("T must be >= 1")
    samples_per_chunk = max(1, chunk_inputs // T)
    out = np.empty((n, net.num_classes))
    for start in range(0, n, samples_per_chunk):
        xb = xs[start : start + samples_per_chunk]
        tiled = np.repeat(xb, T, axis=0)
        probs = softmax(net.forward(tiled, train=True, rng=rng))
        out[start : start + samples_per_chunk] = probs.reshape(len(xb), T, -1).mean(axis=1)
    return out


def confidence_gap(net: Network, T, members, non_members, rng=None):
    """Mean max-posterior over members minus the same over non-members."""
    m_imgs = members.images if hasattr(members, "images") else np.asarray(members)
    n_imgs = non_members.images if hasattr(non_members, "images") else np.asarray(non_members)
    if len(m_imgs) == 0 or len(n_imgs) == 0:
        raise ValueError("confidence_gap needs non-empty member and non-member sets")
    m_probs = predict_probs_batch(net, m_imgs, T=T, rng=rng)
    n_probs = predict_probs_batch(net, n_imgs, T=T, rng=rng)
    return float(m_probs.max(axis=1).mean() - n_probs.max(axis=1).mean())


_FAMILY_CODES = {name: i for i, name in enumerate(FAMILIES)}


def save_model(path, spec: ModelSpec, net: Network):
    """Versioned binary model file: BSBM header, then parameters in
    declaration order as little-endian float64."""
    header = MODEL_MAGIC
    header += struct.pack(
        "<IBBdI", MODEL_FORMAT_VERSION, _FAMILY_CODES[spec.family], int(spec.bayesian),
        spec.dropout_rate, spec.mc_samples,
    )
    header += struct.pack("<3I", *spec.input_shape)
    header += struct.pack("<I", spec.num_classes)
    with open(path, "wb") as f:
        f.write(header)
        for p in net.params():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path):
    """Rebuild (spec, net) from a model file; parameter shapes come from the
    spec so the payload must match them byte-exactly."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    fixed = struct.calcsize("<IBBdI")
    try:
        version, family_code, bayesian, rate, mc_samples = struct.unpack_from("<IBBdI", blob, 4)
        shape = struct.unpack_from("<3I", blob, 4 + fixed)
        (num_classes,) = struct.unpack_from("<I", blob, 4 + fixed + 12)
    except struct.error as e:
        raise ModelFormatError(f"{path}: truncated header") from e
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    families = {v: k for k, v in _FAMILY_CODES.items()}
    if family_code not in families:
        raise ModelFormatError(f"{path}: unknown family code {family_code}")
    spec = ModelSpec(
        family=families[family_code], bayesian=bool(bayesian), dropout_rate=rate,
        mc_samples=mc_samples, input_shape=shape, num_classes=num_classes,
    )
    net = build(spec, seed=0)
    offset = 4 + fixed + 16
    for p in net.params():
        nbytes = p.size * 8
        if offset + nbytes > len(blob):
            raise ModelFormatError(f"{path}: parameter payload truncated")
        p[...] = np.frombuffer(blob, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += nbytes
    if offset != len(blob):
        raise ModelFormatError(f"{path}: {len(blob) - offset} trailing bytes after parameters")
    return spec, net
