"""Fully convolutional classifier: three input variants, one core.

Each model is a chain of conv -> batch-norm -> activation blocks followed
by global average pooling, a dense layer and a softmax.  The variants
differ only in input arrangement and kernel dimensionality:

* ``stacked1d``       -- leads concatenated into one long sequence, single
                         input channel, 1D kernels, strides may exceed 1.
* ``multichannel1d``  -- one input channel per lead, 1D kernels, stride 1,
                         so feature maps keep the input length.
* ``image2d``         -- the T x L matrix as a single-channel image with
                         square 2D kernels, so feature maps keep T x L.

Forward and backward passes are written out by hand (no autodiff); the
backward core doubles as the gradient engine for the saliency methods.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers, signals
from .errors import CheckpointError

VARIANT_STACKED = "stacked1d"
VARIANT_MULTICHANNEL = "multichannel1d"
VARIANT_IMAGE = "image2d"
VARIANTS = (VARIANT_STACKED, VARIANT_MULTICHANNEL, VARIANT_IMAGE)

LAYOUT_OF_VARIANT = {
    VARIANT_STACKED: signals.LAYOUT_STACKED,
    VARIANT_MULTICHANNEL: signals.LAYOUT_MULTICHANNEL,
    VARIANT_IMAGE: signals.LAYOUT_IMAGE,
}

# (filters, kernel, stride) per block; kernels are square for image2d.
DEFAULT_HYPERPARAMS: dict[str, tuple[tuple[int, int, int], ...]] = {
    VARIANT_STACKED: ((96, 100, 10), (256, 20, 1), (128, 20, 2)),
    VARIANT_MULTICHANNEL: ((96, 9, 1), (256, 9, 1), (128, 9, 1)),
    VARIANT_IMAGE: ((128, 9, 1), (192, 9, 1), (128, 9, 1)),
}

DEFAULT_BN_EPS = 1e-3
DEFAULT_BN_MOMENTUM = 0.99

_FIRST_LAYER_MAX_KERNEL = 100  # search-space bound for the stacked variant


@dataclass(frozen=True)
class LayerSpec:
    filters: int
    kernel: int
    stride: int


@dataclass
class FcnModel:
    """Architecture plus all parameters and running statistics.

    ``params`` holds the trainable tensors, ``stats`` the batch-norm
    running mean/variance, both keyed ``conv{i}_w``, ``conv{i}_b``,
    ``bn{i}_gamma``, ``bn{i}_beta`` / ``bn{i}_mean``, ``bn{i}_var`` and
    ``dense_w``, ``dense_b``.  Conv weights are (K, Cin, M) for 1D kernels
    and (K, K, Cin, M) for 2D.
    """

    variant: str
    class_count: int
    in_channels: int
    layers: tuple[LayerSpec, ...]
    params: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]
    bn_eps: float = DEFAULT_BN_EPS
    bn_momentum: float = DEFAULT_BN_MOMENTUM
    activation: str = "relu"  # "identity" builds an activation-free chain

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def dtype(self) -> np.dtype:
        return self.params["dense_w"].dtype

    def trainable_keys(self) -> list[str]:
        """Parameter keys in the fixed serialization order."""
        keys = []
        for i in range(self.layer_count):
            keys += [f"conv{i}_w", f"conv{i}_b", f"bn{i}_gamma", f"bn{i}_beta"]
        keys += ["dense_w", "dense_b"]
        return keys

    def stat_keys(self) -> list[str]:
        return [f"bn{i}_{s}" for i in range(self.layer_count)
                for s in ("mean", "var")]

    def copy(self) -> "FcnModel":
        return replace(self,
                       params={k: v.copy() for k, v in self.params.items()},
                       stats={k: v.copy() for k, v in self.stats.items()})


def build_model(variant: str,
                hyperparams: tuple[tuple[int, int, int], ...] | None = None,
                class_count: int = 24,
                in_channels: int | None = None,
                seed: int = 0,
                dtype=np.float32,
                activation: str = "relu") -> FcnModel:
    """Create a model with He-uniform weights, zero biases, unit gammas.

    ``hyperparams`` is a sequence of (filters, kernel, stride) triples, one
    per block; defaults come from :data:`DEFAULT_HYPERPARAMS`.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if activation not in ("relu", "identity"):
        raise ValueError(f"activation must be 'relu' or 'identity', got {activation!r}")
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if hyperparams is None:
        hyperparams = DEFAULT_HYPERPARAMS[variant]
    specs = tuple(LayerSpec(*hp) for hp in hyperparams)
    for i, s in enumerate(specs):
        if s.filters < 1 or s.kernel < 1 or s.stride < 1:
            raise ValueError(f"layer {i}: filters/kernel/stride must be positive")
    if variant == VARIANT_STACKED and specs[0].kernel > _FIRST_LAYER_MAX_KERNEL:
        raise ValueError(
            f"first-layer kernels above {_FIRST_LAYER_MAX_KERNEL} are outside "
            "the supported range for the stacked variant")
    if in_channels is None:
        in_channels = 12 if variant == VARIANT_MULTICHANNEL else 1

    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    c_in = in_channels
    for i, s in enumerate(specs):
        if variant == VARIANT_IMAGE:
            shape = (s.kernel, s.kernel, c_in, s.filters)
            fan_in = s.kernel * s.kernel * c_in
        else:
            shape = (s.kernel, c_in, s.filters)
            fan_in = s.kernel * c_in
        limit = np.sqrt(6.0 / fan_in)
        params[f"conv{i}_w"] = rng.uniform(-limit, limit, shape).astype(dtype)
        params[f"conv{i}_b"] = np.zeros(s.filters, dtype=dtype)
        params[f"bn{i}_gamma"] = np.ones(s.filters, dtype=dtype)
        params[f"bn{i}_beta"] = np.zeros(s.filters, dtype=dtype)
        stats[f"bn{i}_mean"] = np.zeros(s.filters, dtype=dtype)
        stats[f"bn{i}_var"] = np.ones(s.filters, dtype=dtype)
        c_in = s.filters
    limit = np.sqrt(6.0 / c_in)
    params["dense_w"] = rng.uniform(-limit, limit, (c_in, class_count)).astype(dtype)
    params["dense_b"] = np.zeros(class_count, dtype=dtype)
    return FcnModel(variant=variant, class_count=class_count,
                    in_channels=in_channels, layers=specs,
                    params=params, stats=stats, activation=activation)


def count_params(model: FcnModel) -> int:
    """Number of trainable scalars (running statistics excluded)."""
    return sum(model.params[k].size for k in model.trainable_keys())


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Everything the backward pass and the saliency methods need."""

    mode: str
    x0: np.ndarray                       # input in channel form
    pre_bn: list[np.ndarray] = field(default_factory=list)
    bn_out: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)   # post-activation maps
    bn_mean: list[np.ndarray] = field(default_factory=list)  # batch stats (train)
    bn_var: list[np.ndarray] = field(default_factory=list)
    v: np.ndarray | None = None          # pooled feature vector (B, M_last)
    z: np.ndarray | None = None          # logits (B, C)
    probs: np.ndarray | None = None      # softmax output (B, C)

    @property
    def batch_size(self) -> int:
        return self.x0.shape[0]


def _to_channel_form(model: FcnModel, x: np.ndarray) -> np.ndarray:
    """Validate a batch against the model variant and add the channel axis."""
    x = np.asarray(x)
    v = model.variant
    if v == VARIANT_STACKED:
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[2] != model.in_channels:
            raise ValueError(
                f"stacked1d expects (B, length) or (B, length, {model.in_channels}), "
                f"got {x.shape}")
    elif v == VARIANT_MULTICHANNEL:
        if x.ndim != 3 or x.shape[2] != model.in_channels:
            raise ValueError(
                f"multichannel1d expects (B, T, {model.in_channels}), got {x.shape}")
    else:  # image2d
        if x.ndim == 3:
            x = x[:, :, :, None]
        if x.ndim != 4 or x.shape[3] != model.in_channels:
            raise ValueError(
                f"image2d expects (B, T, L) or (B, T, L, {model.in_channels}), "
                f"got {x.shape}")
    return np.ascontiguousarray(x, dtype=model.dtype)


def forward(model: FcnModel, x: np.ndarray, mode: str = "infer",
            update_running: bool = True) -> ForwardCache:
    """Run the full network on a batch.

    ``mode="train"`` normalizes with batch statistics (batch size >= 2) and,
    unless ``update_running`` is False, blends them into the model's running
    statistics in place.  ``mode="infer"`` uses the stored running
    statistics and never mutates the model.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = _to_channel_form(model, x)
    if mode == "train" and x.shape[0] < 2:
        raise ValueError("training forward pass needs batch size >= 2")
    cache = ForwardCache(mode=mode, x0=x)
    conv_fwd = layers.conv2d_forward if model.variant == VARIANT_IMAGE \
        else layers.conv1d_forward
    h = x
    for i, spec in enumerate(model.layers):
        pre = conv_fwd(h, model.params[f"conv{i}_w"], model.params[f"conv{i}_b"],
                       spec.stride)
        gamma = model.params[f"bn{i}_gamma"]
        beta = model.params[f"bn{i}_beta"]
        if mode == "train":
            bn, _, mean, var = layers.bn_forward_train(pre, gamma, beta, model.bn_eps)
            cache.bn_mean.append(mean)
            cache.bn_var.append(var)
            if update_running:
                mom = model.bn_momentum
                model.stats[f"bn{i}_mean"] = (
                    mom * model.stats[f"bn{i}_mean"] + (1 - mom) * mean
                ).astype(model.dtype)
                model.stats[f"bn{i}_var"] = (
                    mom * model.stats[f"bn{i}_var"] + (1 - mom) * var
                ).astype(model.dtype)
        else:
            bn = layers.bn_forward_infer(pre, gamma, beta,
                                         model.stats[f"bn{i}_mean"],
                                         model.stats[f"bn{i}_var"], model.bn_eps)
        h = np.maximum(bn, 0) if model.activation == "relu" else bn
        cache.pre_bn.append(pre)
        cache.bn_out.append(bn)
        cache.acts.append(h)
    cache.v = layers.gap_forward(h)
    cache.z = cache.v @ model.params["dense_w"] + model.params["dense_b"]
    cache.probs = layers.softmax(cache.z)
    return cache


def backward_from_logits(model: FcnModel, cache: ForwardCache, dz: np.ndarray,
                         guided: bool = False, want_param_grads: bool = True):
    """Chain-rule pass from a logit-space gradient down to the input.

    ``guided=True`` replaces the activation backward rule: the upstream
    gradient passes only where both the activation input and the upstream
    gradient itself are strictly positive (no effect on identity chains).
    Batch-norm backward follows the statistics the forward pass used
    (batch statistics in train mode, running statistics in inference).

    Returns (param_grads, dx); ``param_grads`` is None when not requested.
    """
    if dz.shape != cache.z.shape:
        raise ValueError(f"dz shape {dz.shape} does not match logits {cache.z.shape}")
    grads: dict[str, np.ndarray] | None = {} if want_param_grads else None
    if want_param_grads:
        grads["dense_w"] = cache.v.T @ dz
        grads["dense_b"] = dz.sum(axis=0)
    dv = dz @ model.params["dense_w"].T
    d = layers.gap_backward(dv, cache.acts[-1].shape)
    conv_bwd = layers.conv2d_backward if model.variant == VARIANT_IMAGE \
        else layers.conv1d_backward
    for i in range(model.layer_count - 1, -1, -1):
        if model.activation == "relu":
            gate = cache.bn_out[i] > 0
            if guided:
                gate &= d > 0
            d = np.where(gate, d, 0)
        gamma = model.params[f"bn{i}_gamma"]
        if cache.mode == "train":
            xhat = (cache.pre_bn[i] - cache.bn_mean[i]) / np.sqrt(
                cache.bn_var[i] + model.bn_eps)
            d, dgamma, dbeta = layers.bn_backward_train(
                d, xhat, cache.bn_var[i], gamma, model.bn_eps)
        else:
            d, dgamma, dbeta = layers.bn_backward_infer(
                d, cache.pre_bn[i], gamma, model.stats[f"bn{i}_mean"],
                model.stats[f"bn{i}_var"], model.bn_eps)
        x_in = cache.x0 if i == 0 else cache.acts[i - 1]
        d, dw, db = conv_bwd(x_in, model.params[f"conv{i}_w"],
                             model.layers[i].stride, d)
        if want_param_grads:
            grads[f"bn{i}_gamma"] = dgamma
            grads[f"bn{i}_beta"] = dbeta
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
    return grads, d


def backward(model: FcnModel, cache: ForwardCache, labels: np.ndarray):
    """Gradients of the mean cross-entropy loss for a train-mode batch.

    The softmax/cross-entropy pair is fused, so the logit gradient is
    (probs - onehot) / batch.  Returns (param_grads, input_grad).
    """
    if cache.mode != "train":
        raise ValueError("backward requires a cache from a train-mode forward pass")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cache.batch_size,):
        raise ValueError(
            f"{labels.shape} labels for a cache of batch size {cache.batch_size}")
    dz = cache.probs.copy()
    dz[np.arange(labels.size), labels] -= 1.0
    dz /= labels.size
    return backward_from_logits(model, cache, dz, guided=False,
                                want_param_grads=True)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
#
# Little-endian throughout:
#   magic "FCNW" | u16 version (=1) | u8 variant id | u8 activation id
#   u32 class count | u32 input channels | u32 block count
#   per block: u32 filters | u32 kernel | u32 stride
#   f64 bn epsilon | f64 bn momentum
#   payload: float32 tensors in C order -- per block conv weights
#   ((K,Cin,M) or (K,K,Cin,M)), conv bias, gamma, beta, running mean,
#   running variance; then dense weights (M,C), dense bias
#   u32 CRC32 of all preceding bytes

_MAGIC = b"FCNW"
_VERSION = 1
_VARIANT_IDS = {v: i for i, v in enumerate(VARIANTS)}
_ACTIVATION_IDS = {"relu": 0, "identity": 1}


def _payload_order(model: FcnModel) -> list[str]:
    order = []
    for i in range(model.layer_count):
        order += [f"conv{i}_w", f"conv{i}_b", f"bn{i}_gamma", f"bn{i}_beta",
                  f"bn{i}_mean", f"bn{i}_var"]
    order += ["dense_w", "dense_b"]
    return order


def _tensor(model: FcnModel, key: str) -> np.ndarray:
    return model.params[key] if key in model.params else model.stats[key]


def save_checkpoint(model: FcnModel, path) -> None:
    """Serialize parameters and running statistics as float32."""
    head = struct.pack("<4sHBBIII", _MAGIC, _VERSION,
                       _VARIANT_IDS[model.variant],
                       _ACTIVATION_IDS[model.activation],
                       model.class_count, model.in_channels, model.layer_count)
    for s in model.layers:
        head += struct.pack("<III", s.filters, s.kernel, s.stride)
    head += struct.pack("<dd", model.bn_eps, model.bn_momentum)
    payload = b"".join(
        np.ascontiguousarray(_tensor(model, k), dtype="<f4").tobytes()
        for k in _payload_order(model))
    body = head + payload
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> FcnModel:
    """Read a checkpoint; raises CheckpointError on any inconsistency.

    Parsing is all-or-nothing: no model object exists until the file has
    validated completely (magic, version, shapes, byte count, checksum).
    """
    with open(path, "rb") as f:
        blob = f.read()
    fixed = struct.calcsize("<4sHBBIII")
    if len(blob) < fixed + 4:
        raise CheckpointError("file too short to hold a checkpoint header")
    magic, version, variant_id, act_id, c_count, in_ch, n_layers = \
        struct.unpack_from("<4sHBBIII", blob)
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    ids = {i: v for v, i in _VARIANT_IDS.items()}
    if variant_id not in ids:
        raise CheckpointError(f"unknown variant id {variant_id}")
    acts = {i: a for a, i in _ACTIVATION_IDS.items()}
    if act_id not in acts:
        raise CheckpointError(f"unknown activation id {act_id}")
    variant = ids[variant_id]
    off = fixed
    if len(blob) < off + 12 * n_layers + 16 + 4:
        raise CheckpointError("file truncated inside the header")
    specs = []
    for _ in range(n_layers):
        specs.append(LayerSpec(*struct.unpack_from("<III", blob, off)))
        off += 12
    bn_eps, bn_momentum = struct.unpack_from("<dd", blob, off)
    off += 16

    shapes: list[tuple[str, tuple[int, ...]]] = []
    c_in = in_ch
    for i, s in enumerate(specs):
        if s.filters < 1 or s.kernel < 1 or s.stride < 1:
            raise CheckpointError(f"layer {i} has non-positive geometry")
        wshape = (s.kernel, s.kernel, c_in, s.filters) if variant == VARIANT_IMAGE \
            else (s.kernel, c_in, s.filters)
        shapes += [(f"conv{i}_w", wshape), (f"conv{i}_b", (s.filters,)),
                   (f"bn{i}_gamma", (s.filters,)), (f"bn{i}_beta", (s.filters,)),
                   (f"bn{i}_mean", (s.filters,)), (f"bn{i}_var", (s.filters,))]
        c_in = s.filters
    shapes += [("dense_w", (c_in, c_count)), ("dense_b", (c_count,))]
    payload_len = sum(int(np.prod(sh)) * 4 for _, sh in shapes)
    if len(blob) != off + payload_len + 4:
        raise CheckpointError(
            f"file holds {len(blob)} bytes, header implies {off + payload_len + 4}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError("checksum mismatch")

    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    for key, sh in shapes:
        n = int(np.prod(sh))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += n * 4
        arr = arr.reshape(sh).astype(np.float32)
        (stats if key.endswith(("_mean", "_var")) else params)[key] = arr
    for i in range(n_layers):
        if np.any(stats[f"bn{i}_var"] < 0):
            raise CheckpointError(f"layer {i} running variance has negative entries")
    return FcnModel(variant=variant, class_count=c_count, in_channels=in_ch,
                    layers=tuple(specs), params=params, stats=stats,
                    bn_eps=bn_eps, bn_momentum=bn_momentum,
                    activation=acts[act_id])
