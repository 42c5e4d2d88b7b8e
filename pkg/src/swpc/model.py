"""Compact convolutional feature extractor and classifier head.

A reduced EEGNet: temporal convolution, depthwise spatial filter over all
channels, then a separable temporal stage, with batchnorm/ELU/average
pooling/dropout between. The same backbone serves both the prescreening
module (2 classes) and the classification module (K classes); only the
head width differs.

Parameter tensors live in name-keyed dicts so the optimizer, the EMA
copy, and the checkpoint format can all treat them uniformly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class NetConfig:
    n_channels: int
    input_len: int
    n_classes: int
    temporal_kernel: int
    f1: int = 8
    depth_mult: int = 2
    f2: int = 16
    sep_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout: float = 0.25

    @property
    def embedding_dim(self) -> int:
        return self.f2 * ((self.input_len // self.pool1) // self.pool2)

    def validate(self) -> None:
        if self.f2 != self.f1 * self.depth_mult:
            raise ValueError(
                f"f2 ({self.f2}) must equal f1 x depth_mult ({self.f1}x{self.depth_mult})"
            )
        if self.n_channels < 1:
            raise ValueError("need at least one channel")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not 1 <= self.temporal_kernel <= self.input_len:
            raise ValueError(
                f"temporal kernel {self.temporal_kernel} outside [1, {self.input_len}]"
            )
        if self.input_len // self.pool1 < self.sep_kernel:
            raise ValueError(
                f"input too short: {self.input_len}//{self.pool1} < "
                f"separable kernel {self.sep_kernel}"
            )
        if (self.input_len // self.pool1) // self.pool2 < 1:
            raise ValueError("input too short for the pooling stack")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def default_config(n_channels: int, fs: float, input_len: int, n_classes: int) -> NetConfig:
    """Standard sizing: temporal kernel about half the sampling rate,
    clipped to half the window so short windows stay valid."""
    kernel = min(int(round(fs / 2.0)), input_len // 2)
    return NetConfig(
        n_channels=n_channels,
        input_len=input_len,
        n_classes=n_classes,
        temporal_kernel=kernel,
    )


# Checkpoint and EMA iterate parameters in this declaration order.
_THETA_SPECS = (
    ("conv1_kernel", lambda c: (c.f1, c.temporal_kernel)),
    ("bn1_gamma", lambda c: (c.f1,)),
    ("bn1_beta", lambda c: (c.f1,)),
    ("dw_kernel", lambda c: (c.f1, c.depth_mult, c.n_channels, 1)),
    ("bn2_gamma", lambda c: (c.f2,)),
    ("bn2_beta", lambda c: (c.f2,)),
    ("sep_dw_kernel", lambda c: (c.f2, 1, 1, c.sep_kernel)),
    ("sep_pw_kernel", lambda c: (c.f2, c.f2)),
    ("bn3_gamma", lambda c: (c.f2,)),
    ("bn3_beta", lambda c: (c.f2,)),
)
_PSI_SPECS = (
    ("head_w", lambda c: (c.embedding_dim, c.n_classes)),
    ("head_b", lambda c: (c.n_classes,)),
)
_BUFFER_SPECS = (
    ("bn1_mean", lambda c: (c.f1,)),
    ("bn1_var", lambda c: (c.f1,)),
    ("bn2_mean", lambda c: (c.f2,)),
    ("bn2_var", lambda c: (c.f2,)),
    ("bn3_mean", lambda c: (c.f2,)),
    ("bn3_var", lambda c: (c.f2,)),
)


@dataclass
class ModelBundle:
    """One module's state: feature extractor theta, head psi, batchnorm
    running buffers, and (during self-supervised tuning only) the EMA
    copy phi of theta."""

    config: NetConfig
    theta: dict[str, Tensor]
    psi: dict[str, Tensor]
    buffers: dict[str, np.ndarray]
    phi: dict[str, np.ndarray] | None = None

    def parameters(self) -> dict[str, Tensor]:
        return {**self.theta, **self.psi}


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init(config: NetConfig, seed: int) -> ModelBundle:
    """Glorot-uniform weights, unit batchnorm gains, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    c = config
    theta: dict[str, Tensor] = {}
    for name, shape_of in _THETA_SPECS:
        shape = shape_of(c)
        if name == "conv1_kernel":
            data = _glorot(rng, shape, c.temporal_kernel, c.f1 * c.temporal_kernel)
        elif name == "dw_kernel":
            data = _glorot(rng, shape, c.n_channels, c.depth_mult * c.n_channels)
        elif name == "sep_dw_kernel":
            data = _glorot(rng, shape, c.sep_kernel, c.sep_kernel)
        elif name == "sep_pw_kernel":
            data = _glorot(rng, shape, c.f2, c.f2)
        elif name.endswith("_gamma"):
            data = np.ones(shape)
        else:  # *_beta
            data = np.zeros(shape)
        theta[name] = Tensor(data, requires_grad=True)
    psi = {
        "head_w": Tensor(
            _glorot(rng, _PSI_SPECS[0][1](c), c.embedding_dim, c.n_classes),
            requires_grad=True,
        ),
        "head_b": Tensor(np.zeros(c.n_classes), requires_grad=True),
    }
    buffers = {
        name: (np.ones(shape_of(c)) if name.endswith("_var") else np.zeros(shape_of(c)))
        for name, shape_of in _BUFFER_SPECS
    }
    return ModelBundle(config=config, theta=theta, psi=psi, buffers=buffers)


def _bn(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    buffers: dict[str, np.ndarray],
    prefix: str,
    train: bool,
    update_buffers: bool,
) -> Tensor:
    if train:
        if update_buffers:
            mean, var = ad.batch_stats(x.data)
            buffers[prefix + "_mean"] += BN_MOMENTUM * (mean - buffers[prefix + "_mean"])
            buffers[prefix + "_var"] += BN_MOMENTUM * (var - buffers[prefix + "_var"])
        return ad.batchnorm(x, gamma, beta)
    return ad.batchnorm(x, gamma, beta, running=(buffers[prefix + "_mean"], buffers[prefix + "_var"]))


def feature_extract(
    config: NetConfig,
    theta: dict[str, Tensor],
    buffers: dict[str, np.ndarray],
    x,
    train: bool = False,
    rng: np.random.Generator | None = None,
    update_buffers: bool = False,
) -> Tensor:
    """Embed a batch of windows [B, ch, input_len] -> [B, embedding_dim].

    Eval mode (the default) is a pure function of (theta, buffers, x):
    batchnorm uses the running buffers and dropout is identity. Train
    mode needs an rng for dropout and standardizes by batch statistics.
    """
    if train and rng is None:
        raise ValueError("train mode requires an rng for dropout")
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 3 or xt.data.shape[1:] != (config.n_channels, config.input_len):
        raise ValueError(
            f"expected [B, {config.n_channels}, {config.input_len}], got {xt.data.shape}"
        )
    h = ad.conv2d_temporal(xt, theta["conv1_kernel"])  # [B, F1, CH, L]
    h = _bn(h, theta["bn1_gamma"], theta["bn1_beta"], buffers, "bn1", train, update_buffers)
    h = ad.conv2d_depthwise(h, theta["dw_kernel"])  # [B, F2, 1, L]
    h = _bn(h, theta["bn2_gamma"], theta["bn2_beta"], buffers, "bn2", train, update_buffers)
    h = ad.elu(h)
    h = ad.avgpool(h, config.pool1)
    h = ad.dropout(h, config.dropout, rng, train=train)
    h = ad.conv2d_depthwise(h, theta["sep_dw_kernel"])
    h = ad.conv2d_pointwise(h, theta["sep_pw_kernel"])
    h = _bn(h, theta["bn3_gamma"], theta["bn3_beta"], buffers, "bn3", train, update_buffers)
    h = ad.elu(h)
    h = ad.avgpool(h, config.pool2)
    h = ad.dropout(h, config.dropout, rng, train=train)
    return ad.reshape(h, (xt.data.shape[0], config.embedding_dim))


def classify(psi: dict[str, Tensor], embeddings: Tensor) -> Tensor:
    """Class probabilities [B, n_classes]; rows sum to 1."""
    return ad.softmax(ad.dense(embeddings, psi["head_w"], psi["head_b"]))


def logits(psi: dict[str, Tensor], embeddings: Tensor) -> Tensor:
    return ad.dense(embeddings, psi["head_w"], psi["head_b"])


def embed_and_classify(bundle: ModelBundle, x, train: bool = False,
                       rng: np.random.Generator | None = None,
                       update_buffers: bool = False) -> Tensor:
    emb = feature_extract(
        bundle.config, bundle.theta, bundle.buffers, x,
        train=train, rng=rng, update_buffers=update_buffers,
    )
    return classify(bundle.psi, emb)


def as_param_tensors(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Wrap plain arrays (e.g. the EMA copy phi) for a forward pass."""
    return {name: Tensor(a) for name, a in arrays.items()}


def predict_probs(bundle: ModelBundle, windows: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Eval-mode class probabilities for a stack of windows, computed in
    fixed-size chunks to bound the convolution working set."""
    if len(windows) == 0:
        return np.empty((0, bundle.config.n_classes))
    out = np.empty((len(windows), bundle.config.n_classes))
    for i in range(0, len(windows), chunk):
        out[i : i + chunk] = embed_and_classify(bundle, windows[i : i + chunk]).data
    return out


# ---------------------------------------------------------------------------
# Checkpoints: u32 length-prefixed JSON header, then raw f64 tensors in
# declaration order (theta, psi, buffers).


def save_bundle(bundle: ModelBundle, path) -> None:
    c = bundle.config
    names = [n for n, _ in _THETA_SPECS] + [n for n, _ in _PSI_SPECS]
    header = {
        "config": asdict(c),
        "tensors": [[n, list(bundle.parameters()[n].data.shape)] for n in names],
        "buffers": [[n, list(bundle.buffers[n].shape)] for n, _ in _BUFFER_SPECS],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = bundle.parameters()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())
        for n, _ in _BUFFER_SPECS:
            fh.write(np.ascontiguousarray(bundle.buffers[n], dtype="<f8").tobytes())


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = NetConfig(**header["config"])
        config.validate()
        bundle = init(config, seed=0)
        for name, shape in header["tensors"]:
            shape = tuple(shape)
            n = int(np.prod(shape))
            data = np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(shape)
            target = bundle.theta if name in bundle.theta else bundle.psi
            if target[name].data.shape != shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            target[name] = Tensor(data.copy(), requires_grad=True)
        for name, shape in header["buffers"]:
            n = int(np.prod(shape))
            bundle.buffers[name] = (
                np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(tuple(shape)).copy()
            )
    return bundle
