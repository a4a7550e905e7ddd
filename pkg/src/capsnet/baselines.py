"""LeNet and AlexNet classifiers for comparison and ensembling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .capsule import ParameterCountReport
from .errors import ContractError, ShapeError
from .layers import Conv2d, Linear, PoolSpec, pool2d
from .tensor import Tensor

ARCHITECTURE_INPUT_SIDE = {"lenet": 32, "alexnet": 227}


@dataclass(frozen=True)
class BaselineConfig:
    architecture: str
    n_class: int = 10

    def __post_init__(self):
        if self.architecture not in ARCHITECTURE_INPUT_SIDE:
            raise ContractError(f"unknown architecture {self.architecture!r}")
        if self.n_class < 1:
            raise ContractError(f"n_class must be positive, got {self.n_class}")

    @property
    def input_side(self) -> int:
        return ARCHITECTURE_INPUT_SIDE[self.architecture]


class _BaselineBase:
    config: BaselineConfig

    @property
    def input_side(self) -> int:
        return self.config.input_side

    @property
    def n_class(self) -> int:
        return self.config.n_class

    def forward(self, image: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, image: Tensor) -> Tensor:
        return self.forward(image)

    def _check_input(self, image: Tensor) -> Tensor:
        single = image.ndim == 3
        if single:
            image = T.reshape(image, (1,) + image.shape)
        side = self.config.input_side
        if image.ndim != 4 or image.shape[1] != 1 or image.shape[2] != side or image.shape[3] != side:
            raise ShapeError(f"{self.model_kind} expects [(B,) 1, {side}, {side}] input, got {list(image.shape)}")
        return image

    def training_step(self, images: np.ndarray, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
        logits = self.forward(Tensor(images))
        return cross_entropy_loss(logits, labels), logits.data.argmax(axis=-1)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        from .ensemble import to_distribution

        with T.no_grad():
            logits = self.forward(Tensor(images))
        return np.stack([to_distribution(row, "logits") for row in np.atleast_2d(logits.data)])


class LeNet(_BaselineBase):
    """Classic two-conv / two-pool / three-FC digit classifier on 32x32 input."""

    model_kind = "lenet"

    def __init__(self, config: BaselineConfig | None = None, n_class: int = 10, seed: int = 0, rng=None):
        self.config = config or BaselineConfig("lenet", n_class)
        if self.config.architecture != "lenet":
            raise ContractError(f"LeNet got config for {self.config.architecture!r}")
        if rng is None:
            rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(1, 6, 5, rng=rng)
        self.conv2 = Conv2d(6, 16, 5, rng=rng)
        self.pool = PoolSpec("max", 2, 2)
        self.fc1 = Linear(16 * 5 * 5, 120, rng=rng)
        self.fc2 = Linear(120, 84, rng=rng)
        self.fc3 = Linear(84, self.config.n_class, rng=rng)

    def forward(self, image: Tensor) -> Tensor:
        single = image.ndim == 3
        x = self._check_input(image)
        x = pool2d(T.relu(self.conv1(x)), self.pool)
        x = pool2d(T.relu(self.conv2(x)), self.pool)
        x = T.reshape(x, (x.shape[0], 16 * 5 * 5))
        x = T.relu(self.fc1(x))
        x = T.relu(self.fc2(x))
        logits = self.fc3(x)
        return T.reshape(logits, (self.config.n_class,)) if single else logits

    def parameters(self):
        params = []
        for name in ("conv1", "conv2", "fc1", "fc2", "fc3"):
            params.extend(getattr(self, name).parameters(name))
        return params

    def parameter_counts(self) -> ParameterCountReport:
        rows = [(name, getattr(self, name).parameter_count()) for name in ("conv1", "conv2", "fc1", "fc2", "fc3")]
        return ParameterCountReport(rows=rows)


class AlexNet(_BaselineBase):
    """Five-conv / three-FC classifier on 227x227 input, single channel, no LRN."""

    model_kind = "alexnet"

    def __init__(self, config: BaselineConfig | None = None, n_class: int = 10, seed: int = 0, rng=None):
        self.config = config or BaselineConfig("alexnet", n_class)
        if self.config.architecture != "alexnet":
            raise ContractError(f"AlexNet got config for {self.config.architecture!r}")
        if rng is None:
            rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(1, 96, 11, stride=4, rng=rng)
        self.conv2 = Conv2d(96, 256, 5, padding=2, rng=rng)
        self.conv3 = Conv2d(256, 384, 3, padding=1, rng=rng)
        self.conv4 = Conv2d(384, 384, 3, padding=1, rng=rng)
        self.conv5 = Conv2d(384, 256, 3, padding=1, rng=rng)
        self.pool = PoolSpec("max", 3, 2)
        self.fc1 = Linear(256 * 6 * 6, 4096, rng=rng)
        self.fc2 = Linear(4096, 4096, rng=rng)
        self.fc3 = Linear(4096, self.config.n_class, rng=rng)

    _conv_names = ("conv1", "conv2", "conv3", "conv4", "conv5")

    def forward(self, image: Tensor) -> Tensor:
        single = image.ndim == 3
        x = self._check_input(image)
        x = pool2d(T.relu(self.conv1(x)), self.pool)  # 96x55x55 -> 96x27x27
        x = pool2d(T.relu(self.conv2(x)), self.pool)  # 256x27x27 -> 256x13x13
        x = T.relu(self.conv3(x))
        x = T.relu(self.conv4(x))
        x = pool2d(T.relu(self.conv5(x)), self.pool)  # 256x13x13 -> 256x6x6
        x = T.reshape(x, (x.shape[0], 256 * 6 * 6))
        x = T.relu(self.fc1(x))
        x = T.relu(self.fc2(x))
        logits = self.fc3(x)
        return T.reshape(logits, (self.config.n_class,)) if single else logits

    def parameters(self):
        params = []
        for name in self._conv_names + ("fc1", "fc2", "fc3"):
            params.extend(getattr(self, name).parameters(name))
        return params

    def parameter_counts(self) -> ParameterCountReport:
        names = self._conv_names + ("fc1", "fc2", "fc3")
        return ParameterCountReport(rows=[(n, getattr(self, n).parameter_count()) for n in names])


def build_baseline(config: BaselineConfig, seed: int = 0):
    cls = LeNet if config.architecture == "lenet" else AlexNet
    return cls(config, seed=seed)


def cross_entropy_loss(logits: Tensor, target) -> Tensor:
    """Softmax cross-entropy; logits [C] with int target or [B, C] with targets [B]."""
    single = logits.ndim == 1
    rows = T.reshape(logits, (1,) + logits.shape) if single else logits
    if rows.ndim != 2:
        raise ShapeError(f"logits must be rank 1 or 2, got {list(logits.shape)}")
    bsz, n_class = rows.shape
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.shape != (bsz,):
        raise ContractError(f"need one target per sample, got {targets.shape} for batch {bsz}")
    if targets.min() < 0 or targets.max() >= n_class:
        raise ContractError(f"target out of range [0, {n_class})")
    onehot = np.zeros((bsz, n_class), dtype=T.DTYPE)
    onehot[np.arange(bsz), targets] = 1.0
    picked = T.tsum(T.mul(T.log_softmax(rows, axis=1), Tensor(onehot)), axis=1)
    return T.scale(T.tmean(picked), -1.0)
