"""Capsule network: convolutional stem, primary capsules, routed digit capsules.

The forward pass groups stem features into capsule vectors, computes one
vote per (primary capsule, class) pair through trained transform matrices,
and combines the votes by iterative routing-by-agreement. Class scores are
the Euclidean norms of the routed digit capsules; a small decoder
reconstructs the input from the masked capsule block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .layers import Conv2d, Linear
from .tensor import ConvSpec, Tensor


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapsNetConfig:
    """Architectural hyperparameters; defaults match the 28x28 ten-class model."""

    n_class: int = 10
    input_side: int = 28
    stem_channels: int = 256
    stem_kernel: int = 9
    stem_stride: int = 1
    primary_channels: int = 32  # capsule types produced by the primary convolution
    primary_dim: int = 8
    primary_kernel: int = 9
    primary_stride: int = 2
    digit_dim: int = 16
    routing_iterations: int = 3
    reconstruction_scale: float = 5e-4
    decoder_hidden: tuple[int, int] = (512, 1024)

    def __post_init__(self):
        counts = (
            self.n_class,
            self.input_side,
            self.stem_channels,
            self.stem_kernel,
            self.stem_stride,
            self.primary_channels,
            self.primary_dim,
            self.primary_kernel,
            self.primary_stride,
            self.digit_dim,
        )
        if any(c < 1 for c in counts):
            raise ContractError(f"all capsule config counts must be positive: {self}")
        if self.routing_iterations < 1:
            raise ContractError(f"routing_iterations must be >= 1, got {self.routing_iterations}")
        self.stem_spec.out_extent(self.input_side, self.stem_kernel)
        self.primary_spec.out_extent(self.stem_out_side, self.primary_kernel)

    @property
    def stem_spec(self) -> ConvSpec:
        return ConvSpec(1, self.stem_channels, self.stem_kernel, self.stem_kernel, self.stem_stride, 0)

    @property
    def primary_spec(self) -> ConvSpec:
        return ConvSpec(
            self.stem_channels,
            self.primary_channels * self.primary_dim,
            self.primary_kernel,
            self.primary_kernel,
            self.primary_stride,
            0,
        )

    @property
    def stem_out_side(self) -> int:
        return self.stem_spec.out_extent(self.input_side, self.stem_kernel)

    @property
    def primary_out_side(self) -> int:
        return self.primary_spec.out_extent(self.stem_out_side, self.primary_kernel)

    @property
    def n_primary(self) -> int:
        return self.primary_channels * self.primary_out_side * self.primary_out_side


@dataclass
class CapsuleBlock:
    """A set of ``n`` capsule vectors of dimension ``dim``."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"capsule block must be rank 2, got shape {list(self.values.shape)}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class RoutingState:
    """Per-forward routing logits and the coupling used for the returned output."""

    logits: np.ndarray
    coupling: np.ndarray


# ---------------------------------------------------------------------------
# capsule primitives
# ---------------------------------------------------------------------------


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """Scale each vector along ``axis`` to norm |s|^2 / (1 + |s|^2) < 1.

    Direction is preserved; the zero vector maps to itself and its gradient
    there is defined as zero.
    """
    axis = axis % s.ndim
    if axis != s.ndim - 1:
        raise ShapeError("squash supports only the last axis")
    data = s.data
    n2 = np.sum(data * data, axis=-1, keepdims=True, dtype=T.DTYPE)
    r = np.sqrt(n2)
    denom = 1.0 + n2
    factor = r / denom  # |v| = |s| * factor = |s|^2 / (1 + |s|^2)
    out_data = data * factor

    def grad_fn(g):
        safe = np.where(r > 0, r, 1.0)
        unit = np.where(r > 0, data / safe, 0.0)
        fprime = (1.0 - n2) / (denom * denom)
        along = np.sum(g * unit, axis=-1, keepdims=True)
        T.accumulate_grad(s, factor * g + fprime * along * unit)

    return T.make_op(out_data, (s,), grad_fn)


def squash_norms(norms: np.ndarray) -> np.ndarray:
    """Norm the squash maps a vector of norm ``n`` to: n^2 / (1 + n^2)."""
    return norms * norms / (1.0 + norms * norms)


def compute_votes(u: Tensor, vote_weights: Tensor) -> Tensor:
    """Per-pair votes: vote[i, j] = u[i] (1 x D) times W[i, j] (D x E).

    ``u`` is [N, D] or batched [B, N, D]; ``vote_weights`` is [N, C, D, E];
    the result is [(B,) N, C, E].
    """
    if vote_weights.ndim != 4:
        raise ShapeError(f"vote weights must be rank 4, got {list(vote_weights.shape)}")
    single = u.ndim == 2
    if single:
        u = T.reshape(u, (1,) + u.shape)
    if u.ndim != 3:
        raise ShapeError(f"capsule input must be rank 2 or 3, got rank {u.ndim}")
    n, c, d, e = vote_weights.shape
    if u.shape[1] != n or u.shape[2] != d:
        raise ShapeError(
            f"capsule input {list(u.shape)} incompatible with vote weights {list(vote_weights.shape)}"
        )
    out_data = np.einsum("bnd,ncde->bnce", u.data, vote_weights.data, optimize=True)

    ut, wt = u, vote_weights

    def grad_fn(g):
        T.accumulate_grad(ut, np.einsum("bnce,ncde->bnd", g, wt.data, optimize=True))
        T.accumulate_grad(wt, np.einsum("bnd,bnce->ncde", ut.data, g, optimize=True))

    out = T.make_op(out_data, (u, vote_weights), grad_fn)
    return T.reshape(out, out.shape[1:]) if single else out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True, dtype=T.DTYPE)


def _squash_np(s: np.ndarray) -> np.ndarray:
    n2 = np.sum(s * s, axis=-1, keepdims=True, dtype=T.DTYPE)
    return s * (np.sqrt(n2) / (1.0 + n2))


def dynamic_routing(votes: Tensor, iterations: int) -> tuple[Tensor, RoutingState]:
    """Route votes [(B,) N, C, E] into digit capsules [(B,) C, E] by agreement.

    Each pass starts from zero logits. Per iteration: coupling = softmax of
    the logits over the class axis; each digit capsule is the coupling-weighted
    sum of its votes, then squashed; logits grow by the dot product between
    each vote and the squashed capsule it voted for. The logit update is
    skipped after the final iteration, and backpropagation treats the coupling
    coefficients as constants of the forward pass.
    """
    if iterations < 1:
        raise ContractError(f"routing needs at least one iteration, got {iterations}")
    single = votes.ndim == 3
    if single:
        votes = T.reshape(votes, (1,) + votes.shape)
    if votes.ndim != 4:
        raise ShapeError(f"votes must be rank 3 or 4, got rank {votes.ndim}")
    bsz, n, c, e = votes.shape
    vd = votes.data

    logits = np.zeros((bsz, n, c), dtype=T.DTYPE)
    out: Tensor | None = None
    coupling = None
    for it in range(iterations):
        coupling = _softmax_rows(logits)
        if it + 1 < iterations:
            s = np.einsum("bnc,bnce->bce", coupling, vd, optimize=True)
            v = _squash_np(s)
            logits = logits + np.einsum("bnce,bce->bnc", vd, v, optimize=True)
        else:
            weighted = T.mul(votes, Tensor(coupling[..., None]))
            out = squash(T.tsum(weighted, axis=1))

    state = RoutingState(logits=logits[0] if single else logits, coupling=coupling[0] if single else coupling)
    return (T.reshape(out, out.shape[1:]) if single else out), state


def class_probabilities(digit_caps: Tensor) -> Tensor:
    """Class scores: the Euclidean norm of each digit capsule, all in [0, 1)."""
    return T.l2_norm(digit_caps, axis=-1)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass
class CapsNetOutput:
    class_scores: Tensor
    digit_caps: Tensor
    reconstruction: Tensor
    routing: RoutingState


class CapsNet:
    """Capsule classifier with reconstruction decoder."""

    model_kind = "capsnet"

    def __init__(self, config: CapsNetConfig, seed: int = 0, rng=None):
        self.config = config
        if rng is None:
            rng = np.random.default_rng(seed)
        cfg = config
        self.stem = Conv2d(1, cfg.stem_channels, cfg.stem_kernel, stride=cfg.stem_stride, rng=rng)
        self.primary = Conv2d(
            cfg.stem_channels,
            cfg.primary_channels * cfg.primary_dim,
            cfg.primary_kernel,
            stride=cfg.primary_stride,
            rng=rng,
        )
        self.vote_weights = T.uniform(
            (cfg.n_primary, cfg.n_class, cfg.primary_dim, cfg.digit_dim), -0.1, 0.1, rng=rng, requires_grad=True
        )
        h1, h2 = cfg.decoder_hidden
        caps_flat = cfg.n_class * cfg.digit_dim
        out_pixels = cfg.input_side * cfg.input_side
        self.decoder_fc1 = Linear(caps_flat, h1, rng=rng)
        self.decoder_fc2 = Linear(h1, h2, rng=rng)
        self.decoder_fc3 = Linear(h2, out_pixels, rng=rng)

    # -- public interface used by training, evaluation, and the CLI ------
    @property
    def input_side(self) -> int:
        return self.config.input_side

    @property
    def n_class(self) -> int:
        return self.config.n_class

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = self.stem.parameters("stem") + self.primary.parameters("primary")
        params.append(("vote_weights", self.vote_weights))
        for i, fc in enumerate((self.decoder_fc1, self.decoder_fc2, self.decoder_fc3), start=1):
            params.extend(fc.parameters(f"decoder_fc{i}"))
        return params

    def primary_capsules(self, stem_output: Tensor) -> Tensor:
        """Group the primary convolution of stem features into squashed capsules.

        Output is [(B,) N, D] with every row norm < 1.
        """
        single = stem_output.ndim == 3
        if single:
            stem_output = T.reshape(stem_output, (1,) + stem_output.shape)
        cfg = self.config
        conv = self.primary(stem_output)  # [B, types*dim, side, side]
        bsz = conv.shape[0]
        side = cfg.primary_out_side
        grouped = T.reshape(conv, (bsz, cfg.primary_channels, cfg.primary_dim, side, side))
        moved = T.transpose(grouped, (0, 1, 3, 4, 2))  # capsule dim last
        u = T.reshape(moved, (bsz, cfg.n_primary, cfg.primary_dim))
        u = squash(u)
        return T.reshape(u, u.shape[1:]) if single else u

    def decode(self, digit_caps: Tensor, target_label=None) -> Tensor:
        """Reconstruct pixels from the digit capsules, masking all but one row.

        The kept row is the target label when given, else the capsule with the
        largest norm. Output values are in [0, 1].
        """
        single = digit_caps.ndim == 2
        if single:
            digit_caps = T.reshape(digit_caps, (1,) + digit_caps.shape)
        bsz, c, e = digit_caps.shape
        if target_label is None:
            labels = np.linalg.norm(digit_caps.data, axis=-1).argmax(axis=-1)
        else:
            labels = np.atleast_1d(np.asarray(target_label, dtype=np.int64))
        if labels.shape != (bsz,):
            raise ContractError(f"decode: need one label per sample, got {labels.shape} for batch {bsz}")
        if labels.min() < 0 or labels.max() >= c:
            raise ContractError(f"decode: label out of range [0, {c})")
        mask = np.zeros((bsz, c, 1), dtype=T.DTYPE)
        mask[np.arange(bsz), labels, 0] = 1.0
        kept = T.mul(digit_caps, Tensor(mask))
        h = T.relu(self.decoder_fc1(T.reshape(kept, (bsz, c * e))))
        h = T.relu(self.decoder_fc2(h))
        out = T.sigmoid(self.decoder_fc3(h))
        return T.reshape(out, out.shape[1:]) if single else out

    def votes_from_image(self, image: Tensor) -> Tensor:
        """Stem, primary capsules, and vote transform; input [(B,) 1, side, side]."""
        single = image.ndim == 3
        if single:
            image = T.reshape(image, (1,) + image.shape)
        if image.shape[1] != 1 or image.shape[2] != self.config.input_side or image.shape[3] != self.config.input_side:
            raise ShapeError(
                f"capsnet expects [(B,) 1, {self.config.input_side}, {self.config.input_side}] input, "
                f"got {list(image.shape)}"
            )
        a = T.relu(self.stem(image))
        u = self.primary_capsules(a)
        votes = compute_votes(u, self.vote_weights)
        return T.reshape(votes, votes.shape[1:]) if single else votes

    def forward(self, image: Tensor, label=None, routing_iterations: int | None = None) -> CapsNetOutput:
        votes = self.votes_from_image(image)
        iters = self.config.routing_iterations if routing_iterations is None else routing_iterations
        digit_caps, state = dynamic_routing(votes, iters)
        scores = class_probabilities(digit_caps)
        recon = self.decode(digit_caps, label)
        return CapsNetOutput(class_scores=scores, digit_caps=digit_caps, reconstruction=recon, routing=state)

    def __call__(self, image: Tensor, label=None) -> CapsNetOutput:
        return self.forward(image, label)

    def training_step(self, images: np.ndarray, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Loss tensor and predicted labels for one [B,1,side,side] batch."""
        from .losses import margin_loss, reconstruction_loss, total_loss

        out = self.forward(Tensor(images), label=labels)
        bsz = images.shape[0]
        pixels = self.config.input_side * self.config.input_side
        target = Tensor(images.reshape(bsz, pixels))
        loss = total_loss(
            margin_loss(out.class_scores, labels),
            reconstruction_loss(out.reconstruction, target),
            self.config.reconstruction_scale,
        )
        return loss, out.class_scores.data.argmax(axis=-1)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """Class distributions for a [B,1,side,side] batch: L1-normalized capsule norms."""
        from .ensemble import to_distribution

        with T.no_grad():
            out = self.forward(Tensor(images))
        scores = out.class_scores.data
        return np.stack([to_distribution(row, "capsule_norms") for row in np.atleast_2d(scores)])

    def parameter_counts(self) -> "ParameterCountReport":
        cfg = self.config
        rows = [
            ("stem_conv", self.stem.parameter_count()),
            ("primary_caps", self.primary.parameter_count()),
            ("digit_caps", int(np.prod(self.vote_weights.shape, dtype=np.int64))),
            ("decoder_fc1", self.decoder_fc1.parameter_count()),
            ("decoder_fc2", self.decoder_fc2.parameter_count()),
            ("decoder_fc3", self.decoder_fc3.parameter_count()),
        ]
        routing = cfg.n_primary * cfg.n_class
        return ParameterCountReport(rows=rows, routing_weights=routing)


@dataclass
class ParameterCountReport:
    """Per-layer trained parameter counts, with routing weights kept separate.

    Routing weights are tuned during the forward pass, not by backprop, so
    ``total`` reports trained + routing while ``total_trained`` excludes them.
    """

    rows: list[tuple[str, int]]
    routing_weights: int = 0

    @property
    def total_trained(self) -> int:
        return sum(count for _, count in self.rows)

    @property
    def total(self) -> int:
        return self.total_trained + self.routing_weights

    def as_dict(self) -> dict[str, int]:
        d = dict(self.rows)
        d["routing_weights"] = self.routing_weights
        d["total"] = self.total
        return d


def count_parameters(model) -> ParameterCountReport:
    """Per-layer and total parameter counts for any model in the package."""
    return model.parameter_counts()


# ---------------------------------------------------------------------------
# routing cost benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkRow:
    routing_iterations: int
    n_primary: int
    n_class: int
    repetitions: int
    forward_seconds: float
    routing_seconds: float
    other_seconds: float

    @property
    def routing_per_iteration(self) -> float:
        return self.routing_seconds / self.routing_iterations


BENCHMARK_HEADER = (
    "routing_iters,n_primary,n_class,repetitions,forward_s,routing_s,other_s,routing_per_iter_s"
)


def routing_benchmark(
    config: CapsNetConfig, repetitions: int = 3, iteration_counts: tuple[int, ...] = (1, 2, 3), seed: int = 0
) -> list[BenchmarkRow]:
    """Average per-forward wall clock, split into routing and non-routing time."""
    if repetitions < 1:
        raise ContractError(f"benchmark repetitions must be >= 1, got {repetitions}")
    model = CapsNet(config, seed=seed)
    image = Tensor(np.random.default_rng(seed).uniform(0, 1, (1, 1, config.input_side, config.input_side)))
    model.forward(image)  # warm up caches and BLAS threads
    rows = []
    for iters in iteration_counts:
        routing_time = 0.0
        total_time = 0.0
        for _ in range(repetitions):
            t0 = time.perf_counter()
            votes = model.votes_from_image(image)
            t1 = time.perf_counter()
            digit_caps, _ = dynamic_routing(votes, iters)
            t2 = time.perf_counter()
            scores = class_probabilities(digit_caps)
            model.decode(digit_caps, scores.data.argmax(axis=-1))
            t3 = time.perf_counter()
            routing_time += t2 - t1
            total_time += t3 - t0
        rows.append(
            BenchmarkRow(
                routing_iterations=iters,
                n_primary=config.n_primary,
                n_class=config.n_class,
                repetitions=repetitions,
                forward_seconds=total_time / repetitions,
                routing_seconds=routing_time / repetitions,
                other_seconds=(total_time - routing_time) / repetitions,
            )
        )
    return rows


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    lines = [BENCHMARK_HEADER]
    for r in rows:
        lines.append(
            f"{r.routing_iterations},{r.n_primary},{r.n_class},{r.repetitions},"
            f"{r.forward_seconds!r},{r.routing_seconds!r},{r.other_seconds!r},{r.routing_per_iteration!r}"
        )
    return "\n".join(lines) + "\n"
