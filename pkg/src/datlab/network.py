"""The three-branch adversarial network.

A shared feature trunk feeds a task classifier from its top activation
and a binary domain classifier from a configurable tap activation, with
a gradient reversal layer between tap and domain branch. The minibatch
objective is

    E = (1/N) * sum_i ( I_label(i) * task_ce_i  -  lam * I_vad(i) * domain_ce_i )

where I_label gates frames without a class label out of the task term
and I_vad gates non-speech frames out of the domain term. Parameter
updates are plain SGD on E for the trunk and task head; the domain head
always descends its own cross-entropy, scaled by |lam| (or by lam itself
when ``eq4_literal`` is set, which performs ascent for negative lam).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    ValidationError,
)
from .layers import (
    DenseLayer,
    GrlLayer,
    ReluLayer,
    SpliceSpec,
    softmax_ce,
    splice_base_indices,
    splice_forward,
)
from .linalg import all_finite, seq_sum
from .rng import Pcg32

INIT_STREAM = 11

CHECKPOINT_MAGIC = b"DATM"
CHECKPOINT_VERSION = 1


@dataclass
class Frame:
    """One training example: feature vector plus domain/vad bits and an
    optional class label. ``label is None`` means the frame is
    untranscribed and contributes nothing to the task loss."""

    features: np.ndarray
    domain: int
    vad: int
    label: int | None = None
    utt: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1:
            raise ValidationError(f"frame features must be 1-D, got {self.features.shape}")
        if self.domain not in (0, 1):
            raise ValidationError(f"domain must be 0 or 1, got {self.domain}")
        if self.vad not in (0, 1):
            raise ValidationError(f"vad must be 0 or 1, got {self.vad}")
        if self.label is not None and self.label < 0:
            raise ValidationError(f"label must be None or >= 0, got {self.label}")


class Batch:
    """Column-array view of a frame sequence."""

    def __init__(self, x, labels, domain, vad):
        self.x = np.asarray(x, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.domain = np.asarray(domain, dtype=np.int64)
        self.vad = np.asarray(vad, dtype=np.int64)
        n = self.x.shape[0]
        for name, arr in (("labels", self.labels), ("domain", self.domain), ("vad", self.vad)):
            if arr.shape != (n,):
                raise ShapeError(f"{name} shape {arr.shape} != ({n},)")
        self.labeled = self.labels >= 0

    @classmethod
    def from_frames(cls, frames) -> "Batch":
        frames = list(frames)
        if not frames:
            raise ValidationError("empty batch")
        x = np.stack([f.features for f in frames])
        labels = np.array([-1 if f.label is None else f.label for f in frames])
        domain = np.array([f.domain for f in frames])
        vad = np.array([f.vad for f in frames])
        return cls(x, labels, domain, vad)

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class Arch:
    """Layer widths of the three branches plus the splice configuration.

    ``tap`` is the 1-based trunk layer whose activation feeds the domain
    branch; every trunk layer up to it is shared by both heads.
    """

    input_dim: int = 8
    n_classes: int = 4
    feature_widths: tuple = (64, 64, 64)
    task_widths: tuple = ()
    domain_widths: tuple = (64, 64)
    tap: int = 2
    context: tuple = (-1, 0, 1)
    subsample: int = 3

    def __post_init__(self):
        object.__setattr__(self, "feature_widths", tuple(int(w) for w in self.feature_widths))
        object.__setattr__(self, "task_widths", tuple(int(w) for w in self.task_widths))
        object.__setattr__(self, "domain_widths", tuple(int(w) for w in self.domain_widths))
        object.__setattr__(self, "context", tuple(int(c) for c in self.context))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if not self.feature_widths:
            raise ConfigError("feature branch needs at least one layer")
        for branch, widths in (
            ("feature", self.feature_widths),
            ("task", self.task_widths),
            ("domain", self.domain_widths),
        ):
            for i, w in enumerate(widths):
                if w < 1:
                    raise ConfigError(f"{branch} layer {i + 1} has non-positive width {w}")
        if not 1 <= self.tap <= len(self.feature_widths):
            raise ConfigError(
                f"tap {self.tap} outside [1, {len(self.feature_widths)}]"
            )

    @property
    def splice(self) -> SpliceSpec:
        return SpliceSpec(self.context, self.subsample)

    @property
    def spliced_dim(self) -> int:
        return self.input_dim * len(self.context)


@dataclass(frozen=True)
class HyperParams:
    """Training knobs. The sign of ``lam`` selects the mode: positive is
    adversarial (DAT), negative is plain multi-task, zero ignores the
    unlabeled data entirely."""

    lam: float = 0.03
    alpha: float = 0.05
    batch_size: int = 64
    epochs: int = 15
    seed: int = 0
    arch: Arch = field(default_factory=Arch)
    eq4_literal: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")

    @property
    def mode(self) -> str:
        if self.lam > 0:
            return "dat"
        if self.lam < 0:
            return "mtl"
        return "baseline"


@dataclass
class Activations:
    task_logits: np.ndarray
    domain_logits: np.ndarray
    tap_features: np.ndarray


@dataclass
class BatchGradients:
    """Per-layer (grad_w, grad_b) pairs for each parameter group."""

    feature: list
    task: list
    domain: list

    def groups(self):
        return (("feature", self.feature), ("task", self.task), ("domain", self.domain))


class Mlp:
    """Dense stack with ReLU between layers; the final layer is linear
    unless ``relu_after_last`` (used by the trunk, whose top activation
    is itself a hidden representation)."""

    def __init__(self, layers, relu_after_last=False):
        self.dense = list(layers)
        self.relu_after_last = relu_after_last
        n_relu = len(self.dense) if relu_after_last else len(self.dense) - 1
        self.relus = [ReluLayer() for _ in range(max(n_relu, 0))]
        self.activations = []

    def _has_relu(self, i: int) -> bool:
        return i < len(self.relus)

    def forward(self, x) -> np.ndarray:
        self.activations = []
        for i, layer in enumerate(self.dense):
            x = layer.forward(x)
            if self._has_relu(i):
                x = self.relus[i].forward(x)
            self.activations.append(x)
        return x

    def backward(self, grad_out, inject=None):
        """Backpropagate ``grad_out`` from the top; ``inject`` maps a
        1-based layer index to an extra gradient added to that layer's
        post-activation output on the way down. Returns (per-layer
        (grad_w, grad_b) in forward order, grad wrt the input)."""
        g = grad_out
        grads = [None] * len(self.dense)
        for i in range(len(self.dense) - 1, -1, -1):
            if inject and (i + 1) in inject:
                g = g + inject[i + 1]
            if self._has_relu(i):
                g = self.relus[i].backward(g)
            g, gw, gb = self.dense[i].backward(g)
            grads[i] = (gw, gb)
        return grads, g


def _glorot_layer(rng: Pcg32, n_out: int, n_in: int) -> DenseLayer:
    bound = np.sqrt(6.0 / (n_in + n_out))
    w = np.empty((n_out, n_in))
    flat = w.reshape(-1)
    for i in range(flat.shape[0]):
        flat[i] = rng.uniform(-bound, bound)
    return DenseLayer(w, np.zeros(n_out))


def _build_stack(rng: Pcg32, widths) -> list:
    return [_glorot_layer(rng, n_out, n_in) for n_in, n_out in zip(widths, widths[1:])]


class Network:
    """Model parameters plus forward/objective/backward/update."""

    def __init__(self, hp: HyperParams, trunk: Mlp, task_head: Mlp, domain_head: Mlp):
        self.hp = hp
        self.arch = hp.arch
        self.trunk = trunk
        self.task_head = task_head
        self.domain_head = domain_head
        self.grl = GrlLayer(hp.lam)
        self._batch = None
        self._batch_src = None
        self._acts = None

    # -- structure ---------------------------------------------------------

    @property
    def input_width(self) -> int:
        return self.trunk.dense[0].in_width

    @property
    def splice(self) -> SpliceSpec:
        return self.arch.splice

    def param_groups(self):
        return (
            ("feature", self.trunk.dense),
            ("task", self.task_head.dense),
            ("domain", self.domain_head.dense),
        )

    def copy_params(self):
        return [
            [(layer.w.copy(), layer.b.copy()) for layer in dense]
            for _, dense in self.param_groups()
        ]

    def restore_params(self, snapshot) -> None:
        for (_, dense), saved in zip(self.param_groups(), snapshot):
            for layer, (w, b) in zip(dense, saved):
                layer.w[...] = w
                layer.b[...] = b

    # -- compute -----------------------------------------------------------

    def _resolve(self, batch) -> Batch:
        if isinstance(batch, Batch):
            if len(batch) == 0:
                raise ValidationError("empty batch")
            return batch
        return Batch.from_frames(batch)

    def forward(self, batch) -> Activations:
        b = self._resolve(batch)
        if b.x.shape[1] != self.input_width:
            raise ShapeError(
                f"batch width {b.x.shape[1]} != model input width {self.input_width}"
            )
        top = self.trunk.forward(b.x)
        tap_features = self.trunk.activations[self.arch.tap - 1]
        task_logits = self.task_head.forward(top)
        domain_logits = self.domain_head.forward(self.grl.forward(tap_features))
        self._batch = b
        self._batch_src = batch
        self._acts = Activations(task_logits, domain_logits, tap_features)
        return self._acts

    def _frame_losses(self, b: Batch, acts: Activations):
        """Per-frame masked task and domain CE losses and logit grads.
        Masked rows are zeroed by assignment so they stay exact no-ops
        in every downstream accumulation."""
        safe_labels = np.where(b.labeled, b.labels, 0)
        ly, gy = softmax_ce(acts.task_logits, safe_labels)
        ly = ly.copy()
        ly[~b.labeled] = 0.0
        gy[~b.labeled] = 0.0
        ld, gd = softmax_ce(acts.domain_logits, b.domain)
        ld = ld.copy()
        silent = b.vad == 0
        ld[silent] = 0.0
        gd[silent] = 0.0
        return ly, gy, ld, gd

    def objective(self, batch, lam: float | None = None):
        """Minibatch objective value and its two masked mean components.

        Both means divide by the batch size, not by the mask counts, so
        they are exactly the terms the objective combines.
        """
        if lam is not None:
            self.grl.lam = float(lam)
        lam = self.grl.lam
        acts = self.forward(batch)
        b = self._batch
        ly, _, ld, _ = self._frame_losses(b, acts)
        n = float(len(b))
        e_value = seq_sum(ly[i] - lam * ld[i] for i in range(len(b))) / n
        return e_value, seq_sum(ly) / n, seq_sum(ld) / n

    def backward(self, batch=None, lam: float | None = None, norm: float | None = None) -> BatchGradients:
        """Gradients of the objective for all three parameter groups.

        ``norm`` is the minibatch-size divisor N (defaults to the batch
        length); the training loop passes its constant batch size so the
        scale of an update never depends on how many frames survived the
        masks.
        """
        if self._batch is None:
            raise StateError("backward called before forward")
        if batch is not None and batch is not self._batch and batch is not self._batch_src:
            raise StateError("backward called with a batch that was not forwarded")
        b = self._batch
        if lam is not None:
            self.grl.lam = float(lam)
        lam = self.grl.lam
        n = float(len(b)) if norm is None else float(norm)

        _, gy, _, gd = self._frame_losses(b, self._acts)
        gy /= n
        gd /= n

        task_grads, gin_task = self.task_head.backward(gy)
        domain_grads_raw, gin_domain = self.domain_head.backward(gd)

        coef = lam if self.hp.eq4_literal else abs(lam)
        domain_grads = [(coef * gw, coef * gb) for gw, gb in domain_grads_raw]

        inject = {self.arch.tap: self.grl.backward(gin_domain)}
        feature_grads, _ = self.trunk.backward(gin_task, inject=inject)
        return BatchGradients(feature_grads, task_grads, domain_grads)

    def sgd_step(self, grads: BatchGradients, alpha: float) -> None:
        for (group, layers), (gname, glist) in zip(self.param_groups(), grads.groups()):
            if len(layers) != len(glist):
                raise ShapeError(f"{group} gradients have {len(glist)} layers, model has {len(layers)}")
            for i, (layer, (gw, gb)) in enumerate(zip(layers, glist)):
                if gw.shape != layer.w.shape or gb.shape != layer.b.shape:
                    raise ShapeError(f"gradient shape mismatch in {group} layer {i + 1}")
                if not (all_finite(gw) and all_finite(gb)):
                    raise NumericError(f"non-finite gradient in parameter group '{group}' layer {i + 1}")
        for (_, layers), (_, glist) in zip(self.param_groups(), grads.groups()):
            for layer, (gw, gb) in zip(layers, glist):
                layer.w -= alpha * gw
                layer.b -= alpha * gb

    # -- whole-utterance scoring --------------------------------------------

    def forward_sequence(self, features, subsample: int = 1):
        """Score one utterance given raw (unspliced) frame features.

        Splices at the given stride and runs the forward pass; returns
        (activations, base frame indices).
        """
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.arch.input_dim:
            raise ShapeError(
                f"utterance features must be Tx{self.arch.input_dim}, got {feats.shape}"
            )
        x = splice_forward(self.splice, feats, subsample=subsample)
        base = splice_base_indices(feats.shape[0], subsample)
        batch = Batch(x, -np.ones(x.shape[0], dtype=np.int64), np.zeros(x.shape[0], dtype=np.int64), np.ones(x.shape[0], dtype=np.int64))
        return self.forward(batch), base


def build_model(hp: HyperParams) -> Network:
    """Deterministically initialise a network from its hyperparameters.

    Weights are uniform Glorot draws from a PCG stream seeded by
    ``hp.seed``, in trunk, task, domain order; biases start at zero.
    """
    arch = hp.arch
    rng = Pcg32(hp.seed, INIT_STREAM)
    trunk_widths = (arch.spliced_dim,) + arch.feature_widths
    task_widths = (arch.feature_widths[-1],) + arch.task_widths + (arch.n_classes,)
    tap_width = arch.feature_widths[arch.tap - 1]
    domain_widths = (tap_width,) + arch.domain_widths + (2,)
    trunk = Mlp(_build_stack(rng, trunk_widths), relu_after_last=True)
    task_head = Mlp(_build_stack(rng, task_widths))
    domain_head = Mlp(_build_stack(rng, domain_widths))
    return Network(hp, trunk, task_head, domain_head)


# -- checkpoints -------------------------------------------------------------


def _pack_widths(widths) -> bytes:
    return struct.pack(f"<I{len(widths)}I", len(widths), *widths)


def save_checkpoint(network: Network, path) -> None:
    hp = network.hp
    arch = hp.arch
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<ddIQI?", hp.lam, hp.alpha, hp.batch_size, hp.seed, hp.epochs, hp.eq4_literal),
        struct.pack("<IIII", arch.input_dim, arch.n_classes, arch.tap, arch.subsample),
        struct.pack(f"<I{len(arch.context)}i", len(arch.context), *arch.context),
        _pack_widths(arch.feature_widths),
        _pack_widths(arch.task_widths),
        _pack_widths(arch.domain_widths),
    ]
    for _, layers in network.param_groups():
        parts.append(struct.pack("<I", len(layers)))
        for layer in layers:
            parts.append(struct.pack("<II", layer.out_width, layer.in_width))
            parts.append(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("checkpoint truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_array(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.data):
            raise FormatError("checkpoint truncated")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return arr.astype(np.float64)


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    (magic,) = r.take("<4s")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    (version,) = r.take("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    lam, alpha, batch_size, seed, epochs, eq4 = r.take("<ddIQI?")
    input_dim, n_classes, tap, subsample = r.take("<IIII")
    (ctx_len,) = r.take("<I")
    context = r.take(f"<{ctx_len}i")
    widths = []
    for _ in range(3):
        (cnt,) = r.take("<I")
        widths.append(r.take(f"<{cnt}I") if cnt else ())
    arch = Arch(
        input_dim=input_dim,
        n_classes=n_classes,
        feature_widths=widths[0],
        task_widths=widths[1],
        domain_widths=widths[2],
        tap=tap,
        context=context,
        subsample=subsample,
    )
    hp = HyperParams(
        lam=lam, alpha=alpha, batch_size=batch_size,
        epochs=epochs, seed=seed, arch=arch, eq4_literal=eq4,
    )
    groups = []
    for _ in range(3):
        (n_layers,) = r.take("<I")
        layers = []
        for _ in range(n_layers):
            rows, cols = r.take("<II")
            w = r.take_array(rows * cols).reshape(rows, cols)
            b = r.take_array(rows)
            layers.append(DenseLayer(w, b))
        groups.append(layers)
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    trunk = Mlp(groups[0], relu_after_last=True)
    task_head = Mlp(groups[1])
    domain_head = Mlp(groups[2])
    return Network(hp, trunk, task_head, domain_head)
