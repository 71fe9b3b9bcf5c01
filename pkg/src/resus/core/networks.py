"""Shared predictor and feature encoder architectures (LR, FM, DeepFM).

Both the shared predictor Ψ and the feature encoder Φ are built from the same
registry but always own separate parameter dicts. Forward passes are written
once against :class:`~resus.core.tape.GradTape`; pure inference runs the same
code on a tape whose parameters are not trainable, so nothing is recorded.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EmptyDatasetError, EncodingError, TrainingDivergedError
from .models import FeatureSpace, Instance
from .optim import Adam, EarlyStopping
from .tape import GradTape, Variable

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class PredictorSpec:
    """Architecture of Ψ or Φ over a fixed feature space."""

    architecture: str = "deepfm"
    mlp_widths: tuple[int, ...] = (64, 32)
    embed_dim: int = 10
    n_fields: int = 1
    n_features: int = 1

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture '{self.architecture}'")
        if self.architecture == "deepfm" and not self.mlp_widths:
            raise ConfigError("deepfm needs at least one MLP width")

    @classmethod
    def for_space(
        cls, architecture: str, space: FeatureSpace, embed_dim: int = 10,
        mlp_widths: Sequence[int] = (64, 32),
    ) -> PredictorSpec:
        return cls(
            architecture=architecture,
            mlp_widths=tuple(mlp_widths) if architecture == "deepfm" else (),
            embed_dim=embed_dim,
            n_fields=space.n_fields,
            n_features=space.total_features,
        )

    @property
    def encoder_dim(self) -> int:
        """Width K of the encoder output."""
        return ARCHITECTURES[self.architecture].encoder_dim(self)

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "mlp_widths": list(self.mlp_widths),
            "embed_dim": self.embed_dim,
            "n_fields": self.n_fields,
            "n_features": self.n_features,
        }


@dataclass
class ModelState:
    """Parameters of one network plus the feature-space offsets it indexes with.

    ``role`` is ``"predictor"`` (Ψ, scalar logit) or ``"encoder"`` (Φ, K-vector).
    """

    spec: PredictorSpec
    role: str
    params: Params
    offsets: np.ndarray
    frozen: bool = False

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> ModelState:
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def freeze(self) -> ModelState:
        self.frozen = True
        return self


# --- architectures ---------------------------------------------------------


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int | None, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    shape = (fan_in,) if fan_out is None else (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class _Layers:
    """Variables of one forward pass, keyed like the parameter dict."""

    vars: dict[str, Variable] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Variable:
        return self.vars[name]


class Architecture:
    """Parameter layout and forward pass of one CTR model family."""

    name = ""

    def encoder_dim(self, spec: PredictorSpec) -> int:
        raise NotImplementedError

    def init(self, spec: PredictorSpec, role: str, rng: np.random.Generator, dtype) -> Params:
        d = spec.embed_dim
        bound = 1.0 / np.sqrt(d)
        params = {
            "emb": rng.uniform(-bound, bound, size=(spec.n_features, d)).astype(dtype)
        }
        if role == "predictor":
            params["lin"] = np.zeros(spec.n_features, dtype=dtype)
            params["bias"] = np.zeros((), dtype=dtype)
        return params

    def logit(self, tape: GradTape, p: _Layers, emb: Variable, index: np.ndarray) -> Variable:
        linear = tape.sum(tape.gather(p["lin"], index), axis=1)
        return tape.add(linear, p["bias"])

    def encode(self, tape: GradTape, p: _Layers, emb: Variable) -> Variable:
        raise NotImplementedError


class LogisticRegression(Architecture):
    """Bias plus one weight per feature; encodes as the concatenated embeddings."""

    name = "lr"

    def encoder_dim(self, spec: PredictorSpec) -> int:
        return spec.n_fields * spec.embed_dim

    def init(self, spec: PredictorSpec, role: str, rng: np.random.Generator, dtype) -> Params:
        params = super().init(spec, role, rng, dtype)
        if role == "predictor":
            del params["emb"]
        return params

    def encode(self, tape: GradTape, p: _Layers, emb: Variable) -> Variable:
        n, fields, d = emb.shape
        return tape.reshape(emb, (n, fields * d))


class FactorizationMachine(Architecture):
    name = "fm"

    def encoder_dim(self, spec: PredictorSpec) -> int:
        return spec.embed_dim

    def logit(self, tape: GradTape, p: _Layers, emb: Variable, index: np.ndarray) -> Variable:
        pairwise = tape.sum(tape.fm_pool(emb), axis=1)
        return tape.add(super().logit(tape, p, emb, index), pairwise)

    def encode(self, tape: GradTape, p: _Layers, emb: Variable) -> Variable:
        return tape.fm_pool(emb)


class DeepFM(FactorizationMachine):
    """FM plus an MLP over the concatenated embeddings."""

    name = "deepfm"

    def encoder_dim(self, spec: PredictorSpec) -> int:
        return spec.embed_dim + spec.mlp_widths[-1]

    def init(self, spec: PredictorSpec, role: str, rng: np.random.Generator, dtype) -> Params:
        params = super().init(spec, role, rng, dtype)
        fan_in = spec.n_fields * spec.embed_dim
        for i, width in enumerate(spec.mlp_widths):
            params[f"mlp.{i}.w"] = _dense(rng, fan_in, width, dtype)
            params[f"mlp.{i}.b"] = np.zeros(width, dtype=dtype)
            fan_in = width
        if role == "predictor":
            params["head.w"] = _dense(rng, fan_in, None, dtype)
            params["head.b"] = np.zeros((), dtype=dtype)
        return params

    def _mlp(self, tape: GradTape, p: _Layers, emb: Variable) -> Variable:
        n, fields, d = emb.shape
        h = tape.reshape(emb, (n, fields * d))
        i = 0
        while f"mlp.{i}.w" in p.vars:
            h = tape.relu(tape.add(tape.matmul(h, p[f"mlp.{i}.w"]), p[f"mlp.{i}.b"]))
            i += 1
        return h

    def logit(self, tape: GradTape, p: _Layers, emb: Variable, index: np.ndarray) -> Variable:
        head = tape.add(tape.matmul(self._mlp(tape, p, emb), p["head.w"]), p["head.b"])
        return tape.add(super().logit(tape, p, emb, index), head)

    def encode(self, tape: GradTape, p: _Layers, emb: Variable) -> Variable:
        return tape.concat([tape.fm_pool(emb), self._mlp(tape, p, emb)], axis=1)


ARCHITECTURES: dict[str, Architecture] = {
    arch.name: arch for arch in (LogisticRegression(), FactorizationMachine(), DeepFM())
}


def init_state(
    spec: PredictorSpec,
    role: str,
    space: FeatureSpace,
    rng: np.random.Generator,
    dtype: str | np.dtype = "float32",
) -> ModelState:
    """Fresh parameters for Ψ (``role="predictor"``) or Φ (``role="encoder"``)."""
    if role not in ("predictor", "encoder"):
        raise ValueError(f"unknown role '{role}'")
    params = ARCHITECTURES[spec.architecture].init(spec, role, rng, np.dtype(dtype))
    return ModelState(spec=spec, role=role, params=params, offsets=space.offsets.copy())


# --- forward passes --------------------------------------------------------


def _as_batch(x: Instance | np.ndarray | Sequence[Instance]) -> tuple[np.ndarray, bool]:
    if isinstance(x, Instance):
        return np.asarray([x.field_indices], dtype=np.int64), True
    if isinstance(x, np.ndarray):
        if x.ndim == 1:
            return x[None, :].astype(np.int64), True
        return x.astype(np.int64, copy=False), False
    return np.asarray([i.field_indices for i in x], dtype=np.int64), False


def _flat_index(state: ModelState, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != state.spec.n_fields:
        raise EncodingError(f"expected {state.spec.n_fields} fields, got shape {x.shape}")
    sizes = np.diff(np.append(state.offsets, state.spec.n_features))
    if np.any((x < 0) | (x >= sizes)):
        raise EncodingError("feature index out of vocabulary range")
    return x + state.offsets


def bind(tape: GradTape, state: ModelState, prefix: str, trainable: bool) -> _Layers:
    """Put ``state``'s parameters on ``tape`` under ``prefix``."""
    return _Layers(tape.params(state.params, prefix=prefix, trainable=trainable))


def logit_on_tape(tape: GradTape, state: ModelState, p: _Layers, x: np.ndarray) -> Variable:
    """Ψ(x) for a batch of encoded rows; shape (n,)."""
    index = _flat_index(state, x)
    arch = ARCHITECTURES[state.spec.architecture]
    emb = tape.gather(p["emb"], index) if "emb" in p.vars else None
    return arch.logit(tape, p, emb, index)


def encode_on_tape(tape: GradTape, state: ModelState, p: _Layers, x: np.ndarray) -> Variable:
    """Φ(x) for a batch of encoded rows; shape (n, K)."""
    index = _flat_index(state, x)
    emb = tape.gather(p["emb"], index)
    return ARCHITECTURES[state.spec.architecture].encode(tape, p, emb)


def predict_logit(state: ModelState, x: Instance | np.ndarray | Sequence[Instance]) -> np.ndarray | float:
    """Pre-sigmoid output of Ψ; a float for a single instance."""
    batch, single = _as_batch(x)
    tape = GradTape()
    out = logit_on_tape(tape, state, bind(tape, state, "", trainable=False), batch).value
    return float(out[0]) if single else out


def encode(state: ModelState, x: Instance | np.ndarray | Sequence[Instance]) -> np.ndarray:
    """Encoder output Φ(x); shape (K,) for a single instance, (n, K) otherwise."""
    batch, single = _as_batch(x)
    tape = GradTape()
    out = encode_on_tape(tape, state, bind(tape, state, "", trainable=False), batch).value
    return out[0] if single else out


def batch_loss_and_grads(
    state: ModelState, x: np.ndarray, y: np.ndarray
) -> tuple[float, Params]:
    """Mean binary cross-entropy of Ψ on a batch and its parameter gradients."""
    tape = GradTape()
    p = bind(tape, state, "", trainable=True)
    probs = tape.sigmoid(logit_on_tape(tape, state, p, x))
    total = tape.bce_sum(y.astype(state.dtype), probs)
    grads = tape.backward(total, seed=1.0 / len(y))
    return float(total.value) / len(y), grads


# --- pretraining -----------------------------------------------------------


def pretrain_shared(
    state: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    validate: Callable[[ModelState], float],
    *,
    lr: float = 0.001,
    batch_size: int = 1024,
    patience: int = 2,
    max_epochs: int = 10,
    rng: np.random.Generator | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> ModelState:
    """Train Ψ on all training instances, keep the best validation epoch, freeze it.

    ``validate`` returns the validation AUC of a candidate state.
    """
    if len(y) == 0:
        raise EmptyDatasetError("no training instances to pretrain on")
    rng = rng or np.random.default_rng(0)
    optimizer = Adam(lr=lr)
    stopper = EarlyStopping(patience=patience, max_epochs=max_epochs)
    work = state.copy()
    for epoch in range(max_epochs):
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            loss, grads = batch_loss_and_grads(work, x[rows], y[rows])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"shared predictor loss became non-finite in epoch {epoch}",
                    last_good=stopper.best_state,
                )
            optimizer.step(work.params, grads)
            losses.append(loss * len(rows))
        train_loss = float(np.sum(losses)) / len(y)
        score = validate(work)
        logger.info("Pretrain epoch %d: loss %.4f, validation AUC %.4f", epoch, train_loss, score)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, score)
        if stopper.update(epoch, score, work.copy()):
            break
    best = stopper.best_state if stopper.best_state is not None else work
    logger.info("Shared predictor: best epoch %d (AUC %.4f)", stopper.best_epoch, stopper.best_score)
    return best.freeze()
