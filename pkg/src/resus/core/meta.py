"""Residual meta-learners: NN and RR base learners, fusion, the MUS baseline,
and the episodic meta-training loop.

A model predicts a query's click probability as ``σ(Ψ(x) + β·Δŷ)``, where Ψ
is the frozen shared predictor and Δŷ is a residual estimated from the
user's support set. The residual learner works on encoder outputs Φ(x):

* ``nn``: softmax-weighted average of support residuals, weights from the
  learned similarity ``wᵀ|Φ(q) − Φ(s)| + b``;
* ``rr``: closed-form ridge regression on the support encodings, solved in
  the |S|×|S| (Woodbury) form;
* ``mus``: the same weighting as ``nn`` applied to raw support labels,
  with no shared predictor at all;
* ``shared``: Ψ alone.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels
from .episodes import SupportSizeDist, iter_epoch
from .errors import (
    ConfigError,
    InsufficientHistoryError,
    ShapeError,
    SingularSystemError,
    TrainingDivergedError,
)
from .models import FeatureSpace, Task, UserLog
from .networks import (
    ModelState,
    Params,
    PredictorSpec,
    bind,
    encode,
    encode_on_tape,
    init_state,
    logit_on_tape,
    predict_logit,
)
from .optim import Adam, EarlyStopping
from .tape import GradTape, Variable

logger = logging.getLogger(__name__)

MODES = ("nn", "rr", "mus", "shared")


# --- closed-form pieces ----------------------------------------------------


def residual_targets(psi: ModelState, support_x: np.ndarray, support_y: np.ndarray) -> np.ndarray:
    """Support labels minus the shared predictor's probabilities."""
    return support_y - kernels.sigmoid(predict_logit(psi, support_x))


def nn_similarity(w: np.ndarray, b: float, v1: np.ndarray, v2: np.ndarray) -> float:
    """``wᵀ|v1 − v2| + b``."""
    if v1.shape != v2.shape or v1.shape != w.shape:
        raise ShapeError(f"nn_similarity: v1{v1.shape}, v2{v2.shape}, w{w.shape}")
    return float(w @ np.abs(v1 - v2) + b)


def nn_predict(
    w: np.ndarray,
    b: float,
    support_enc: np.ndarray,
    support_targets: np.ndarray,
    query_enc: np.ndarray,
) -> np.ndarray:
    """Softmax-weighted average of support targets for every query row."""
    alpha = kernels.softmax_weights(
        kernels.abs_similarity(query_enc, support_enc, w, b), axis=1
    )
    return alpha @ support_targets


def rr_fit(lam: float, support_enc: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Ridge weights ``Eᵀ(EEᵀ + λI)⁻¹Δy`` via an |S|×|S| SPD solve."""
    enc = np.asarray(support_enc, dtype=np.float64)
    gram = enc @ enc.T + lam * np.eye(enc.shape[0])
    return enc.T @ kernels.solve_spd(gram, residuals)


def rr_fit_direct(lam: float, support_enc: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Same weights from the K×K normal equations ``(EᵀE + λI)⁻¹EᵀΔy``."""
    enc = np.asarray(support_enc, dtype=np.float64)
    normal = enc.T @ enc + lam * np.eye(enc.shape[1])
    return kernels.solve_spd(normal, enc.T @ np.asarray(residuals, dtype=np.float64))


def rr_predict(w_star: np.ndarray, query_enc: np.ndarray) -> np.ndarray:
    return query_enc @ w_star


def fuse(logit: np.ndarray | float, beta: float, residual: np.ndarray | float) -> np.ndarray:
    """``σ(logit + β·Δŷ)``."""
    return kernels.sigmoid(np.asarray(logit) + beta * np.asarray(residual))


def mus_predict(
    w: np.ndarray,
    b: float,
    support_enc: np.ndarray,
    support_y: np.ndarray,
    query_enc: np.ndarray,
) -> np.ndarray:
    """Similarity-weighted average of the raw support labels."""
    return nn_predict(w, b, support_enc, support_y.astype(np.float64), query_enc)


def softplus_inverse(value: float) -> float:
    return float(np.log(np.expm1(value)))


@dataclass(frozen=True, eq=False)
class ResidualTask:
    """Encoded support with residual targets, plus encoded queries."""

    support_enc: np.ndarray
    residuals: np.ndarray
    query_enc: np.ndarray
    query_y: np.ndarray

    def __post_init__(self) -> None:
        if self.support_enc.shape[0] != self.residuals.shape[0]:
            raise ShapeError("one residual per support row is required")

    @classmethod
    def from_task(cls, psi: ModelState, phi: ModelState, task: Task) -> ResidualTask:
        return cls(
            support_enc=encode(phi, task.support_x),
            residuals=residual_targets(psi, task.support_x, task.support_y),
            query_enc=encode(phi, task.query_x),
            query_y=task.query_y,
        )


# --- model -----------------------------------------------------------------


@dataclass(frozen=True)
class MetaSettings:
    """Mode and shape of the meta parameters."""

    mode: str = "rr"
    tau: int = 30
    beta_per_size: bool = False
    joint_shared: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown meta mode '{self.mode}'")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "tau": self.tau,
            "beta_per_size": self.beta_per_size,
            "joint_shared": self.joint_shared,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MetaSettings:
        return cls(**data)


@dataclass(frozen=True)
class _Bound:
    psi: Any
    phi: Any
    meta: dict[str, Variable]


@dataclass(eq=False)
class ResusModel:
    """Shared predictor, encoder and meta parameters for one mode.

    ``support_encodings`` counts encoder passes over a support set, the
    quantity user-based batching keeps at one per user.
    """

    settings: MetaSettings
    psi: ModelState | None
    phi: ModelState | None
    meta_params: Params
    support_encodings: int = field(default=0, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def create(
        cls,
        settings: MetaSettings,
        psi: ModelState | None,
        encoder_spec: PredictorSpec | None,
        space: FeatureSpace,
        rng: np.random.Generator,
        *,
        dtype: str = "float32",
        lambda_init: float = 1.0,
        beta_init: float = 1.0,
    ) -> ResusModel:
        """Fresh encoder and meta parameters around an (optional) shared predictor."""
        mode = settings.mode
        if mode != "mus" and psi is None:
            raise ConfigError(f"mode '{mode}' needs a shared predictor")
        if mode == "shared":
            return cls.shared_only(psi)
        if encoder_spec is None:
            raise ConfigError(f"mode '{mode}' needs an encoder spec")
        phi = init_state(encoder_spec, "encoder", space, rng, dtype)
        k = encoder_spec.encoder_dim
        params: Params = {}
        if mode in ("nn", "mus"):
            params["theta.w"] = np.full(k, -1.0 / k, dtype=dtype)
            params["theta.b"] = np.zeros((), dtype=dtype)
        if mode == "rr":
            params["lambda_raw"] = np.asarray(softplus_inverse(lambda_init), dtype=dtype)
        if mode != "mus":
            n_beta = settings.tau if settings.beta_per_size else 1
            params["beta"] = np.full(n_beta, beta_init, dtype=dtype)
        if psi is not None:
            psi.frozen = not settings.joint_shared
        return cls(settings=settings, psi=psi, phi=phi, meta_params=params)

    @classmethod
    def shared_only(cls, psi: ModelState | None) -> ResusModel:
        if psi is None:
            raise ConfigError("shared-only model needs a shared predictor")
        return cls(settings=MetaSettings(mode="shared"), psi=psi, phi=None, meta_params={})

    @property
    def mode(self) -> str:
        return self.settings.mode

    @property
    def lam(self) -> float:
        return float(kernels.softplus(self.meta_params["lambda_raw"]))

    def beta_index(self, support_size: int) -> int:
        if not self.settings.beta_per_size:
            return 0
        return min(support_size, self.settings.tau) - 1

    def beta_for(self, support_size: int) -> float:
        return float(self.meta_params["beta"][self.beta_index(support_size)])

    def copy(self) -> ResusModel:
        return ResusModel(
            settings=self.settings,
            psi=self.psi.copy() if self.psi is not None else None,
            phi=self.phi.copy() if self.phi is not None else None,
            meta_params={k: v.copy() for k, v in self.meta_params.items()},
        )

    # --- parameter views ---------------------------------------------------

    def trainable(self) -> Params:
        """Flat ``prefix.name`` view of every parameter the meta optimizer updates."""
        flat = {f"meta.{k}": v for k, v in self.meta_params.items()}
        if self.phi is not None:
            flat.update({f"phi.{k}": v for k, v in self.phi.params.items()})
        if self.psi is not None and self.settings.joint_shared:
            flat.update({f"psi.{k}": v for k, v in self.psi.params.items()})
        return flat

    def assign(self, flat: Params) -> None:
        for name, value in flat.items():
            part, _, key = name.partition(".")
            if part == "meta":
                self.meta_params[key] = value
            elif part == "phi" and self.phi is not None:
                self.phi.params[key] = value
            elif part == "psi" and self.psi is not None:
                self.psi.params[key] = value

    def _bind(self, tape: GradTape, trainable: bool) -> _Bound:
        psi = phi = None
        if self.psi is not None:
            psi = bind(tape, self.psi, "psi.", trainable and self.settings.joint_shared)
        if self.phi is not None:
            phi = bind(tape, self.phi, "phi.", trainable)
        meta = tape.params(self.meta_params, prefix="meta.", trainable=trainable)
        return _Bound(psi=psi, phi=phi, meta=meta)

    # --- forward -----------------------------------------------------------

    def _residual(
        self,
        tape: GradTape,
        bound: _Bound,
        support_x: np.ndarray,
        support_y: np.ndarray,
        query_x: np.ndarray,
    ) -> Variable:
        """Residual estimate for every query row (MUS: the label estimate)."""
        support_enc = encode_on_tape(tape, self.phi, bound.phi, support_x)
        with self._lock:
            self.support_encodings += 1
        query_enc = encode_on_tape(tape, self.phi, bound.phi, query_x)
        labels = tape.constant(support_y.astype(self.phi.dtype))
        if self.mode == "mus":
            targets = labels
        else:
            basis = tape.sigmoid(logit_on_tape(tape, self.psi, bound.psi, support_x))
            targets = tape.sub(labels, basis)

        if self.mode == "rr":
            # Gram, solve and w* all in float64 whatever the encoder precision.
            support_enc = tape.cast(support_enc, np.float64)
            query_enc = tape.cast(query_enc, np.float64)
            targets = tape.cast(targets, np.float64)
            gram = tape.matmul(support_enc, tape.transpose(support_enc))
            system = tape.add_diag(gram, tape.softplus(bound.meta["lambda_raw"]))
            coef = tape.solve_spd(system, targets)
            w_star = tape.matmul(tape.transpose(support_enc), coef)
            return tape.matmul(query_enc, w_star)

        scores = tape.abs_similarity(
            query_enc, support_enc, bound.meta["theta.w"], bound.meta["theta.b"]
        )
        return tape.matmul(tape.softmax(scores, axis=1), targets)

    def _forward(
        self,
        tape: GradTape,
        bound: _Bound,
        support_x: np.ndarray,
        support_y: np.ndarray,
        query_x: np.ndarray,
    ) -> Variable:
        """Query probabilities for one user, recorded on ``tape``."""
        mode = self.mode
        if mode == "mus":
            return self._residual(tape, bound, support_x, support_y, query_x)
        query_logit = logit_on_tape(tape, self.psi, bound.psi, query_x)
        if mode == "shared":
            return tape.sigmoid(query_logit)

        residual = self._residual(tape, bound, support_x, support_y, query_x)
        residual = tape.cast(residual, query_logit.value.dtype)
        beta = tape.take(bound.meta["beta"], self.beta_index(len(support_y)))
        beta = tape.cast(beta, query_logit.value.dtype)
        return tape.sigmoid(tape.add(query_logit, tape.mul(beta, residual)))

    def infer_residuals(
        self, support_x: np.ndarray, support_y: np.ndarray, query_x: np.ndarray
    ) -> np.ndarray:
        """Residual estimates for a user's queries, before rescaling and fusion."""
        if self.mode not in ("nn", "rr"):
            raise ConfigError(f"mode '{self.mode}' has no residual learner")
        if len(support_y) == 0:
            raise InsufficientHistoryError("inference needs a non-empty support set")
        tape = GradTape()
        bound = self._bind(tape, trainable=False)
        return self._residual(tape, bound, support_x, support_y, query_x).value

    def predict_shared(self, query_x: np.ndarray) -> np.ndarray:
        """σ(Ψ(x)) for every query row."""
        return kernels.sigmoid(predict_logit(self.psi, query_x))

    def infer_user(
        self,
        support_x: np.ndarray,
        support_y: np.ndarray,
        query_x: np.ndarray,
        batched: bool = True,
    ) -> np.ndarray:
        """Click probabilities for a user's queries given their support set.

        The batched path encodes and fits the support once for all queries;
        ``batched=False`` repeats that work for every query row.
        """
        if len(support_y) == 0 and self.mode != "shared":
            raise InsufficientHistoryError("inference needs a non-empty support set")
        tape = GradTape()
        bound = self._bind(tape, trainable=False)
        try:
            if batched:
                return self._forward(tape, bound, support_x, support_y, query_x).value
            return np.concatenate(
                [
                    self._forward(tape, bound, support_x, support_y, query_x[k : k + 1]).value
                    for k in range(len(query_x))
                ]
            )
        except SingularSystemError as e:
            logger.warning("Residual fit failed (%s); using the shared predictor", e)
            return self.predict_shared(query_x)

    def predict_task(self, task: Task, batched: bool = True) -> np.ndarray:
        return self.infer_user(task.support_x, task.support_y, task.query_x, batched=batched)

    # --- training ----------------------------------------------------------

    def task_gradients(self, task: Task) -> tuple[float, Params, int]:
        """Summed query cross-entropy of one task and its gradients.

        Returns ``(loss_sum, grads, n_queries)``; the per-task loss is
        ``loss_sum / n_queries``.
        """
        tape = GradTape()
        bound = self._bind(tape, trainable=True)
        probs = self._forward(tape, bound, task.support_x, task.support_y, task.query_x)
        loss = tape.bce_sum(task.query_y.astype(probs.value.dtype), probs)
        grads = tape.backward(loss)
        return float(loss.value), grads, task.query_size

    def batch_loss_and_grads(
        self, tasks: Sequence[Task], pool: ThreadPoolExecutor | None = None
    ) -> tuple[float, Params, int] | None:
        """Query-weighted mean loss over ``tasks`` and its gradients.

        Tasks whose ridge system cannot be factorized are skipped. Returns
        None when every task was skipped.
        """

        def run(task: Task) -> tuple[float, Params, int] | None:
            try:
                return self.task_gradients(task)
            except SingularSystemError as e:
                logger.warning("Skipping task of user %s: %s", task.user_id, e)
                return None

        results = list(pool.map(run, tasks)) if pool is not None else [run(t) for t in tasks]
        done = [r for r in results if r is not None]
        if not done:
            return None
        n_queries = sum(r[2] for r in done)
        total = sum(r[0] for r in done)
        grads = {name: sum(r[1][name] for r in done) / n_queries for name in done[0][1]}
        return total / n_queries, grads, n_queries


def meta_train(
    model: ResusModel,
    train_logs: Sequence[UserLog],
    dist: SupportSizeDist,
    validate: Callable[[ResusModel], float],
    *,
    lr: float = 0.001,
    batch_tasks: int = 32,
    patience: int = 2,
    max_epochs: int = 10,
    rng: np.random.Generator | None = None,
    threads: int = 1,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> ResusModel:
    """Episodic training of the encoder and meta parameters.

    Each epoch resamples a support/query split for every training user and
    walks them in batches of ``batch_tasks``. Returns the best validation
    epoch's model.
    """
    if model.mode == "shared":
        raise ConfigError("the shared-only mode has no meta parameters to train")
    rng = rng or np.random.default_rng(0)
    optimizer = Adam(lr=lr)
    stopper = EarlyStopping(patience=patience, max_epochs=max_epochs)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(max_epochs):
            weighted, seen = 0.0, 0
            for batch in iter_epoch(train_logs, dist, batch_tasks, rng, epoch):
                result = model.batch_loss_and_grads(batch.tasks, pool)
                if result is None:
                    logger.warning("Epoch %d batch %d: every task skipped", epoch, batch.batch_index)
                    continue
                loss, grads, n_queries = result
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"meta loss became non-finite in epoch {epoch}",
                        last_good=stopper.best_state,
                    )
                flat = model.trainable()
                optimizer.step(flat, grads)
                model.assign(flat)
                weighted += loss * n_queries
                seen += n_queries
            train_loss = weighted / max(seen, 1)
            score = validate(model)
            logger.info(
                "Meta epoch %d (%s): loss %.4f, validation AUC %.4f",
                epoch, model.mode, train_loss, score,
            )
            if on_epoch is not None:
                on_epoch(epoch, train_loss, score)
            if stopper.update(epoch, score, model.copy()):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    best = stopper.best_state if stopper.best_state is not None else model
    logger.info("Meta model: best epoch %d (AUC %.4f)", stopper.best_epoch, stopper.best_score)
    return best
