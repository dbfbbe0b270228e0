"""Two-phase training: rate-expansion warmup, then joint feature/membership
optimization of the rate-reduction objective.

Warmup maximizes the expansion rate of the feature head's output alone
(cluster head untouched); afterwards the feature head's weights are copied
into the cluster head, so latent codes start equal to features.  The joint
phase computes, per batch, Pi = project(C^T C), ascends
``rate(Z) - rate_compressed(Z, Pi)``, and routes gradients through the
Sinkhorn unroll back into the cluster head while the trunk accumulates both
paths.  Two optimizers with different weight decay own the feature path
(trunk included) and the cluster head respectively.

The rate normalization uses the current batch size as ``n``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import heads
from .ckpt import read_container, write_container
from .errors import ConfigError, NumericalError, ValidationError
from .rates import RateConfig, compressed_value_and_grads, rate, rate_grad
from .sinkhorn import SinkhornConfig, project, project_vjp
from .store import BatchSampler, sample_batch

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "ratecluster-training-state"

# fixed-sweep training memberships have exact column sums but freely drifting
# row sums; the doubly stochastic contract only binds converged projections
TRUNCATED_PI_TOL = float("inf")


@dataclass
class OptimizerSettings:
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4


@dataclass
class TrainConfig:
    d_in: int = 768
    d: int = 128
    d_hidden: int = 4096
    eps_sq: float = 0.1
    gamma: float = 0.175
    sinkhorn_iters: int = 5
    epochs_init: int = 1
    epochs_total: int = 5
    batch_size: int = 1024
    seed: int = 0
    feature_opt: OptimizerSettings = field(default_factory=OptimizerSettings)
    cluster_opt: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings(weight_decay=0.005)
    )

    def __post_init__(self):
        if isinstance(self.feature_opt, dict):
            self.feature_opt = OptimizerSettings(**self.feature_opt)
        if isinstance(self.cluster_opt, dict):
            self.cluster_opt = OptimizerSettings(**self.cluster_opt)
        if self.epochs_init < 1 or self.epochs_total < 1 or self.batch_size < 1:
            raise ConfigError("epoch and batch counts must be >= 1")
        if self.epochs_init > self.epochs_total:
            raise ConfigError(
                f"epochs_init {self.epochs_init} exceeds epochs_total {self.epochs_total}"
            )

    def rate_config(self) -> RateConfig:
        return RateConfig(eps_sq=self.eps_sq, feature_dim=self.d)

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(gamma=self.gamma, iters=self.sinkhorn_iters)


@dataclass
class TrainState:
    params: heads.HeadParams
    opt_feature: heads.OptimizerState
    opt_cluster: heads.OptimizerState
    epoch: int = 0  # epochs fully completed
    log_rows: list[dict] = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    params = heads.init_params(cfg.d_in, cfg.d_hidden, cfg.d, cfg.seed)
    fo, co = cfg.feature_opt, cfg.cluster_opt
    return TrainState(
        params=params,
        opt_feature=heads.OptimizerState(fo.lr, fo.momentum, fo.weight_decay),
        opt_cluster=heads.OptimizerState(co.lr, co.momentum, co.weight_decay),
    )


def _batches(cfg: TrainConfig, epoch: int, n: int):
    sampler = BatchSampler(batch_size=cfg.batch_size, seed=cfg.seed, drop_last=False)
    for step in range(sampler.num_batches(n)):
        idx = sample_batch(sampler, epoch, step, n)
        if len(idx) >= 2:
            yield step, idx
        else:
            # batch norm cannot standardize a single sample
            log.debug("skipping singleton batch at epoch %d step %d", epoch, step)


def _grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def warmup(state: TrainState, X: np.ndarray, cfg: TrainConfig, callback=None) -> TrainState:
    """Diversification phase: ascend rate(Z) alone for ``epochs_init`` epochs.

    ``X`` holds column-vector inputs (d_in x n).  Ends by copying the feature
    head into the cluster head.
    """
    if state.epoch >= cfg.epochs_init:
        return state  # warmup already complete; the head copy already happened
    rc = cfg.rate_config()
    n = X.shape[1]
    for epoch in range(state.epoch, cfg.epochs_init):
        for step, idx in _batches(cfg, epoch, n):
            Z, _, tape = heads.forward(state.params, X[:, idx], training=True)
            r = rate(Z, rc)
            gZ = rate_grad(Z, rc)
            grads = heads.backward(state.params, tape, gZ, np.zeros_like(gZ))
            if not np.isfinite(r):
                raise NumericalError(
                    "non-finite warmup objective", epoch=epoch, step=step, rate=r
                )
            # ascent via negated gradients; cluster head stays untouched
            neg = {k: -g for k, g in grads.items() if k in heads.FEATURE_GROUP}
            heads.sgd_step(state.params, neg, state.opt_feature)
            row = {
                "phase": "warmup",
                "epoch": epoch,
                "step": step,
                "R": r,
                "Rc": 0.0,
                "dR": r,
                "grad_norm_feature": _grad_norm(neg),
                "grad_norm_cluster": 0.0,
            }
            state.log_rows.append(row)
            if callback:
                callback(row)
        state.epoch = epoch + 1
    heads.copy_feature_head_to_cluster_head(state.params)
    return state


def train(state: TrainState, X: np.ndarray, cfg: TrainConfig, callback=None) -> TrainState:
    """Joint phase over epochs [epochs_init, epochs_total)."""
    if state.epoch < cfg.epochs_init:
        raise ConfigError("warmup has not completed; run warmup first")
    rc = cfg.rate_config()
    sc = cfg.sinkhorn_config()
    n = X.shape[1]
    for epoch in range(state.epoch, cfg.epochs_total):
        for step, idx in _batches(cfg, epoch, n):
            Z, C, tape = heads.forward(state.params, X[:, idx], training=True)
            A = C.T @ C
            Pi, sink_tape = project(A, sc, want_tape=True)
            r = rate(Z, rc)
            # the fixed-sweep projection is truncated on purpose; its sums
            # sit within a few 1e-3 of one, not the converged 1e-5
            rcomp, gZ_comp, gPi = compressed_value_and_grads(
                Z, Pi, rc, sum_tol=TRUNCATED_PI_TOL
            )
            obj = r - rcomp
            if not np.isfinite(obj):
                raise NumericalError(
                    "non-finite objective",
                    gamma=cfg.gamma,
                    epoch=epoch,
                    step=step,
                    R=r,
                    Rc=rcomp,
                )
            dZ = rate_grad(Z, rc) - gZ_comp
            dA = project_vjp(sink_tape, sc, -gPi)
            dC = C @ (dA + dA.T)
            grads = heads.backward(state.params, tape, dZ, dC)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericalError(
                    "non-finite parameter gradients",
                    gamma=cfg.gamma,
                    epoch=epoch,
                    step=step,
                    grad_norm=_grad_norm(grads),
                )
            neg_feature = {k: -grads[k] for k in heads.FEATURE_GROUP}
            neg_cluster = {k: -grads[k] for k in heads.CLUSTER_GROUP}
            heads.sgd_step(state.params, neg_feature, state.opt_feature)
            heads.sgd_step(state.params, neg_cluster, state.opt_cluster)
            row = {
                "phase": "train",
                "epoch": epoch,
                "step": step,
                "R": r,
                "Rc": rcomp,
                "dR": obj,
                "grad_norm_feature": _grad_norm(neg_feature),
                "grad_norm_cluster": _grad_norm(neg_cluster),
            }
            state.log_rows.append(row)
            if callback:
                callback(row)
        state.epoch = epoch + 1
    return state


def run_training(X: np.ndarray, cfg: TrainConfig, callback=None, state: TrainState | None = None) -> TrainState:
    """Warmup + joint training on column-vector inputs.

    Pass a loaded checkpoint ``state`` to resume; the epoch permutations are
    pure functions of (seed, epoch), so a resumed run retraces the
    uninterrupted one exactly.
    """
    if state is None:
        state = init_state(cfg)
    warmup(state, X, cfg, callback)
    return train(state, X, cfg, callback)


LOG_FIELDS = [
    "phase",
    "epoch",
    "step",
    "R",
    "Rc",
    "dR",
    "grad_norm_feature",
    "grad_norm_cluster",
]


def write_log_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in LOG_FIELDS})
    tmp.replace(path)


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else v


def save_checkpoint(state: TrainState, cfg: TrainConfig, path: str | Path) -> None:
    """Lossless dump of parameters, optimizer buffers, and progress."""
    tensors = dict(state.params.tensors)
    for prefix, opt in (("opt.feature", state.opt_feature), ("opt.cluster", state.opt_cluster)):
        for name, buf in opt.buffers.items():
            tensors[f"{prefix}.{name}"] = buf
    meta = {
        "kind": CHECKPOINT_KIND,
        "config": asdict(cfg),
        "epoch": state.epoch,
        "dims": {"d_in": state.params.d_in, "d_hidden": state.params.d_hidden, "d": state.params.d},
    }
    write_container(path, tensors, meta)


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    tensors, meta = read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValidationError(f"{path}: not a training checkpoint")
    cfg = TrainConfig(**meta["config"])
    dims = meta["dims"]
    param_tensors = {}
    buffers = {"opt.feature": {}, "opt.cluster": {}}
    for name, arr in tensors.items():
        if name.startswith("opt.feature."):
            buffers["opt.feature"][name[len("opt.feature.") :]] = arr
        elif name.startswith("opt.cluster."):
            buffers["opt.cluster"][name[len("opt.cluster.") :]] = arr
        else:
            param_tensors[name] = arr
    params = heads.HeadParams(
        tensors=param_tensors, d_in=dims["d_in"], d_hidden=dims["d_hidden"], d=dims["d"]
    )
    params.validate()
    fo, co = cfg.feature_opt, cfg.cluster_opt
    state = TrainState(
        params=params,
        opt_feature=heads.OptimizerState(
            fo.lr, fo.momentum, fo.weight_decay, buffers["opt.feature"]
        ),
        opt_cluster=heads.OptimizerState(
            co.lr, co.momentum, co.weight_decay, buffers["opt.cluster"]
        ),
        epoch=meta["epoch"],
    )
    return state, cfg
