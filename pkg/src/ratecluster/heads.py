"""Trainable layers after the frozen backbone, with hand-written backward.

The trunk is Linear -> BatchNorm -> ReLU -> Linear -> ReLU on column-vector
inputs; two linear heads map the trunk output to unit-normalized features Z
(feature head) and latent codes C (cluster head).  Three logdet terms and a
five-layer trunk do not justify an autodiff dependency, so the backward pass
is derived by hand and checked against finite differences in the tests.

Parameters are float64 throughout.  Weight matrices are stored as
(fan_in, fan_out); a layer computes ``W.T @ x + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rng import bulk_uniform, derive_key

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# tensors owned by the feature-path optimizer (trunk included) vs cluster path
FEATURE_GROUP = ("W1", "b1", "bn_scale", "bn_shift", "W2", "b2", "feature_W", "feature_b")
CLUSTER_GROUP = ("cluster_W", "cluster_b")
PARAM_NAMES = FEATURE_GROUP + CLUSTER_GROUP
STATE_NAMES = ("bn_running_mean", "bn_running_var")


@dataclass
class HeadParams:
    """All trainable tensors plus batch-norm running state."""

    tensors: dict[str, np.ndarray]
    d_in: int
    d_hidden: int
    d: int

    def copy(self) -> "HeadParams":
        return HeadParams(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            d_in=self.d_in,
            d_hidden=self.d_hidden,
            d=self.d,
        )

    def validate(self) -> None:
        for name in PARAM_NAMES + STATE_NAMES:
            if name not in self.tensors:
                raise ValidationError(f"missing parameter tensor {name}")
            if not np.isfinite(self.tensors[name]).all():
                raise ValidationError(f"parameter tensor {name} has non-finite entries")
        if (self.tensors["bn_running_var"] <= 0).any():
            raise ValidationError("batch-norm running variance must stay positive")


def init_params(d_in: int, d_hidden: int, d: int, seed: int) -> HeadParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, identity batch norm.

    Weight tensor i draws from the counter-based splitmix64 stream keyed by
    ``derive_key(seed, i)`` in row-major order, so initialization is
    reproducible independent of platform.
    """
    if min(d_in, d_hidden, d) < 1:
        raise ValidationError("all dimensions must be >= 1")

    def uniform_weights(key_index, fan_in, fan_out):
        u = bulk_uniform(derive_key(seed, key_index), fan_in * fan_out)
        return ((2.0 * u - 1.0) / np.sqrt(fan_in)).reshape(fan_in, fan_out)

    tensors = {
        "W1": uniform_weights(0, d_in, d_hidden),
        "b1": np.zeros(d_hidden),
        "bn_scale": np.ones(d_hidden),
        "bn_shift": np.zeros(d_hidden),
        "bn_running_mean": np.zeros(d_hidden),
        "bn_running_var": np.ones(d_hidden),
        "W2": uniform_weights(1, d_hidden, d_hidden),
        "b2": np.zeros(d_hidden),
        "feature_W": uniform_weights(2, d_hidden, d),
        "feature_b": np.zeros(d),
        "cluster_W": uniform_weights(3, d_hidden, d),
        "cluster_b": np.zeros(d),
    }
    return HeadParams(tensors=tensors, d_in=d_in, d_hidden=d_hidden, d=d)


def copy_feature_head_to_cluster_head(params: HeadParams) -> None:
    """Overwrite cluster-head weights with the feature head's (warm start)."""
    params.tensors["cluster_W"] = params.tensors["feature_W"].copy()
    params.tensors["cluster_b"] = params.tensors["feature_b"].copy()


def _normalize_columns(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(raw, axis=0)
    if (norms < 1e-12).any():
        raise ValidationError("head produced a zero column; cannot normalize")
    return raw / norms[None, :], norms


def forward(params: HeadParams, X: np.ndarray, training: bool):
    """Run the trunk and both heads on column-vector inputs.

    Returns (Z, C, tape); the tape is None in inference mode.  Training mode
    normalizes with batch statistics and updates the running estimates in
    ``params`` (unbiased variance, momentum 0.1).
    """
    t = params.tensors
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != params.d_in:
        raise ValidationError(f"input must be {params.d_in} x B, got {X.shape}")
    B = X.shape[1]
    if training and B < 2:
        raise ValidationError("training-mode forward needs batch size >= 2 for batch norm")

    a1 = t["W1"].T @ X + t["b1"][:, None]
    if training:
        mu = a1.mean(axis=1)
        var = a1.var(axis=1)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (a1 - mu[:, None]) * inv_std[:, None]
        t["bn_running_mean"] = (1 - BN_MOMENTUM) * t["bn_running_mean"] + BN_MOMENTUM * mu
        t["bn_running_var"] = (1 - BN_MOMENTUM) * t["bn_running_var"] + BN_MOMENTUM * (
            var * B / (B - 1)
        )
    else:
        inv_std = 1.0 / np.sqrt(t["bn_running_var"] + BN_EPS)
        xhat = (a1 - t["bn_running_mean"][:, None]) * inv_std[:, None]
    y1 = t["bn_scale"][:, None] * xhat + t["bn_shift"][:, None]
    h1 = np.maximum(y1, 0.0)
    a2 = t["W2"].T @ h1 + t["b2"][:, None]
    h2 = np.maximum(a2, 0.0)

    zf_raw = t["feature_W"].T @ h2 + t["feature_b"][:, None]
    zc_raw = t["cluster_W"].T @ h2 + t["cluster_b"][:, None]
    Z, zf_norms = _normalize_columns(zf_raw)
    C, zc_norms = _normalize_columns(zc_raw)

    tape = None
    if training:
        tape = {
            "X": X,
            "inv_std": inv_std,
            "xhat": xhat,
            "y1": y1,
            "h1": h1,
            "a2": a2,
            "h2": h2,
            "Z": Z,
            "zf_norms": zf_norms,
            "C": C,
            "zc_norms": zc_norms,
            "B": B,
        }
    return Z, C, tape


def _normalize_backward(G: np.ndarray, Y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/du (u/||u||) applied to G, with Y = u/||u||
    return (G - Y * (Y * G).sum(axis=0, keepdims=True)) / norms[None, :]


def backward(params: HeadParams, tape: dict, gradZ: np.ndarray, gradC: np.ndarray):
    """Exact parameter gradients for a training-mode forward."""
    if tape is None:
        raise ValidationError("backward needs the tape from a training-mode forward")
    t = params.tensors
    Z, C = tape["Z"], tape["C"]
    if gradZ.shape != Z.shape or gradC.shape != C.shape:
        raise ValidationError("upstream gradient shapes do not match head outputs")
    B = tape["B"]

    dzf = _normalize_backward(np.asarray(gradZ, dtype=np.float64), Z, tape["zf_norms"])
    dzc = _normalize_backward(np.asarray(gradC, dtype=np.float64), C, tape["zc_norms"])

    grads = {}
    grads["feature_W"] = tape["h2"] @ dzf.T
    grads["feature_b"] = dzf.sum(axis=1)
    grads["cluster_W"] = tape["h2"] @ dzc.T
    grads["cluster_b"] = dzc.sum(axis=1)
    dh2 = t["feature_W"] @ dzf + t["cluster_W"] @ dzc

    da2 = dh2 * (tape["a2"] > 0)
    grads["W2"] = tape["h1"] @ da2.T
    grads["b2"] = da2.sum(axis=1)
    dh1 = t["W2"] @ da2

    dy1 = dh1 * (tape["y1"] > 0)
    xhat = tape["xhat"]
    grads["bn_scale"] = (dy1 * xhat).sum(axis=1)
    grads["bn_shift"] = dy1.sum(axis=1)
    dxhat = dy1 * t["bn_scale"][:, None]
    # backward through batch statistics
    da1 = (
        tape["inv_std"][:, None]
        / B
        * (
            B * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
    )
    grads["W1"] = tape["X"] @ da1.T
    grads["b1"] = da1.sum(axis=1)
    return grads


@dataclass
class OptimizerState:
    """SGD with momentum; weight decay is classic L2, added into the gradient."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: HeadParams, grads: dict, state: OptimizerState, names=None) -> None:
    """In-place SGD update over ``names`` (defaults to every gradient key).

    g <- grad + wd * p;  buf <- momentum * buf + g;  p <- p - lr * buf
    """
    for name in names if names is not None else sorted(grads):
        p = params.tensors[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        buf = state.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p)
        buf = state.momentum * buf + g
        state.buffers[name] = buf
        params.tensors[name] = p - state.lr * buf
