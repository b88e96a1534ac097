"""Region attention, MC-dropout ensembles, and dual-criterion pseudo-label filtering.

The attention net reweights the backbone feature map toward informative
spatial locations; the uncertainty side runs repeated stochastic forward
passes and accepts a pseudo-label only when the mean prediction is confident
AND the ensemble is stable (low covariance trace).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigError, DataError, Tensor


def attention_mid_channels(embed_dim: int) -> int:
    """Width of the hidden attention layer: C/4, floored at 8."""
    return max(embed_dim // 4, 8)


@dataclass
class AttentionParams:
    conv1_w: Tensor  # 1x1, C -> C_mid
    conv1_b: Tensor
    conv3_w: Tensor  # 3x3, C_mid -> 1
    conv3_b: Tensor

    def named(self, prefix: str = "att"):
        for name in ("conv1_w", "conv1_b", "conv3_w", "conv3_b"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class HeadParams:
    w: Tensor  # C -> K
    b: Tensor

    def named(self, prefix: str = "head"):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def init_attention(embed_dim: int, rng: np.random.Generator,
                   mid_channels: int | None = None) -> AttentionParams:
    mid = attention_mid_channels(embed_dim) if mid_channels is None else mid_channels
    return AttentionParams(
        conv1_w=Tensor(rng.normal(0.0, 0.02, size=(1, 1, embed_dim, mid)), requires_grad=True),
        conv1_b=Tensor(np.zeros(mid), requires_grad=True),
        conv3_w=Tensor(rng.normal(0.0, 0.02, size=(3, 3, mid, 1)), requires_grad=True),
        conv3_b=Tensor(np.zeros(1), requires_grad=True),
    )


def init_head(embed_dim: int, num_classes: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        w=Tensor(rng.normal(0.0, 0.02, size=(embed_dim, num_classes)), requires_grad=True),
        b=Tensor(np.zeros(num_classes), requires_grad=True),
    )


def region_attention(feat: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Spatial gate in [0,1] and the reweighted feature map.

    feat is (H', W', C) or (B, H', W', C). Returns (A, F_att) where A has the
    spatial shape without the channel axis and F_att = feat * A broadcast over
    channels.
    """
    if feat.shape[-1] != params.conv1_w.shape[2]:
        raise ConfigError(f"feature channels {feat.shape[-1]} do not match attention "
                          f"params ({params.conv1_w.shape[2]})")
    hidden = T.relu(T.conv2d(feat, params.conv1_w, params.conv1_b))
    amap = T.sigmoid(T.conv2d(hidden, params.conv3_w, params.conv3_b))  # (..., H', W', 1)
    f_att = T.mul(feat, amap)
    return T.reshape(amap, amap.shape[:-1]), f_att


def classify_head(f_att: Tensor, params: HeadParams, dropout_rate: float = 0.0,
                  dropout_active: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Global average pool over the spatial grid, dropout, linear map to logits."""
    pooled = T.tmean(f_att, axis=(-3, -2))
    pooled = T.dropout(pooled, dropout_rate, dropout_active, rng)
    return T.add(T.matmul(pooled, params.w), params.b)


# ---------------------------------------------------------------------------
# MC-dropout ensemble and filtering
# ---------------------------------------------------------------------------

@dataclass
class PredictionEnsemble:
    """T softmax rows over K classes from stochastic forward passes."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 2:
            raise ConfigError(f"ensemble needs at least 2 rows, got shape {self.rows.shape}")
        if np.any(self.rows < 0) or np.any(np.abs(self.rows.sum(axis=1) - 1.0) > 1e-9):
            raise DataError("ensemble rows must be probability vectors")

    @property
    def num_passes(self) -> int:
        return self.rows.shape[0]

    @property
    def num_classes(self) -> int:
        return self.rows.shape[1]


@dataclass
class PseudoLabelDecision:
    mean_prob: np.ndarray
    label: int
    uncertainty: float
    accepted: bool


def mc_dropout_ensemble(model, image: np.ndarray, num_passes: int,
                        rng: np.random.Generator) -> PredictionEnsemble:
    """Run T dropout-active forward passes on one weakly augmented image.

    Gradient-free by construction (no tape is active inside). The passes are
    batched into a single forward; dropout masks are drawn independently per
    batch row, which is equivalent to T separate passes.
    """
    if num_passes < 2:
        raise ConfigError(f"need at least 2 MC passes, got {num_passes}")
    if model.cfg.dropout_rate == 0.0:
        warnings.warn("dropout_rate is 0; the MC ensemble will be degenerate", stacklevel=2)
    if T.active_tape() is not None:
        raise RuntimeError("pseudo-label generation must run outside any tape")
    tiled = np.broadcast_to(image, (num_passes,) + image.shape)
    logits = model.forward(np.ascontiguousarray(tiled), dropout_active=True, rng=rng)
    probs = T.softmax(logits, axis=-1).data
    return PredictionEnsemble(probs)


def mean_prediction(ensemble: PredictionEnsemble) -> tuple[np.ndarray, int]:
    """Ensemble mean and its argmax (lowest index wins ties)."""
    p_bar = ensemble.rows.mean(axis=0)
    return p_bar, int(np.argmax(p_bar))


def uncertainty(ensemble: PredictionEnsemble) -> float:
    """Trace of the covariance of the rows (population form, divide by T)."""
    centered = ensemble.rows - ensemble.rows.mean(axis=0)
    return float((centered * centered).mean(axis=0).sum())


def filter_mask(mean_prob: np.ndarray, uncert: float,
                tau_c: float, tau_u: float) -> bool:
    """Dual criterion: confident (max p >= tau_c) and stable (U <= tau_u)."""
    if not 0.0 < tau_c <= 1.0:
        raise ConfigError(f"tau_c must be in (0, 1], got {tau_c}")
    if tau_u < 0.0:
        raise ConfigError(f"tau_u must be >= 0, got {tau_u}")
    return bool(np.max(mean_prob) >= tau_c and uncert <= tau_u)


def decide(ensemble: PredictionEnsemble, tau_c: float, tau_u: float) -> PseudoLabelDecision:
    p_bar, label = mean_prediction(ensemble)
    u = uncertainty(ensemble)
    return PseudoLabelDecision(p_bar, label, u, filter_mask(p_bar, u, tau_c, tau_u))


def append_decision_log(path, sample_ids, decisions: list[PseudoLabelDecision]) -> None:
    """One JSON record per unlabeled sample, appended (newline-delimited)."""
    with open(path, "a", encoding="utf-8") as fh:
        for sid, d in zip(sample_ids, decisions):
            fh.write(json.dumps({
                "id": int(sid),
                "p_max": round(float(d.mean_prob.max()), 10),
                "label": int(d.label),
                "uncertainty": round(float(d.uncertainty), 10),
                "mask": int(d.accepted),
            }) + "\n")
