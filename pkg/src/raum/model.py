"""Full classifier: backbone -> region attention -> pooled linear head."""

from __future__ import annotations

import numpy as np

from . import rabu
from .backbone import BackboneConfig, BackboneParams, backbone_forward, init_backbone
from .tensor import Tensor


class Model:
    """Holds config plus all parameters; forward is a pure function of them.

    Attention can be bypassed per call (``use_attention=False``) so ablation
    variants share one parameter schema and one checkpoint format.
    """

    def __init__(self, cfg: BackboneConfig, backbone: BackboneParams,
                 attention: rabu.AttentionParams, head: rabu.HeadParams):
        self.cfg = cfg
        self.backbone = backbone
        self.attention = attention
        self.head = head

    @classmethod
    def init(cls, cfg: BackboneConfig, rng: np.random.Generator,
             attn_mid_channels: int | None = None) -> "Model":
        return cls(
            cfg,
            init_backbone(cfg, rng),
            rabu.init_attention(cfg.embed_dim, rng, attn_mid_channels),
            rabu.init_head(cfg.embed_dim, cfg.num_classes, rng),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, t in self.backbone.named():
            out[f"backbone.{name}"] = t
        out.update(dict(self.attention.named()))
        out.update(dict(self.head.named()))
        return out

    def features(self, images, dropout_active: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        return backbone_forward(images, self.cfg, self.backbone, dropout_active, rng)

    def forward(self, images, dropout_active: bool = False,
                rng: np.random.Generator | None = None,
                use_attention: bool = True) -> Tensor:
        feat = self.features(images, dropout_active, rng)
        if use_attention:
            _, feat = rabu.region_attention(feat, self.attention)
        return rabu.classify_head(feat, self.head, self.cfg.dropout_rate,
                                  dropout_active, rng)

    def predict_proba(self, images, rng=None) -> np.ndarray:
        """Deterministic (dropout-off) class probabilities as a plain array."""
        from . import tensor as T
        logits = self.forward(images, dropout_active=False)
        return T.softmax(logits, axis=-1).data
