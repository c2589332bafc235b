"""Full scene classifiers: the context-aware model and the fusion baselines.

One wrapper covers five fusion strategies:

* ``cat``      - three adapter-tuned branches, cross-attention context fusion,
                 multi-level supervision (ablation flags can disable the
                 fusion, the extra supervision, and the adapters individually).
* ``center``   - center branch only, single head.
* ``input``    - the three scenes stacked into a 9-channel image, one branch.
* ``feature``  - per-branch pooled features concatenated, single head.
* ``decision`` - three per-branch heads, probabilities averaged.

The backbone is always frozen; only adapters, fusion attention, and heads
train.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import (
    BRANCHES,
    AdapterConfig,
    Backbone,
    BranchFeatures,
    EncoderConfig,
    is_adapter_param,
)
from .fusion import AcfModule, FusedFeatures
from .heads import HeadOutputs, MultiLevelHeads, branch_loss, total_loss

FUSION_KINDS = ("cat", "center", "input", "feature", "decision")

_ALIASES = {"center-only": "center", "center_only": "center", "input-level": "input",
            "input_level": "input", "feature-level": "feature", "feature_level": "feature",
            "decision-level": "decision", "decision_level": "decision"}


def normalize_fusion(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in FUSION_KINDS:
        raise ValueError(f"unknown fusion kind {kind!r}; expected one of {FUSION_KINDS}")
    return kind


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig | None = field(default_factory=AdapterConfig)  # None = no adapters
    fusion: str = "cat"
    use_acf: bool = True
    use_mls: bool = True
    acf_token_query: bool = False
    acf_global_kv: str = "global"

    def __post_init__(self):
        object.__setattr__(self, "fusion", normalize_fusion(self.fusion))
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.fusion == "cat" and self.use_mls and not self.use_acf:
            raise ValueError("multi-level supervision requires context fusion (mls requires acf)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = asdict(self.encoder)
        d["adapter"] = asdict(self.adapter) if self.adapter is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        d["adapter"] = AdapterConfig(**d["adapter"]) if d.get("adapter") is not None else None
        return cls(**d)


@dataclass
class ModelOutputs:
    probs: torch.Tensor  # final predictor distribution (B, C)
    logits: dict[str, torch.Tensor]
    head_outputs: HeadOutputs | None = None
    fused: FusedFeatures | None = None
    branch_feats: dict[str, BranchFeatures] = field(default_factory=dict)


class SceneClassifier(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder.embed_dim
        c = cfg.num_classes
        kind = cfg.fusion

        if kind == "input":
            branches = ("shared",)
            in_chans = 9
        elif kind == "center" or (kind == "cat" and not cfg.use_acf):
            branches = ("center",)
            in_chans = 3
        else:
            branches = BRANCHES
            in_chans = 3
        self.backbone = Backbone(cfg.encoder, cfg.adapter, branches, in_chans=in_chans)

        self.acf = None
        self.heads: nn.Module
        if kind == "cat" and cfg.use_acf:
            self.acf = AcfModule(d, cfg.encoder.num_heads, cfg.acf_token_query, cfg.acf_global_kv)
            if cfg.use_mls:
                self.heads = MultiLevelHeads(d, c)
            else:
                self.heads = nn.Linear(3 * d, c)
        elif kind in ("center",) or (kind == "cat" and not cfg.use_acf):
            self.heads = nn.Linear(d, c)
        elif kind == "input":
            self.heads = nn.Linear(d, c)
        elif kind == "feature":
            self.heads = nn.Linear(3 * d, c)
        else:  # decision
            self.heads = nn.ModuleDict({b: nn.Linear(d, c) for b in BRANCHES})

        self._freeze_backbone()

    def _freeze_backbone(self):
        for name, p in self.backbone.named_parameters():
            if not is_adapter_param(name):
                p.requires_grad_(False)

    # Convenience aliases used throughout the toolkit.
    @property
    def is_cat(self) -> bool:
        return self.cfg.fusion == "cat" and self.cfg.use_acf

    @property
    def is_mls(self) -> bool:
        return self.is_cat and self.cfg.use_mls

    def encode(self, images: torch.Tensor, branch: str) -> BranchFeatures:
        return self.backbone(images, branch)

    def forward(
        self,
        center: torch.Tensor,
        surrounding: torch.Tensor | None = None,
        global_: torch.Tensor | None = None,
    ) -> ModelOutputs:
        kind = self.cfg.fusion
        if kind == "center" or (kind == "cat" and not self.cfg.use_acf):
            fc = self.encode(center, "center")
            logits = self.heads(fc.pooled)
            return ModelOutputs(
                probs=F.softmax(logits, dim=-1),
                logits={"center": logits},
                branch_feats={"center": fc},
            )
        if surrounding is None or global_ is None:
            raise ValueError(f"fusion kind {kind!r} needs all three scenes")
        if kind == "input":
            stacked = torch.cat([center, surrounding, global_], dim=1)
            feats = self.encode(stacked, "shared")
            logits = self.heads(feats.pooled)
            return ModelOutputs(
                probs=F.softmax(logits, dim=-1),
                logits={"stacked": logits},
                branch_feats={"stacked": feats},
            )

        fc = self.encode(center, "center")
        fs = self.encode(surrounding, "surrounding")
        fg = self.encode(global_, "global")
        feats = {"center": fc, "surrounding": fs, "global": fg}

        if kind == "feature":
            concat = torch.cat([fc.pooled, fs.pooled, fg.pooled], dim=-1)
            logits = self.heads(concat)
            return ModelOutputs(probs=F.softmax(logits, dim=-1), logits={"concat": logits}, branch_feats=feats)
        if kind == "decision":
            logits = {b: self.heads[b](feats[b].pooled) for b in BRANCHES}
            probs = sum(F.softmax(l, dim=-1) for l in logits.values()) / 3.0
            return ModelOutputs(probs=probs, logits=logits, branch_feats=feats)

        # cat with context fusion
        fused = self.acf(fc, fs, fg)
        if self.cfg.use_mls:
            ho = self.heads(fc.pooled, fused.f_s_fused, fused.f_g_fused)
            return ModelOutputs(
                probs=ho.p_g,
                logits={"center": ho.logits_c, "surrounding": ho.logits_s, "global": ho.logits_g},
                head_outputs=ho,
                fused=fused,
                branch_feats=feats,
            )
        logits = self.heads(fused.f_g_fused)
        return ModelOutputs(
            probs=F.softmax(logits, dim=-1), logits={"global": logits}, fused=fused, branch_feats=feats
        )

    def loss_terms(self, outputs: ModelOutputs, labels: torch.Tensor) -> dict[str, torch.Tensor]:
        """Loss dictionary; 'loss_all' is always present and is what trains."""
        kind = self.cfg.fusion
        if self.is_mls:
            return total_loss(outputs.head_outputs, labels)
        if kind == "center" or (kind == "cat" and not self.cfg.use_acf):
            loss = branch_loss(outputs.logits["center"], labels)
            return {"loss_c": loss, "loss_all": loss}
        if self.is_cat:  # fusion without multi-level heads: global head only
            loss = branch_loss(outputs.logits["global"], labels)
            return {"loss_g": loss, "loss_all": loss}
        if kind == "decision":
            # Single loss on the averaged distribution.
            if labels.min() < 0 or labels.max() >= outputs.probs.shape[-1]:
                raise ValueError("label out of range")
            picked = outputs.probs.gather(1, labels.unsqueeze(1)).squeeze(1)
            loss = -(picked.clamp_min(1e-12)).log().mean()
            return {"loss_all": loss}
        logits = next(iter(outputs.logits.values()))
        loss = branch_loss(logits, labels)
        return {"loss_all": loss}


def build_model(cfg: ModelConfig, seed: int = 0) -> SceneClassifier:
    """Seeded construction so two builds with the same seed are identical."""
    torch.manual_seed(seed)
    return SceneClassifier(cfg)


def trainable_parameters(model: nn.Module) -> dict[str, nn.Parameter]:
    return {n: p for n, p in model.named_parameters() if p.requires_grad}


def parameter_groups(model: SceneClassifier) -> dict[str, dict[str, nn.Parameter]]:
    """Named parameters split into backbone / adapters / acf / heads groups."""
    groups: dict[str, dict[str, nn.Parameter]] = {"backbone": {}, "adapters": {}, "acf": {}, "heads": {}}
    for name, p in model.named_parameters():
        if name.startswith("acf."):
            groups["acf"][name] = p
        elif name.startswith("heads."):
            groups["heads"][name] = p
        elif is_adapter_param(name):
            groups["adapters"][name] = p
        else:
            groups["backbone"][name] = p
    return groups


def parameter_count(model: nn.Module) -> tuple[int, int]:
    """(total, trainable) parameter counts."""
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return total, trainable


def single_backbone_parameter_count(cfg: EncoderConfig) -> int:
    """Parameters of one standalone 3-channel backbone without adapters."""
    return sum(p.numel() for p in Backbone(cfg, None, branches=(), in_chans=3).parameters())
