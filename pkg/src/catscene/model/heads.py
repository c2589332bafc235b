"""Per-branch classification heads, summed multi-level loss, inference rule.

Each head is an affine map followed by softmax. Training supervises all
three branches with plain cross-entropy and optimizes the unweighted sum
loss_all = loss_c + loss_s + loss_g. Inference reads only the global-branch
distribution; ties resolve to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class HeadOutputs:
    logits_c: torch.Tensor
    logits_s: torch.Tensor
    logits_g: torch.Tensor
    p_c: torch.Tensor
    p_s: torch.Tensor
    p_g: torch.Tensor


class MultiLevelHeads(nn.Module):
    """Independent linear heads over d / 2d / 3d fused features."""

    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.head_c = nn.Linear(dim, num_classes)
        self.head_s = nn.Linear(2 * dim, num_classes)
        self.head_g = nn.Linear(3 * dim, num_classes)

    def forward(self, center_pooled: torch.Tensor, f_s_fused: torch.Tensor, f_g_fused: torch.Tensor) -> HeadOutputs:
        logits_c = self.head_c(center_pooled)
        logits_s = self.head_s(f_s_fused)
        logits_g = self.head_g(f_g_fused)
        return HeadOutputs(
            logits_c=logits_c,
            logits_s=logits_s,
            logits_g=logits_g,
            p_c=F.softmax(logits_c, dim=-1),
            p_s=F.softmax(logits_s, dim=-1),
            p_g=F.softmax(logits_g, dim=-1),
        )


def branch_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy -log p[label] over the batch."""
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("label out of range")
    return F.cross_entropy(logits, labels)


def total_loss(outputs: HeadOutputs, labels: torch.Tensor) -> dict[str, torch.Tensor]:
    """Per-branch cross-entropies and their exact unweighted sum."""
    loss_c = branch_loss(outputs.logits_c, labels)
    loss_s = branch_loss(outputs.logits_s, labels)
    loss_g = branch_loss(outputs.logits_g, labels)
    return {"loss_c": loss_c, "loss_s": loss_s, "loss_g": loss_g, "loss_all": loss_c + loss_s + loss_g}


def infer(p_g: torch.Tensor | np.ndarray) -> np.ndarray:
    """Predicted class ids: argmax of the global-branch distribution.

    np.argmax returns the first maximal index, which implements the
    lowest-index tie rule.
    """
    if isinstance(p_g, torch.Tensor):
        p_g = p_g.detach().cpu().numpy()
    p_g = np.asarray(p_g)
    if p_g.ndim == 1:
        p_g = p_g[None, :]
    return np.argmax(p_g, axis=-1)
