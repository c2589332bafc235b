"""Context-aware scene-in-scene classification toolkit.

A desk-scale, trainable implementation of a three-branch transformer
classifier: a shared frozen backbone with per-branch bottleneck adapters,
cross-attention fusion of surrounding/global context into the center
feature, and multi-level supervision with three classification heads.
Ships with a synthetic context-dependent dataset generator, classical
fusion baselines, long-tail-aware metrics, and a block-tiling mapper.
"""

__version__ = "0.1.0"
