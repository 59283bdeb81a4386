"""Structural image classification from learned visual primitives and
differentiable spatial relations, with sparsemax class compositions and
post-training structural compaction."""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
CATALOG_CANONICAL_VERSION = 1
