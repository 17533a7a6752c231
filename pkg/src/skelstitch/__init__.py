"""Skeleton stitching, granular contrastive pretraining and temporal action segmentation."""

__version__ = "0.1.0"
