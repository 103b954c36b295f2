"""Heterogeneous-pair face verification: margin-softmax pretraining, sibling
transfer and max-margin pairwise score fine-tuning, with a TAR@FAR protocol."""

__version__ = "0.1.0"
