"""Dataset containers for the source (classification) and target (ID/selfie
pair) domains."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigInvalid, DimMismatch, EmptyDataset


@dataclass
class LabeledDataset:
    """Source-domain samples: ``inputs`` is ``(N, input_dim)``, ``labels`` is ``(N,)``."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise DimMismatch("inputs must be (N, d) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigInvalid("labels must lie in [0, num_classes)")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def equals(self, other):
        return (
            isinstance(other, LabeledDataset)
            and self.num_classes == other.num_classes
            and self.inputs.shape == other.inputs.shape
            and self.inputs.tobytes() == other.inputs.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )


@dataclass
class PairDataset:
    """Target-domain subjects, each with one ID input and one or more selfies.

    ``selfie_inputs[i]`` is a ``(k_i, input_dim)`` array for subject ``i``.
    """

    id_inputs: np.ndarray
    selfie_inputs: List[np.ndarray]
    subject_ids: np.ndarray

    def __post_init__(self):
        self.id_inputs = np.asarray(self.id_inputs, dtype=np.float64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        self.selfie_inputs = [np.atleast_2d(np.asarray(s, dtype=np.float64))
                              for s in self.selfie_inputs]
        n = self.id_inputs.shape[0]
        if self.id_inputs.ndim != 2:
            raise DimMismatch("id_inputs must be (N, d)")
        if len(self.selfie_inputs) != n or self.subject_ids.shape != (n,):
            raise DimMismatch("one selfie set and one subject id per ID input")
        d = self.id_inputs.shape[1]
        for s in self.selfie_inputs:
            if s.shape[0] == 0:
                raise EmptyDataset("every subject needs at least one selfie")
            if s.shape[1] != d:
                raise DimMismatch("all inputs must share one width")
        if len(np.unique(self.subject_ids)) != n:
            raise ConfigInvalid("subject ids must be unique")

    def __len__(self):
        return self.id_inputs.shape[0]

    @property
    def input_dim(self):
        return self.id_inputs.shape[1]

    def subset(self, indices: Sequence[int]) -> "PairDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return PairDataset(
            self.id_inputs[idx],
            [self.selfie_inputs[i] for i in idx],
            self.subject_ids[idx],
        )

    def equals(self, other):
        if not isinstance(other, PairDataset) or len(self) != len(other):
            return False
        return (
            self.id_inputs.tobytes() == other.id_inputs.tobytes()
            and self.subject_ids.tobytes() == other.subject_ids.tobytes()
            and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                    for a, b in zip(self.selfie_inputs, other.selfie_inputs))
        )
