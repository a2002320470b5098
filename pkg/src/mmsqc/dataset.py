"""Sliding-window sequence datasets built from trajectory ensembles.

A trajectory with n records yields n - L + 1 overlapping length-L sequences
(stride 1, chronological). Each trajectory's sequences are split 3:1 into
train/validation (validation count = floor(n/4)); the merged sets are then
globally shuffled, keeping the internal time order of every sequence intact.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from mmsqc import arrayio
from mmsqc.sqc import (
    PhaseSpaceState,
    STATE_ORDERING,
    Trajectory,
    TrajectoryEnsemble,
    pack_state,
    unpack_state,
)
from mmsqc.streams import substream

_DATASET_KIND = "mmsqc.dataset"
_DATASET_VERSION = 1


def vectorize(state: PhaseSpaceState) -> np.ndarray:
    """Flatten a phase-space state into the canonical x_e|p_e|Q|P vector."""
    return pack_state(state)


def unvectorize(vec, n_states: int, t: float = 0.0) -> PhaseSpaceState:
    return unpack_state(vec, n_states, t=t)


def split_sequences(traj: Trajectory, seq_len: int) -> np.ndarray:
    """All sliding windows of length seq_len, shape (n - L + 1, L, dim)."""
    if seq_len < 2:
        raise ValueError("sequence length must be at least 2")
    n = traj.n_records
    if n < seq_len:
        raise ValueError(f"trajectory has {n} records, need at least {seq_len}")
    count = n - seq_len + 1
    return np.stack([traj.data[i:i + seq_len] for i in range(count)])


def partition(per_traj_sequences: list[np.ndarray], split_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random per-trajectory 3:1 split, merged and globally shuffled.

    Validation takes floor(n/4) sequences of each trajectory. Shuffling
    permutes sequence order only.
    """
    train_parts, val_parts = [], []
    for i, seqs in enumerate(per_traj_sequences):
        n = len(seqs)
        if n < 4:
            raise ValueError(f"trajectory {i} contributes only {n} sequences; need >= 4 for a 3:1 split")
        perm = substream(split_seed, "split", i).permutation(n)
        n_val = n // 4
        val_parts.append(seqs[perm[:n_val]])
        train_parts.append(seqs[perm[n_val:]])
    train = np.concatenate(train_parts)
    validation = np.concatenate(val_parts)
    train = train[substream(split_seed, "shuffle", 0).permutation(len(train))]
    validation = validation[substream(split_seed, "shuffle", 1).permutation(len(validation))]
    return train, validation


@dataclass
class SequenceDataset:
    """Train/validation sets of length-L sequences, (count, L, dim) each."""

    seq_len: int
    dim: int
    train: np.ndarray
    validation: np.ndarray
    source_hash: str = ""
    split_seed: int | None = None

    def __post_init__(self):
        for name in ("train", "validation"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size == 0:
                arr = arr.reshape(0, self.seq_len, self.dim)
            if arr.ndim != 3 or arr.shape[1] != self.seq_len or arr.shape[2] != self.dim:
                raise ValueError(f"{name} set must have shape (count, {self.seq_len}, {self.dim})")
            setattr(self, name, arr)

    @property
    def n_train(self) -> int:
        return self.train.shape[0]

    @property
    def n_validation(self) -> int:
        return self.validation.shape[0]

    def save(self, path: str, extra_header: dict | None = None) -> None:
        header = {
            "kind": _DATASET_KIND,
            "version": _DATASET_VERSION,
            "seq_len": self.seq_len,
            "dim": self.dim,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "ordering": STATE_ORDERING,
            "source_hash": self.source_hash,
            "split_seed": self.split_seed,
        }
        if extra_header:
            header.update(extra_header)
        payload = np.concatenate([self.train.ravel(), self.validation.ravel()])
        arrayio.write_array_file(path, header, payload)

    @classmethod
    def load(cls, path: str) -> "SequenceDataset":
        header, payload = arrayio.read_array_file(path)
        if header.get("kind") != _DATASET_KIND:
            raise arrayio.HeaderError(f"{path}: not a sequence dataset file")
        if header.get("version") != _DATASET_VERSION:
            raise arrayio.VersionError(f"{path}: unsupported version {header.get('version')}")
        try:
            seq_len = int(header["seq_len"])
            dim = int(header["dim"])
            n_train = int(header["n_train"])
            n_val = int(header["n_validation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise arrayio.HeaderError(f"{path}: incomplete header: {exc}") from None
        arrayio.expect_payload(header, payload, (n_train + n_val) * seq_len * dim, path)
        cut = n_train * seq_len * dim
        train = payload[:cut].reshape(n_train, seq_len, dim)
        validation = payload[cut:].reshape(n_val, seq_len, dim)
        return cls(seq_len, dim, train, validation,
                   source_hash=header.get("source_hash", ""),
                   split_seed=header.get("split_seed"))


def build_dataset(ensemble: TrajectoryEnsemble, seq_len: int,
                  split_seed: int) -> SequenceDataset:
    """Slice every trajectory into length-L windows and split 3:1."""
    per_traj = [split_sequences(ensemble.trajectory(i), seq_len)
                for i in range(ensemble.n_traj)]
    train, validation = partition(per_traj, split_seed)
    return SequenceDataset(seq_len, ensemble.dim, train, validation,
                           source_hash=ensemble.content_hash(),
                           split_seed=split_seed)


def standardize(dataset: SequenceDataset):
    """Optional per-variable standardization hook; the default pipeline
    trains on raw variables (mapping and oscillator coordinates are O(1)
    by construction).

    Returns (standardized dataset, mean, std) with statistics taken from the
    training set; `destandardize` inverts the transform.
    """
    flat = dataset.train.reshape(-1, dataset.dim)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    scaled = SequenceDataset(dataset.seq_len, dataset.dim,
                             (dataset.train - mean) / std,
                             (dataset.validation - mean) / std,
                             source_hash=dataset.source_hash,
                             split_seed=dataset.split_seed)
    return scaled, mean, std


def destandardize(values: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return values * std + mean


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
