"""Synthetic desk-scale sequence tasks and their text serialization.

Two tasks:

* ``listops-mini``: nested prefix expressions over MAX / MIN / MED /
  SM (sum mod 10) with nesting depth <= 3 and sequences of at most 64
  tokens; the label is the expression's value (10 classes).
* ``denoise-1d``: a smooth random signal is sampled, corrupted with
  noise and quantized into tokens; the label is the decile of the clean
  signal at the center position.

Datasets serialize one example per line as ``label<TAB>tok tok tok ...``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD = 0
DIGIT_BASE = 1  # digit v -> token 1 + v
OP_TOKENS = {"MAX": 11, "MIN": 12, "MED": 13, "SM": 14}
CLOSE = 15
VOCAB = 16

TASK_NAMES = ("listops-mini", "denoise-1d")


@dataclass
class TaskDataset:
    name: str
    train_tokens: np.ndarray  # (N, L) int64, PAD-padded
    train_labels: np.ndarray  # (N,) int64
    val_tokens: np.ndarray
    val_labels: np.ndarray
    num_classes: int
    vocab: int
    max_len: int

    def __post_init__(self) -> None:
        for toks, labs in ((self.train_tokens, self.train_labels), (self.val_tokens, self.val_labels)):
            if toks.ndim != 2 or toks.shape[1] > self.max_len:
                raise ValueError(f"token array shape {toks.shape} exceeds max_len {self.max_len}")
            if toks.min() < 0 or toks.max() >= self.vocab:
                raise ValueError("token ids out of vocabulary range")
            if labs.min() < 0 or labs.max() >= self.num_classes:
                raise ValueError("labels out of class range")

    def majority_accuracy(self) -> float:
        """Accuracy on the val split of always predicting the train mode."""
        mode = np.bincount(self.train_labels).argmax()
        return float(np.mean(self.val_labels == mode))


_OP_FNS = {
    "MAX": lambda vs: max(vs),
    "MIN": lambda vs: min(vs),
    "MED": lambda vs: int(np.median(vs)),
    "SM": lambda vs: sum(vs) % 10,
}


def _gen_expr(rng: np.random.Generator, depth: int, budget: int) -> tuple[list[int], int]:
    """Recursively build one expression; returns (tokens, value)."""
    if depth == 0 or budget < 6 or rng.random() < 0.25:
        v = int(rng.integers(0, 10))
        return [DIGIT_BASE + v], v
    op = str(rng.choice(list(OP_TOKENS)))
    arity = int(rng.integers(2, 5))
    tokens = [OP_TOKENS[op]]
    used = 2  # opener + closer
    values = []
    for child_idx in range(arity):
        remaining = budget - used - (arity - child_idx - 1)
        child_tokens, child_value = _gen_expr(rng, depth - 1, remaining)
        tokens.extend(child_tokens)
        values.append(child_value)
        used += len(child_tokens)
    tokens.append(CLOSE)
    return tokens, _OP_FNS[op](values)


def _pad(rows: list[list[int]], max_len: int) -> np.ndarray:
    out = np.full((len(rows), max_len), PAD, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def make_listops(
    n_train: int = 10_000,
    n_val: int = 1_000,
    seed: int = 0,
    max_len: int = 64,
    max_depth: int = 3,
) -> TaskDataset:
    rng = np.random.default_rng(seed)
    rows: list[list[int]] = []
    labels: list[int] = []
    while len(rows) < n_train + n_val:
        tokens, value = _gen_expr(rng, max_depth, max_len)
        if len(tokens) > max_len or len(tokens) < 4:
            continue
        rows.append(tokens)
        labels.append(value)
    tokens = _pad(rows, max_len)
    labels_arr = np.asarray(labels, dtype=np.int64)
    return TaskDataset(
        name="listops-mini",
        train_tokens=tokens[:n_train],
        train_labels=labels_arr[:n_train],
        val_tokens=tokens[n_train:],
        val_labels=labels_arr[n_train:],
        num_classes=10,
        vocab=VOCAB,
        max_len=max_len,
    )


def make_denoise(
    n_train: int = 10_000,
    n_val: int = 1_000,
    seed: int = 0,
    max_len: int = 64,
    noise: float = 0.8,
    levels: int = 15,
) -> TaskDataset:
    rng = np.random.default_rng(seed)
    n = n_train + n_val
    L = max_len
    pos = (np.arange(L) + 0.5) / L
    modes = np.arange(1, 5)
    amps = rng.standard_normal((n, len(modes))) / modes
    clean = np.einsum("nm,ml->nl", amps, np.cos(np.pi * modes[:, None] * pos[None, :]))
    clean /= np.maximum(clean.std(axis=1, keepdims=True), 1e-9)
    noisy = clean + noise * rng.standard_normal((n, L))
    edges = np.linspace(-3.0, 3.0, levels - 1)
    tokens = (np.digitize(noisy, edges) + DIGIT_BASE).astype(np.int64)
    label_edges = np.quantile(clean[:, L // 2], np.linspace(0, 1, 11)[1:-1])
    labels = np.digitize(clean[:, L // 2], label_edges).astype(np.int64)
    return TaskDataset(
        name="denoise-1d",
        train_tokens=tokens[:n_train],
        train_labels=labels[:n_train],
        val_tokens=tokens[n_train:],
        val_labels=labels[n_train:],
        num_classes=10,
        vocab=VOCAB,
        max_len=max_len,
    )


def make_task(
    name: str,
    n_train: int = 10_000,
    n_val: int = 1_000,
    seed: int = 0,
    max_len: int = 64,
) -> TaskDataset:
    if name == "listops-mini":
        return make_listops(n_train, n_val, seed, max_len)
    if name == "denoise-1d":
        return make_denoise(n_train, n_val, seed, max_len)
    raise ValueError(f"unknown task {name!r}; expected one of {TASK_NAMES}")


def save_split(path: str | Path, tokens: np.ndarray, labels: np.ndarray) -> None:
    """Write one example per line: label, tab, space-separated token ids."""
    with open(path, "w") as fh:
        for row, label in zip(tokens, labels):
            trimmed = row[row != PAD]
            fh.write(f"{int(label)}\t{' '.join(str(int(t)) for t in trimmed)}\n")


def load_split(path: str | Path, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    rows: list[list[int]] = []
    labels: list[int] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            label, _, toks = line.partition("\t")
            labels.append(int(label))
            rows.append([int(t) for t in toks.split()])
    return _pad(rows, max_len), np.asarray(labels, dtype=np.int64)
