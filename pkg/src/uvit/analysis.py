"""Relative receptive field of attention score matrices.

For an L-token sequence with row-stochastic scores s, the metric is

    r = (1/L) * sum_i [ sum_j s[i,j] * |i - j| ] / max(i, L - i)

with i, j running 1..L. The denominator is max(i, L-i), not the true farthest
distance max(i-1, L-i), so r stays strictly below 1 even for farthest-token
attention; the definition is kept verbatim. 2-D token grids are flattened
row-major before scoring, and windowed layers score each window separately,
then average.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor

_ROW_SUM_TOL = 1e-6


def _as_matrix(scores) -> np.ndarray:
    m = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"scores must be a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ContractError("scores contain non-finite entries")
    if (m < -1e-9).any():
        raise ContractError("scores contain negative entries")
    sums = m.sum(axis=1)
    worst = np.abs(sums - 1.0).max()
    if worst > _ROW_SUM_TOL:
        raise ContractError(f"rows must sum to 1 within {_ROW_SUM_TOL}, "
                            f"worst deviation {worst:.3g}")
    return m


def relative_receptive_field(scores) -> float:
    """The metric above for one row-stochastic score matrix (Tensor or array)."""
    m = _as_matrix(scores)
    length = m.shape[0]
    idx = np.arange(1, length + 1, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :])
    weighted = (m * dist).sum(axis=1)
    denom = np.maximum(idx, length - idx)
    return float(np.mean(weighted / denom))


def uniform_rrf(length: int) -> float:
    """Closed form of the metric for uniform scores: every row attends 1/L
    everywhere, so the numerator is the mean absolute index distance."""
    idx = np.arange(1, length + 1, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :]).mean(axis=1)
    return float(np.mean(dist / np.maximum(idx, length - idx)))


@dataclass(frozen=True)
class RRFSummary:
    """Per-layer head statistics: mean and population std of r across heads."""

    layers: tuple
    means: tuple
    stds: tuple
    per_head: tuple
    window_counts: tuple
    windowed: bool


def layer_rf_summary(records, layer_indices=None) -> RRFSummary:
    """Summarize r across heads for each layer.

    records: one entry per layer; each entry lists the per-head scores, where
    a head is either a single matrix or a sequence of per-window matrices
    (r is averaged over windows). Head counts must agree across layers.
    """
    records = list(records)
    if not records:
        raise ContractError("layer_rf_summary needs at least one layer")
    if layer_indices is None:
        layer_indices = tuple(range(len(records)))
    else:
        layer_indices = tuple(int(i) for i in layer_indices)
        if len(layer_indices) != len(records):
            raise ContractError("layer_indices length does not match records")
    head_counts = {len(layer) for layer in records}
    if len(head_counts) != 1:
        raise ContractError(f"ragged head counts across layers: {sorted(head_counts)}")
    if head_counts == {0}:
        raise ContractError("layers carry no heads")
    per_head = []
    window_counts = []
    for layer in records:
        values = []
        windows_seen = 0
        for head in layer:
            if isinstance(head, (Tensor, np.ndarray)):
                parts = [head]
            else:
                parts = list(head)
                if not parts:
                    raise ContractError("a head needs at least one score matrix")
            windows_seen = max(windows_seen, len(parts))
            values.append(float(np.mean([relative_receptive_field(p) for p in parts])))
        per_head.append(tuple(values))
        window_counts.append(windows_seen)
    means = tuple(float(np.mean(v)) for v in per_head)
    stds = tuple(float(np.std(v)) for v in per_head)
    return RRFSummary(layers=layer_indices, means=means, stds=stds,
                      per_head=tuple(per_head),
                      window_counts=tuple(window_counts),
                      windowed=any(c > 1 for c in window_counts))


def scores_to_records(block_scores) -> list:
    """Adapt forward()'s per-block scores, shaped [block][window][head], to
    the [layer][head][window] layout layer_rf_summary expects."""
    records = []
    for block in block_scores:
        if not block:
            raise ContractError("a block carries no windows")
        heads = len(block[0])
        records.append([[window[h] for window in block] for h in range(heads)])
    return records


def write_rf_summary_csv(path, summary: RRFSummary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "mean", "std", "windows"])
        for layer, mean, std, windows in zip(summary.layers, summary.means,
                                             summary.stds, summary.window_counts):
            writer.writerow([layer, f"{mean:.10f}", f"{std:.10f}", windows])


def write_rf_long_csv(path, summary: RRFSummary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "head", "r"])
        for layer, values in zip(summary.layers, summary.per_head):
            for head, value in enumerate(values):
                writer.writerow([layer, head, f"{value:.10f}"])


def read_scores_csv(path) -> tuple:
    """Read long-form scores (columns layer, head, i, j, score, optional
    window; indices 0-based) into the records layout of layer_rf_summary.

    Entries absent from the file are zero. Returns (records, layer_indices).
    """
    cells = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ContractError(f"{path}: empty scores file")
        needed = {"layer", "head", "i", "j", "score"}
        missing = needed - set(reader.fieldnames)
        if missing:
            raise ContractError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                layer = int(row["layer"])
                head = int(row["head"])
                window = int(row["window"]) if row.get("window") else 0
                i = int(row["i"])
                j = int(row["j"])
                score = float(row["score"])
            except (TypeError, ValueError) as exc:
                raise ContractError(f"{path}:{line}: bad value ({exc})") from exc
            key = (layer, head, window)
            cells.setdefault(key, []).append((i, j, score))
    if not cells:
        raise ContractError(f"{path}: no score rows")
    layers = sorted({k[0] for k in cells})
    records = []
    for layer in layers:
        heads = sorted({k[1] for k in cells if k[0] == layer})
        layer_entry = []
        for head in heads:
            windows = sorted({k[2] for k in cells
                              if k[0] == layer and k[1] == head})
            matrices = []
            for window in windows:
                entries = cells[(layer, head, window)]
                size = 1 + max(max(i, j) for i, j, _ in entries)
                m = np.zeros((size, size))
                for i, j, score in entries:
                    m[i, j] = score
                matrices.append(m)
            layer_entry.append(matrices)
        records.append(layer_entry)
    return records, tuple(layers)
