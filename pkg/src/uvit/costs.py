"""Analytic parameter and multiply-accumulate counting.

Counts are exact integers derived from tensor shapes, using the MAC
convention (one multiply-accumulate = one FLOP). Softmax, layernorm, GELU,
and bias adds are excluded; they are sub-percent at these shapes and the
published budgets follow the same convention. Per block: 12d^2 + 13d
parameters and N*12d^2 linear MACs plus 2*d*sum_w(N_w^2) attention MACs over
the block's windows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .errors import ContractError, DivisibilityError
from .factory import ArchConfig
from .windows import bind_strategy, plan_windows

_BUCKETS = ("embedding", "attention", "linear", "transitions", "head")


@dataclass(frozen=True)
class CostReport:
    """Exact totals plus a per-component split.

    Parameter buckets: embedding (patch kernel, position table, class
    token), attention (qkv and output projections), linear (FFNs and every
    layernorm, including the final one), transitions (between-stage
    projections), head (classification head only).

    MAC buckets differ in one place: every token-wise matmul (qkv, output
    projection, FFNs) lands in linear, and attention holds only the
    quadratic score and value products, which scale with the squared
    window fraction.
    """

    params: int
    macs: int
    param_breakdown: dict
    mac_breakdown: dict

    def __post_init__(self):
        for total, breakdown in ((self.params, self.param_breakdown),
                                 (self.macs, self.mac_breakdown)):
            if set(breakdown) != set(_BUCKETS):
                raise ContractError(f"breakdown keys must be {_BUCKETS}")
            if sum(breakdown.values()) != total:
                raise ContractError("breakdown does not sum to the total")

    @property
    def gmacs(self) -> float:
        return self.macs / 1e9


def _grid_extent(cfg: ArchConfig, stage_index: int, input_size: int) -> int:
    extent = input_size * cfg.stages[stage_index].input_scale
    if extent.denominator != 1 or extent < 1:
        raise DivisibilityError(
            f"input {input_size} at scale {cfg.stages[stage_index].input_scale} "
            f"gives non-integer grid extent {extent}")
    return int(extent)


def count_params(cfg: ArchConfig) -> CostReport:
    """Exact parameter count for a config, split per component."""
    d0 = cfg.stages[0].hidden
    g0 = cfg.grid_extent(0)
    embedding = cfg.patch * cfg.patch * 3 * d0 + d0 + g0 * g0 * d0
    if cfg.mode == "classification":
        embedding += 2 * d0   # class token and its position embedding
    attention = 0
    linear = 0
    for stage in cfg.stages:
        d = stage.hidden
        attention += stage.depth * (4 * d * d + 4 * d)
        linear += stage.depth * (8 * d * d + 9 * d)
    linear += 2 * cfg.stages[-1].hidden   # final layernorm
    transitions = 0
    for k, spec in enumerate(cfg.transitions()):
        d_in = cfg.stages[k].hidden
        d_out = cfg.stages[k + 1].hidden
        if spec.kind == "strided-projection":
            transitions += 4 * d_in * d_out + d_out
        elif spec.kind == "width-projection":
            transitions += d_in * d_out + d_out
        # bilinear-merge and none are parameter-free
    head = cfg.stages[-1].hidden * 1000 + 1000 if cfg.mode == "classification" else 0
    breakdown = {"embedding": embedding, "attention": attention, "linear": linear,
                 "transitions": transitions, "head": head}
    return CostReport(params=sum(breakdown.values()), macs=0,
                      param_breakdown=breakdown,
                      mac_breakdown={k: 0 for k in _BUCKETS})


def _attention_window_sum(cfg: ArchConfig, stage_index: int, grid: int) -> list:
    """sum_w (window token count)^2 for every block of a stage."""
    stage = cfg.stages[stage_index]
    if cfg.mode == "classification":
        n = grid * grid + 1
        return [n * n] * stage.depth
    if cfg.strategy is not None:
        layouts = bind_strategy(cfg.strategy, stage.depth, grid, grid)
    else:
        layouts = [plan_windows(grid, grid, stage.window_scale)] * stage.depth
    return [lay.n_windows * lay.tokens_per_window ** 2 for lay in layouts]


def count_flops(cfg: ArchConfig, input_size: int = None) -> CostReport:
    """Exact MAC count for a config at a given input size (cfg.input when
    omitted). Divisibility of the grid by every window scale is enforced."""
    if input_size is None:
        input_size = cfg.input
    if input_size < cfg.patch or input_size % cfg.patch:
        raise DivisibilityError(
            f"input {input_size} must be a positive multiple of patch {cfg.patch}")
    d0 = cfg.stages[0].hidden
    g0 = _grid_extent(cfg, 0, input_size)
    embedding = g0 * g0 * (cfg.patch * cfg.patch * 3) * d0
    attention = 0
    linear = 0
    transitions = 0
    for si, stage in enumerate(cfg.stages):
        g = _grid_extent(cfg, si, input_size)
        d = stage.hidden
        tokens = g * g + (1 if cfg.mode == "classification" else 0)
        linear += stage.depth * tokens * 12 * d * d
        attention += 2 * d * sum(_attention_window_sum(cfg, si, g))
        if stage.output_tap is not None:
            tap = input_size * stage.output_tap
            if tap.denominator != 1 or tap < 1:
                raise DivisibilityError(
                    f"tap scale {stage.output_tap} gives non-integer extent "
                    f"{tap} at input {input_size}")
            tap = int(tap)
            if tap != g:
                transitions += 4 * tap * tap * d   # bilinear resample to the tap grid
        if si + 1 < len(cfg.stages):
            spec = cfg.transitions()[si]
            g_next = _grid_extent(cfg, si + 1, input_size)
            d_next = cfg.stages[si + 1].hidden
            if spec.kind == "width-projection":
                transitions += g * g * d * d_next
            elif spec.kind == "strided-projection":
                transitions += g_next * g_next * 4 * d * d_next
            elif spec.kind == "bilinear-merge":
                transitions += 4 * g_next * g_next * d
    head = cfg.stages[-1].hidden * 1000 if cfg.mode == "classification" else 0
    breakdown = {"embedding": embedding, "attention": attention, "linear": linear,
                 "transitions": transitions, "head": head}
    return CostReport(params=0, macs=sum(breakdown.values()),
                      param_breakdown={k: 0 for k in _BUCKETS},
                      mac_breakdown=breakdown)


@dataclass(frozen=True)
class OffsetFit:
    """A constant head cost (GMACs) reconciling backbone counts with
    published end-to-end totals, with signed per-row relative residuals."""

    offset: float
    residuals: tuple

    def __post_init__(self):
        if self.offset < 0:
            raise ContractError("fitted offset must be >= 0")


def fit_head_offset(rows) -> OffsetFit:
    """Least-squares constant offset for rows of (config, input size, total
    GMACs). The offset is clamped at zero; residuals are
    (backbone + offset - total) / total per row."""
    rows = list(rows)
    if not rows:
        raise ContractError("fit_head_offset needs at least one row")
    backbones = [count_flops(cfg, input_size).gmacs
                 for cfg, input_size, _ in rows]
    totals = [float(total) for _, _, total in rows]
    offset = max(0.0, sum(t - b for t, b in zip(totals, backbones)) / len(rows))
    residuals = tuple((b + offset - t) / t for b, t in zip(backbones, totals))
    return OffsetFit(offset=offset, residuals=residuals)


COST_CSV_COLUMNS = (
    "name", "mode", "depth", "width", "input", "strategy", "params", "gmacs",
    "params_embedding", "params_attention", "params_linear",
    "params_transitions", "params_head",
    "gmacs_embedding", "gmacs_attention", "gmacs_linear",
    "gmacs_transitions", "gmacs_head",
)


def cost_row(cfg: ArchConfig, input_size: int = None) -> dict:
    """One CSV row combining count_params and count_flops for a config."""
    if input_size is None:
        input_size = cfg.input
    params = count_params(cfg)
    flops = count_flops(cfg, input_size)
    row = {
        "name": cfg.name,
        "mode": cfg.mode,
        "depth": cfg.depth,
        "width": "/".join(str(s.hidden) for s in cfg.stages),
        "input": input_size,
        "strategy": cfg.strategy_text(),
        "params": params.params,
        "gmacs": f"{flops.gmacs:.6f}",
    }
    for bucket in _BUCKETS:
        row[f"params_{bucket}"] = params.param_breakdown[bucket]
        row[f"gmacs_{bucket}"] = f"{flops.mac_breakdown[bucket] / 1e9:.6f}"
    return row


def write_cost_csv(path, rows) -> None:
    """rows: iterables of (ArchConfig, input size or None). Every row is
    computed before the file is opened, so failures write nothing."""
    computed = [cost_row(cfg, input_size) for cfg, input_size in rows]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COST_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(computed)
