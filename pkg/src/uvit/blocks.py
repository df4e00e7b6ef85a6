"""The encoder: patch embedding, windowed attention blocks, full forward pass.

Blocks are pre-norm residual: x + mhsa(ln1(x)) then x + ffn(ln2(x)), with the
qkv/proj attention split into a fixed number of heads and attention confined
to the windows of a WindowLayout. Checkpoint-adaptation helpers resample the
patch kernel and position table bilinearly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (Tensor, bilinear_resize, concat_cols, concat_rows, gather,
                     gelu, layernorm, matmul, reshape, slice_cols, softmax_rows,
                     take_rows, transpose)
from .weights import WeightSet, validate_weights
from .windows import WindowLayout, bind_strategy, plan_windows, window_row_indices


@dataclass(frozen=True)
class TokenGrid:
    """A 2-D lattice of tokens with constant hidden size."""

    h: int
    w: int
    d: int
    values: Tensor

    def __post_init__(self):
        if self.values.dims != (self.h, self.w, self.d):
            raise DimensionError(
                f"values dims {self.values.dims} do not match "
                f"({self.h}, {self.w}, {self.d})")

    @property
    def tokens(self) -> int:
        return self.h * self.w

    def rows(self) -> Tensor:
        """The grid flattened row-major to (h*w) x d."""
        return reshape(self.values, (self.tokens, self.d))


@dataclass(frozen=True)
class BlockWeights:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    qkv_weight: Tensor
    qkv_bias: Tensor
    proj_weight: Tensor
    proj_bias: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn1_weight: Tensor
    ffn1_bias: Tensor
    ffn2_weight: Tensor
    ffn2_bias: Tensor
    heads: int = 6

    def __post_init__(self):
        d = self.ln1_gamma.dims[0]
        if d % self.heads:
            raise ConfigError(f"hidden size {d} not divisible by {self.heads} heads")
        expect = {
            "ln1_gamma": (d,), "ln1_beta": (d,),
            "qkv_weight": (d, 3 * d), "qkv_bias": (3 * d,),
            "proj_weight": (d, d), "proj_bias": (d,),
            "ln2_gamma": (d,), "ln2_beta": (d,),
            "ffn1_weight": (d, 4 * d), "ffn1_bias": (4 * d,),
            "ffn2_weight": (4 * d, d), "ffn2_bias": (d,),
        }
        for field, dims in expect.items():
            got = getattr(self, field).dims
            if got != dims:
                raise DimensionError(f"{field} has dims {got}, expected {dims}")

    @property
    def hidden(self) -> int:
        return self.ln1_gamma.dims[0]


@dataclass(frozen=True)
class EmbedWeights:
    """Patch-embedding parameters; cls fields exist only in classification mode."""

    kernel: Tensor           # p x p x 3 x d
    bias: Tensor             # d
    pos: Tensor              # g_h x g_w x d
    cls: Optional[Tensor] = None
    cls_pos: Optional[Tensor] = None


def _patch_index(height: int, width: int, p: int) -> np.ndarray:
    """Flat pixel indices of every patch, one row per token, entries ordered
    (row, col, channel) within the patch to match the flattened kernel."""
    gh, gw = height // p, width // p
    within = ((np.arange(p)[:, None, None] * width
               + np.arange(p)[None, :, None]) * 3
              + np.arange(3)[None, None, :]).ravel()
    origins = ((np.arange(gh)[:, None] * p * width
                + np.arange(gw)[None, :] * p) * 3).ravel()
    return origins[:, None] + within[None, :]


def patch_embed(image: Tensor, ew: EmbedWeights, p: int) -> TokenGrid:
    """Embed an H x W x 3 image into (H/p) x (W/p) tokens.

    Each token is the flattened p x p x 3 patch times the kernel, plus bias,
    plus the position embedding at its grid site.
    """
    if len(image.dims) != 3 or image.dims[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {image.dims}")
    height, width, _ = image.dims
    if height % p or width % p:
        raise DimensionError(f"patch size {p} does not divide image {height}x{width}")
    gh, gw = height // p, width // p
    d = ew.kernel.dims[3]
    if ew.kernel.dims != (p, p, 3, d):
        raise DimensionError(f"kernel dims {ew.kernel.dims} do not match patch size {p}")
    if ew.pos.dims != (gh, gw, d):
        raise DimensionError(
            f"position table dims {ew.pos.dims} do not match token grid ({gh}, {gw}, {d})")
    patches = gather(image, _patch_index(height, width, p))
    kernel2d = reshape(ew.kernel, (p * p * 3, d))
    tokens = matmul(patches, kernel2d) + ew.bias
    tokens = tokens + reshape(ew.pos, (gh * gw, d))
    return TokenGrid(gh, gw, d, reshape(tokens, (gh, gw, d)))


def adapt_patch_kernel(kernel: Tensor, target_h: int = 8, target_w: int = 8) -> Tensor:
    """Bilinearly resample a patch kernel's spatial axes (16x16 -> 8x8 by
    default), independently per (input channel, output channel) slice."""
    if len(kernel.dims) != 4:
        raise DimensionError(f"expected kh x kw x 3 x d kernel, got {kernel.dims}")
    kh, kw, cin, d = kernel.dims
    flat = reshape(kernel, (kh, kw, cin * d))
    resized = bilinear_resize(flat, target_h, target_w)
    return reshape(resized, (target_h, target_w, cin, d))


def adapt_pos_embedding(pos: Tensor, target_h: int, target_w: int) -> Tensor:
    """Bilinearly resample a position table to a new grid.

    Callers must strip any class-token embedding first and carry it through
    unchanged; this operates on the spatial table only. Equal source and
    target extents return the values bit-exactly.
    """
    if len(pos.dims) != 3:
        raise DimensionError(f"expected g_h x g_w x d table, got {pos.dims}")
    return bilinear_resize(pos, target_h, target_w)


def _attend_rows(x: Tensor, w: BlockWeights, want_scores: bool):
    """Multi-head attention over one window's token matrix (n x d)."""
    d = w.hidden
    per_head = d // w.heads
    scale = 1.0 / math.sqrt(per_head)
    qkv = matmul(x, w.qkv_weight) + w.qkv_bias
    outs = []
    scores = [] if want_scores else None
    for h in range(w.heads):
        off = h * per_head
        q = slice_cols(qkv, off, off + per_head)
        k = slice_cols(qkv, d + off, d + off + per_head)
        v = slice_cols(qkv, 2 * d + off, 2 * d + off + per_head)
        s = softmax_rows(matmul(q, transpose(k)) * scale)
        if want_scores:
            scores.append(s)
        outs.append(matmul(s, v))
    out = matmul(concat_cols(outs), w.proj_weight) + w.proj_bias
    return out, scores


def _merge_groups(parts, groups) -> Tensor:
    stacked = concat_rows(parts)
    perm = np.concatenate(groups)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return take_rows(stacked, inverse)


def _block_rows(x: Tensor, w: BlockWeights, groups, want_scores: bool):
    """Pre-norm block over flat tokens; groups lists each window's row
    indices, or [None] for attention over all rows at once."""
    normed = layernorm(x, w.ln1_gamma, w.ln1_beta)
    parts = []
    scores = [] if want_scores else None
    for idx in groups:
        piece = normed if idx is None else take_rows(normed, idx)
        out, s = _attend_rows(piece, w, want_scores)
        parts.append(out)
        if want_scores:
            scores.append(s)
    if len(groups) == 1 and groups[0] is None:
        attended = parts[0]
    else:
        attended = _merge_groups(parts, groups)
    x = x + attended
    z = layernorm(x, w.ln2_gamma, w.ln2_beta)
    inner = gelu(matmul(z, w.ffn1_weight) + w.ffn1_bias)
    x = x + (matmul(inner, w.ffn2_weight) + w.ffn2_bias)
    return x, scores


def mhsa(tokens: TokenGrid, w: BlockWeights, layout: WindowLayout):
    """Windowed multi-head self-attention over a token grid.

    Returns the attended grid (after the output projection) and the
    post-softmax score matrices, as a list over windows of lists over heads.
    """
    if tokens.d != w.hidden:
        raise DimensionError(f"tokens have d={tokens.d}, weights have d={w.hidden}")
    groups = window_row_indices(layout)
    if (layout.grid_h, layout.grid_w) != (tokens.h, tokens.w):
        raise DimensionError(
            f"layout grid {layout.grid_h}x{layout.grid_w} does not match "
            f"tokens {tokens.h}x{tokens.w}")
    flat = tokens.rows()
    parts = []
    scores = []
    for idx in groups:
        out, s = _attend_rows(take_rows(flat, idx), w, True)
        parts.append(out)
        scores.append(s)
    merged = _merge_groups(parts, groups)
    grid = TokenGrid(tokens.h, tokens.w, tokens.d,
                     reshape(merged, (tokens.h, tokens.w, tokens.d)))
    return grid, scores


def encoder_block(tokens: TokenGrid, w: BlockWeights, layout: WindowLayout) -> TokenGrid:
    """One pre-norm residual block: x + mhsa(ln1(x)), then x + ffn(ln2(x))."""
    if (layout.grid_h, layout.grid_w) != (tokens.h, tokens.w):
        raise DimensionError(
            f"layout grid {layout.grid_h}x{layout.grid_w} does not match "
            f"tokens {tokens.h}x{tokens.w}")
    groups = window_row_indices(layout)
    out, _ = _block_rows(tokens.rows(), w, groups, False)
    return TokenGrid(tokens.h, tokens.w, tokens.d,
                     reshape(out, (tokens.h, tokens.w, tokens.d)))


@dataclass(frozen=True)
class FeatureOutput:
    """Forward-pass result: token grids in dense mode (one per tap, or the
    single final grid), logits in classification mode."""

    grids: tuple = ()
    logits: Optional[Tensor] = None
    scores: Optional[list] = None


def _block_weights(ws: WeightSet, index: int, heads: int) -> BlockWeights:
    prefix = f"block.{index}"
    return BlockWeights(
        ln1_gamma=ws[f"{prefix}.ln1.gamma"], ln1_beta=ws[f"{prefix}.ln1.beta"],
        qkv_weight=ws[f"{prefix}.qkv.weight"], qkv_bias=ws[f"{prefix}.qkv.bias"],
        proj_weight=ws[f"{prefix}.proj.weight"], proj_bias=ws[f"{prefix}.proj.bias"],
        ln2_gamma=ws[f"{prefix}.ln2.gamma"], ln2_beta=ws[f"{prefix}.ln2.beta"],
        ffn1_weight=ws[f"{prefix}.ffn1.weight"], ffn1_bias=ws[f"{prefix}.ffn1.bias"],
        ffn2_weight=ws[f"{prefix}.ffn2.weight"], ffn2_bias=ws[f"{prefix}.ffn2.bias"],
        heads=heads)


def _strided_merge_index(g: int) -> np.ndarray:
    """Row order that lines up each 2x2 token group as four consecutive rows."""
    half = g // 2
    r = np.arange(half)[:, None] * 2
    c = np.arange(half)[None, :] * 2
    top_left = (r * g + c).ravel()
    offsets = np.array([0, 1, g, g + 1])
    return (top_left[:, None] + offsets[None, :]).ravel()


def forward(cfg, ws: WeightSet, image: Tensor, collect_scores: bool = False) -> FeatureOutput:
    """Run the full encoder described by cfg over one image.

    Dense mode returns one TokenGrid per output tap (a single 1/8-scale grid
    for the flagless presets); classification mode returns 1000 logits taken
    from the class token after the final layernorm. Intermediate taps are
    emitted before the final layernorm, which is applied to the last stage
    only. Pass collect_scores=True to also return every block's post-softmax
    attention matrices (memory-heavy at large grids).
    """
    validate_weights(cfg, ws)
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if len(image.dims) != 3 or image.dims[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {image.dims}")
    if image.dims[0] != cfg.input or image.dims[1] != cfg.input:
        raise ConfigError(
            f"config expects {cfg.input}x{cfg.input} input, got "
            f"{image.dims[0]}x{image.dims[1]}")

    d0 = cfg.stages[0].hidden
    ew = EmbedWeights(
        kernel=ws["embed.kernel"], bias=ws["embed.bias"], pos=ws["embed.pos"],
        cls=ws["embed.cls"] if "embed.cls" in ws else None,
        cls_pos=ws["embed.cls_pos"] if "embed.cls_pos" in ws else None)
    grid = patch_embed(image, ew, cfg.patch)
    all_scores = [] if collect_scores else None

    if cfg.mode == "classification":
        cls_row = reshape(ew.cls + ew.cls_pos, (1, d0))
        x = concat_rows([cls_row, grid.rows()])
        for index in range(cfg.depth):
            x, s = _block_rows(x, _block_weights(ws, index, cfg.heads), [None],
                               collect_scores)
            if collect_scores:
                all_scores.append(s)
        x = layernorm(x, ws["final_ln.gamma"], ws["final_ln.beta"])
        cls_out = take_rows(x, np.array([0]))
        logits = matmul(cls_out, ws["head.weight"]) + ws["head.bias"]
        return FeatureOutput(logits=reshape(logits, (1000,)), scores=all_scores)

    x = grid.rows()
    taps = []
    transitions = cfg.transitions()
    block_index = 0
    for si, stage in enumerate(cfg.stages):
        g = cfg.grid_extent(si)
        d = stage.hidden
        if cfg.strategy is not None:
            layouts = bind_strategy(cfg.strategy, stage.depth, g, g)
        else:
            layouts = [plan_windows(g, g, stage.window_scale)] * stage.depth
        for layout in layouts:
            groups = window_row_indices(layout)
            x, s = _block_rows(x, _block_weights(ws, block_index, cfg.heads),
                               groups, collect_scores)
            if collect_scores:
                all_scores.append(s)
            block_index += 1
        last = si == len(cfg.stages) - 1
        if last:
            x = layernorm(x, ws["final_ln.gamma"], ws["final_ln.beta"])
        if stage.output_tap is not None or last:
            tap_extent = (cfg.tap_extent(si)
                          if stage.output_tap is not None else g)
            if tap_extent == g:
                taps.append(TokenGrid(g, g, d, reshape(x, (g, g, d))))
            else:
                resized = bilinear_resize(reshape(x, (g, g, d)),
                                          tap_extent, tap_extent)
                taps.append(TokenGrid(tap_extent, tap_extent, d, resized))
        if not last:
            kind = transitions[si].kind
            g_next = cfg.grid_extent(si + 1)
            d_next = cfg.stages[si + 1].hidden
            if kind == "width-projection":
                x = matmul(x, ws[f"transition.{si}.weight"]) + ws[f"transition.{si}.bias"]
            elif kind == "bilinear-merge":
                x = reshape(bilinear_resize(reshape(x, (g, g, d)), g_next, g_next),
                            (g_next * g_next, d))
            elif kind == "strided-projection":
                merged = reshape(take_rows(x, _strided_merge_index(g)),
                                 (g_next * g_next, 4 * d))
                x = matmul(merged, ws[f"transition.{si}.weight"]) + ws[f"transition.{si}.bias"]
            # kind "none": tokens flow through unchanged
    return FeatureOutput(grids=tuple(taps), scores=all_scores)
