"""Attention-window strategies: notation, tilings, and token movement.

A strategy is written as phases joined by "->", each phase "[S]xN" meaning N
consecutive blocks attend inside windows whose side is S times the token-grid
side. S is "1" (global) or "K^-1" (side divided by K). The parser also
accepts the typeset variants of the same notation (arrows, multiplication
signs, superscript minus-one).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BindingError, DimensionError, DivisibilityError, ParseError
from .tensor import Tensor, concat_rows, reshape, take_rows

ALLOWED_SCALES = (
    Fraction(1, 16), Fraction(1, 8), Fraction(1, 4),
    Fraction(1, 3), Fraction(1, 2), Fraction(1),
)


def _scale_text(scale: Fraction) -> str:
    return "1" if scale == 1 else f"{scale.denominator}^-1"


@dataclass(frozen=True)
class WindowStrategy:
    """An ordered tuple of (scale, block count) phases."""

    phases: tuple

    def __post_init__(self):
        phases = tuple((Fraction(s), int(n)) for s, n in self.phases)
        object.__setattr__(self, "phases", phases)
        if not phases:
            raise ParseError("strategy needs at least one phase", 0)
        for scale, count in phases:
            if scale not in ALLOWED_SCALES:
                raise ParseError(f"scale {scale} not in allowed set "
                                 f"{[str(s) for s in ALLOWED_SCALES]}", 0)
            if count < 1:
                raise ParseError(f"phase count must be >= 1, got {count}", 0)

    def depth(self) -> int:
        return sum(count for _, count in self.phases)

    def block_scales(self) -> tuple:
        """Window scale of every block, in order."""
        out = []
        for scale, count in self.phases:
            out.extend([scale] * count)
        return tuple(out)


_SUBS = {
    "→": "->",   # arrow
    "⟶": "->",
    "×": "x",    # multiplication sign
    "⋅": "x",
    "⁻": "^-",   # superscript minus
    "¹": "1", "²": "2", "³": "3",
    "⁰": "0", "⁴": "4", "⁵": "5", "⁶": "6",
    "⁷": "7", "⁸": "8", "⁹": "9",
}


def _normalize(text: str) -> str:
    return "".join(_SUBS.get(ch, ch) for ch in text)


def parse_strategy(text: str) -> WindowStrategy:
    """Parse strategy notation into a WindowStrategy.

    Raises ParseError (with the character position in the normalized text)
    for malformed input, unknown scales, or zero counts.
    """
    s = _normalize(text)
    n = len(s)
    i = 0

    def skip_ws():
        nonlocal i
        while i < n and s[i].isspace():
            i += 1

    def expect(token: str):
        nonlocal i
        if not s.startswith(token, i):
            found = s[i] if i < n else "end of input"
            raise ParseError(f"expected {token!r}, found {found!r}", i)
        i += len(token)

    def read_int(what: str) -> int:
        nonlocal i
        start = i
        while i < n and s[i].isdigit():
            i += 1
        if i == start:
            found = s[i] if i < n else "end of input"
            raise ParseError(f"expected {what}, found {found!r}", i)
        return int(s[start:i])

    phases = []
    while True:
        skip_ws()
        expect("[")
        skip_ws()
        scale_pos = i
        base = read_int("a scale")
        skip_ws()
        if s.startswith("^", i):
            expect("^")
            skip_ws()
            expect("-")
            skip_ws()
            one_pos = i
            if read_int("exponent 1") != 1:
                raise ParseError("only the exponent -1 is supported", one_pos)
            scale = Fraction(1, base)
        else:
            if base != 1:
                raise ParseError(f"bare scale must be 1, got {base} "
                                 "(write K^-1 for fractions)", scale_pos)
            scale = Fraction(1)
        if scale not in ALLOWED_SCALES:
            raise ParseError(
                f"scale {_scale_text(scale)} not in allowed set "
                f"{{{', '.join(_scale_text(a) for a in ALLOWED_SCALES)}}}", scale_pos)
        skip_ws()
        expect("]")
        skip_ws()
        expect("x")
        skip_ws()
        count_pos = i
        count = read_int("a block count")
        if count < 1:
            raise ParseError(f"block count must be >= 1, got {count}", count_pos)
        phases.append((scale, count))
        skip_ws()
        if i >= n:
            break
        expect("->")
    return WindowStrategy(tuple(phases))


def format_strategy(strategy: WindowStrategy) -> str:
    """Canonical ASCII form: "[K^-1]xN -> ..."."""
    return " -> ".join(f"[{_scale_text(scale)}]x{count}"
                       for scale, count in strategy.phases)


@dataclass(frozen=True)
class WindowLayout:
    """A concrete tiling of a grid_h x grid_w token grid into equal windows."""

    grid_h: int
    grid_w: int
    win_h: int
    win_w: int

    def __post_init__(self):
        if min(self.grid_h, self.grid_w, self.win_h, self.win_w) < 1:
            raise DimensionError("layout extents must be >= 1")
        if self.grid_h % self.win_h or self.grid_w % self.win_w:
            raise DivisibilityError(
                f"window {self.win_h}x{self.win_w} does not tile "
                f"grid {self.grid_h}x{self.grid_w}")

    @property
    def rows(self) -> int:
        return self.grid_h // self.win_h

    @property
    def cols(self) -> int:
        return self.grid_w // self.win_w

    @property
    def n_windows(self) -> int:
        return self.rows * self.cols

    @property
    def tokens_per_window(self) -> int:
        return self.win_h * self.win_w


def plan_windows(grid_h: int, grid_w: int, scale: Fraction) -> WindowLayout:
    """Tile a token grid with windows of side scale * grid side.

    The scaled side must be a positive integer on both axes; otherwise a
    DivisibilityError names the offending grid and scale.
    """
    scale = Fraction(scale)
    if scale <= 0 or scale > 1:
        raise DivisibilityError(f"window scale must be in (0, 1], got {scale}")
    sides = []
    for extent in (grid_h, grid_w):
        side = extent * scale
        if side.denominator != 1 or side < 1:
            raise DivisibilityError(
                f"scale {scale} of grid side {extent} gives window side {side}, "
                "which is not a positive integer")
        sides.append(int(side))
    return WindowLayout(grid_h, grid_w, sides[0], sides[1])


def window_row_indices(layout: WindowLayout) -> list:
    """Flat token indices of each window, windows in row-major order and
    tokens row-major within a window."""
    base = (np.arange(layout.win_h)[:, None] * layout.grid_w
            + np.arange(layout.win_w)[None, :]).ravel()
    out = []
    for wr in range(layout.rows):
        for wc in range(layout.cols):
            out.append(base + wr * layout.win_h * layout.grid_w + wc * layout.win_w)
    return out


def window_partition(values: Tensor, layout: WindowLayout) -> list:
    """Split an h x w x d grid into per-window token matrices."""
    if len(values.dims) != 3:
        raise DimensionError(f"expected h x w x d values, got {values.dims}")
    h, w, d = values.dims
    if (h, w) != (layout.grid_h, layout.grid_w):
        raise DimensionError(
            f"values grid {h}x{w} does not match layout {layout.grid_h}x{layout.grid_w}")
    flat = reshape(values, (h * w, d))
    return [take_rows(flat, idx) for idx in window_row_indices(layout)]


def window_merge(parts, layout: WindowLayout) -> Tensor:
    """Inverse of window_partition: reassemble the h x w x d grid."""
    parts = list(parts)
    if len(parts) != layout.n_windows:
        raise DimensionError(
            f"expected {layout.n_windows} windows, got {len(parts)}")
    per = layout.tokens_per_window
    d = parts[0].dims[1] if len(parts[0].dims) == 2 else None
    for p in parts:
        if len(p.dims) != 2 or p.dims != (per, d):
            raise DimensionError(
                f"every window must be {per} x {d}, got {p.dims}")
    stacked = concat_rows(parts)
    perm = np.concatenate(window_row_indices(layout))
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    flat = take_rows(stacked, inverse)
    return reshape(flat, (layout.grid_h, layout.grid_w, d))


def bind_strategy(strategy: WindowStrategy, depth: int,
                  grid_h: int, grid_w: int) -> list:
    """Resolve a strategy against a model depth and token grid.

    Returns one WindowLayout per block. The phase counts must sum to `depth`
    and every scale must tile the grid; both failures raise BindingError.
    """
    if strategy.depth() != depth:
        raise BindingError(
            f"strategy covers {strategy.depth()} blocks, model has {depth}")
    layouts = []
    cache = {}
    for scale in strategy.block_scales():
        if scale not in cache:
            try:
                cache[scale] = plan_windows(grid_h, grid_w, scale)
            except DivisibilityError as exc:
                raise BindingError(str(exc)) from exc
        layouts.append(cache[scale])
    return layouts
