"""Architecture construction: presets, ablation families, scaling grids, init.

An ArchConfig fully determines the encoder: mode, patch size, input size,
stage layout, window strategy, and the SD/MF/2x design flags. Constructors
here build every configuration the package models; init_weights materializes
a deterministic WeightSet for any of them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigError
from .tensor import Tensor
from .weights import WeightSet, weight_shapes
from .windows import WindowStrategy, format_strategy, parse_strategy

EIGHTH = Fraction(1, 8)
SIXTEENTH = Fraction(1, 16)
THIRTY_SECOND = Fraction(1, 32)

_SD_SCALES = (EIGHTH, SIXTEENTH, THIRTY_SECOND)
_TAP_SCALES = (EIGHTH, SIXTEENTH, THIRTY_SECOND)

TRANSITION_KINDS = ("strided-projection", "bilinear-merge", "width-projection", "none")


def _fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise ConfigError(f"cannot interpret {value!r} as an exact scale")


@dataclass(frozen=True)
class StageSpec:
    """One encoder stage: depth blocks at one hidden size and resolution."""

    depth: int
    hidden: int
    input_scale: Fraction
    window_scale: Optional[Fraction] = None
    output_tap: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, "input_scale", _fraction(self.input_scale))
        if self.window_scale is not None:
            object.__setattr__(self, "window_scale", _fraction(self.window_scale))
        if self.output_tap is not None:
            object.__setattr__(self, "output_tap", _fraction(self.output_tap))
        if self.depth < 0:
            raise ConfigError(f"stage depth must be >= 0, got {self.depth}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be >= 1, got {self.hidden}")


@dataclass(frozen=True)
class TransitionSpec:
    """How tokens move between consecutive stages."""

    kind: str

    def __post_init__(self):
        if self.kind not in TRANSITION_KINDS:
            raise ConfigError(f"unknown transition kind {self.kind!r}")


@dataclass(frozen=True)
class ArchConfig:
    mode: str
    patch: int
    input: int
    sd: bool = False
    mf: bool = False
    two_x: bool = False
    stages: tuple = ()
    strategy: Optional[WindowStrategy] = None
    heads: int = 6
    ffn_ratio: int = 4
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.mode not in ("classification", "dense"):
            raise ConfigError(f"mode must be classification or dense, got {self.mode!r}")
        if self.patch < 1 or self.input < self.patch or self.input % self.patch:
            raise ConfigError(
                f"input {self.input} must be a positive multiple of patch {self.patch}")
        if self.ffn_ratio != 4:
            raise ConfigError(f"FFN expansion ratio is fixed at 4, got {self.ffn_ratio}")
        if not self.stages:
            raise ConfigError("config needs at least one stage")
        flagged = self.sd or self.mf or self.two_x
        if flagged and len(self.stages) != 3:
            raise ConfigError("SD/MF/2x configs use exactly three stages")
        if not flagged and len(self.stages) != 1:
            raise ConfigError("flagless configs use exactly one stage")
        if self.mode == "classification":
            if flagged:
                raise ConfigError("classification mode supports no design flags")
            if self.strategy is not None:
                raise ConfigError("classification mode attends globally; no strategy")
        if self.stages[0].input_scale != Fraction(1, self.patch):
            raise ConfigError(
                f"first stage input scale {self.stages[0].input_scale} must equal "
                f"1/{self.patch} (one token per patch)")
        scales = tuple(s.input_scale for s in self.stages)
        if self.sd:
            if scales != _SD_SCALES:
                raise ConfigError(f"SD stages run at scales 1/8, 1/16, 1/32; got {scales}")
        elif any(sc != scales[0] for sc in scales):
            raise ConfigError(f"without SD the input scale is constant; got {scales}")
        hiddens = tuple(s.hidden for s in self.stages)
        if self.two_x:
            base = hiddens[0]
            if hiddens != (base, 2 * base, 4 * base):
                raise ConfigError(f"2x stages double the width: expected "
                                  f"{(base, 2 * base, 4 * base)}, got {hiddens}")
        elif any(h != hiddens[0] for h in hiddens):
            raise ConfigError(f"without 2x the hidden size is constant; got {hiddens}")
        taps = tuple(s.output_tap for s in self.stages)
        if self.mf:
            if taps != _TAP_SCALES:
                raise ConfigError(f"MF taps target scales 1/8, 1/16, 1/32; got {taps}")
        elif any(t is not None for t in taps):
            raise ConfigError("output taps exist only under the MF flag")
        for h in hiddens:
            if h % self.heads:
                raise ConfigError(f"hidden size {h} not divisible by {self.heads} heads")
        if self.strategy is not None:
            if len(self.stages) != 1:
                raise ConfigError("a whole-model strategy needs a single-stage config")
            if any(s.window_scale is not None for s in self.stages):
                raise ConfigError("strategy and per-stage window scales are exclusive")
            if self.strategy.depth() != self.depth:
                raise ConfigError(
                    f"strategy covers {self.strategy.depth()} blocks, "
                    f"config has {self.depth}")
        elif self.mode == "dense":
            for i, s in enumerate(self.stages):
                if s.depth > 0 and s.window_scale is None:
                    raise ConfigError(f"stage {i} needs a window scale (or use a strategy)")
        for i, s in enumerate(self.stages):
            extent = self.input * s.input_scale
            if extent.denominator != 1 or extent < 1:
                raise ConfigError(
                    f"stage {i}: input {self.input} at scale {s.input_scale} gives "
                    f"non-integer grid extent {extent}")
            if s.output_tap is not None:
                tap = self.input * s.output_tap
                if tap.denominator != 1 or tap < 1:
                    raise ConfigError(
                        f"stage {i}: tap scale {s.output_tap} gives non-integer "
                        f"extent {tap} for input {self.input}")
            if self.strategy is not None:
                window_scales = set(self.strategy.block_scales())
            elif s.window_scale is not None and s.depth > 0:
                window_scales = {s.window_scale}
            else:
                window_scales = set()
            for ws in window_scales:
                win = extent * ws
                if win.denominator != 1 or win < 1:
                    raise ConfigError(
                        f"stage {i}: window scale {ws} does not tile the "
                        f"{extent}x{extent} token grid")

    @property
    def depth(self) -> int:
        return sum(s.depth for s in self.stages)

    def grid_extent(self, stage_index: int) -> int:
        return int(self.input * self.stages[stage_index].input_scale)

    def tap_extent(self, stage_index: int) -> int:
        return int(self.input * self.stages[stage_index].output_tap)

    def transitions(self) -> tuple:
        if self.sd and self.two_x:
            kind = "strided-projection"
        elif self.sd:
            kind = "bilinear-merge"
        elif self.two_x:
            kind = "width-projection"
        else:
            kind = "none"
        return tuple(TransitionSpec(kind) for _ in range(len(self.stages) - 1))

    def strategy_text(self) -> str:
        """Canonical window notation: the bound strategy, or the per-stage
        scales written as one phase per stage."""
        if self.strategy is not None:
            return format_strategy(self.strategy)
        phases = [(s.window_scale, s.depth) for s in self.stages
                  if s.depth > 0 and s.window_scale is not None]
        if not phases:
            return ""
        return format_strategy(WindowStrategy(tuple(phases)))


def _scale_str(scale: Optional[Fraction]) -> Optional[str]:
    return None if scale is None else str(scale)


def config_to_dict(cfg: ArchConfig) -> dict:
    return {
        "name": cfg.name,
        "mode": cfg.mode,
        "patch": cfg.patch,
        "input": cfg.input,
        "flags": {"sd": cfg.sd, "mf": cfg.mf, "two_x": cfg.two_x},
        "heads": cfg.heads,
        "ffn_ratio": cfg.ffn_ratio,
        "strategy": format_strategy(cfg.strategy) if cfg.strategy else None,
        "stages": [
            {
                "depth": s.depth,
                "hidden": s.hidden,
                "input_scale": str(s.input_scale),
                "window_scale": _scale_str(s.window_scale),
                "output_tap": _scale_str(s.output_tap),
            }
            for s in cfg.stages
        ],
    }


def config_from_dict(data: dict) -> ArchConfig:
    try:
        flags = data.get("flags", {})
        stages = tuple(
            StageSpec(
                depth=int(s["depth"]),
                hidden=int(s["hidden"]),
                input_scale=_fraction(s["input_scale"]),
                window_scale=(None if s.get("window_scale") is None
                              else _fraction(s["window_scale"])),
                output_tap=(None if s.get("output_tap") is None
                            else _fraction(s["output_tap"])),
            )
            for s in data["stages"]
        )
        strategy = data.get("strategy")
        return ArchConfig(
            mode=data["mode"],
            patch=int(data["patch"]),
            input=int(data["input"]),
            sd=bool(flags.get("sd", False)),
            mf=bool(flags.get("mf", False)),
            two_x=bool(flags.get("two_x", False)),
            stages=stages,
            strategy=parse_strategy(strategy) if strategy else None,
            heads=int(data.get("heads", 6)),
            ffn_ratio=int(data.get("ffn_ratio", 4)),
            name=str(data.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path) -> ArchConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


_PRESET_HIDDEN = {"t": 222, "s": 288, "b": 384}
_DEPTH = 18
_BASE_STRATEGY = "[2^-1]x18"
_PLUS_STRATEGY = "[4^-1]x14 -> [2^-1]x2 -> [1]x2"

PRESET_NAMES = tuple(
    f"uvit-{size}-{kind}"
    for size in ("t", "s", "b")
    for kind in ("cls", "dense", "dense-plus")
)


def preset(name: str) -> ArchConfig:
    """A named built-in configuration.

    uvit-{t,s,b}-cls: classification at 224, patch 16, global attention.
    uvit-{t,s,b}-dense: dense features at 896, patch 8, strategy [2^-1]x18.
    uvit-{t,s,b}-dense-plus: the progressive-window "+" variant,
    [4^-1]x14 -> [2^-1]x2 -> [1]x2.
    """
    key = name.strip().lower().replace("_", "-")
    key = key.replace("-classification", "-cls")
    parts = key.split("-")
    if len(parts) >= 2 and parts[0] == "uvit" and parts[1] in _PRESET_HIDDEN:
        hidden = _PRESET_HIDDEN[parts[1]]
        kind = "-".join(parts[2:])
        if kind == "cls":
            return ArchConfig(
                mode="classification", patch=16, input=224,
                stages=(StageSpec(_DEPTH, hidden, SIXTEENTH),), name=key)
        if kind in ("dense", "dense-plus"):
            text = _PLUS_STRATEGY if kind == "dense-plus" else _BASE_STRATEGY
            return ArchConfig(
                mode="dense", patch=8, input=896,
                stages=(StageSpec(_DEPTH, hidden, EIGHTH),),
                strategy=parse_strategy(text), name=key)
    raise ConfigError(f"unknown preset {name!r}; known presets: {', '.join(PRESET_NAMES)}")


def _triple(value, what: str, flagged: bool):
    if isinstance(value, (list, tuple)):
        if len(value) != 3:
            raise ConfigError(f"{what} must have three entries for staged configs, "
                              f"got {len(value)}")
        return tuple(value)
    if flagged:
        return (value, value, value)
    return (value,)


def _pick_heads(hiddens) -> int:
    for heads in (6, 8, 4, 2, 1):
        if all(h % heads == 0 for h in hiddens):
            return heads
    return 1


def ablation_config(sd: bool = False, mf: bool = False, two_x: bool = False, *,
                    depths, hidden, window_scales,
                    input_size: int = 640, patch: int = 8,
                    name: str = "") -> ArchConfig:
    """A dense config from the SD/MF/2x design space.

    With any flag set, `depths` must split the network into three stages;
    `hidden` is either a base width (doubled per stage under 2x) or an
    explicit triple; `window_scales` is one scale or a per-stage triple.
    """
    flagged = sd or mf or two_x
    if flagged and not isinstance(depths, (list, tuple)):
        raise ConfigError("depth split must cover three stages when a flag is set")
    depth_split = _triple(depths, "depth split", flagged)
    if isinstance(hidden, (list, tuple)):
        hiddens = _triple(hidden, "hidden sizes", flagged)
    elif two_x:
        hiddens = (hidden, 2 * hidden, 4 * hidden)
    else:
        hiddens = tuple(hidden for _ in depth_split)
    scales = _triple(window_scales, "window scales", flagged)
    scales = tuple(_fraction(s) for s in scales)
    n = len(depth_split)
    if not (len(hiddens) == len(scales) == n):
        raise ConfigError("depths, hiddens, and window scales disagree on stage count")
    input_scales = _SD_SCALES if sd else tuple(Fraction(1, patch) for _ in range(n))
    taps = _TAP_SCALES if mf else tuple(None for _ in range(n))
    stages = tuple(
        StageSpec(depth=depth_split[i], hidden=hiddens[i],
                  input_scale=input_scales[i], window_scale=scales[i],
                  output_tap=taps[i])
        for i in range(n)
    )
    if not name:
        flag_text = "+".join(t for t, on in
                             (("sd", sd), ("mf", mf), ("2x", two_x)) if on) or "vanilla"
        scale_text = "/".join(str(s) for s in dict.fromkeys(scales))
        name = (f"{flag_text}-d{'.'.join(str(d) for d in depth_split)}"
                f"-w{hiddens[0]}-win{scale_text}")
    return ArchConfig(
        mode="dense", patch=patch, input=input_size, sd=sd, mf=mf, two_x=two_x,
        stages=stages, heads=_pick_heads(hiddens), name=name)


def enumerate_scaling(depths, input_sizes, widths) -> list:
    """Single-stage dense configs over the Cartesian product of the given
    depths, input sizes, and widths, all with half-scale attention windows."""
    configs = []
    for width in sorted(set(widths)):
        if width % 6:
            raise ConfigError(f"width {width} not divisible by 6 heads")
    for depth in sorted(set(depths)):
        for input_size in sorted(set(input_sizes)):
            for width in sorted(set(widths)):
                strategy = WindowStrategy(((Fraction(1, 2), depth),))
                configs.append(ArchConfig(
                    mode="dense", patch=8, input=input_size,
                    stages=(StageSpec(depth, width, EIGHTH),),
                    strategy=strategy,
                    name=f"d{depth}-w{width}-i{input_size}"))
    return configs


# The eight-family design grid studied at 640x640 input: every combination of
# SD/MF/2x with its depth splits, widths, and window scales.
ABLATION_GRID = tuple(
    [{"sd": False, "mf": False, "two_x": False, "depths": 18, "hidden": 384,
      "window_scales": ws}
     for ws in (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2),
                Fraction(1))]
    + [{"sd": True, "mf": False, "two_x": False, "depths": split, "hidden": 384,
        "window_scales": Fraction(1)}
       for split in ((6, 6, 6), (8, 5, 5), (10, 4, 4), (12, 3, 3), (14, 2, 2))]
    + [{"sd": False, "mf": True, "two_x": False, "depths": (6, 6, 6), "hidden": 384,
        "window_scales": ws}
       for ws in (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2),
                  Fraction(1))]
    + [{"sd": False, "mf": False, "two_x": True, "depths": (6, 6, 6), "hidden": 152,
        "window_scales": ws}
       for ws in (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2),
                  Fraction(1))]
    + [{"sd": True, "mf": True, "two_x": False, "depths": split, "hidden": 384,
        "window_scales": Fraction(1)}
       for split in ((2, 8, 8), (4, 7, 7), (6, 6, 6), (8, 5, 5), (10, 4, 4),
                     (12, 3, 3), (15, 2, 1))]
    + [{"sd": True, "mf": False, "two_x": True, "depths": (16, 1, tail),
        "hidden": base, "window_scales": Fraction(1)}
       for tail, base in ((9, 128), (5, 160), (3, 192), (2, 224), (1, 256))]
    + [{"sd": False, "mf": True, "two_x": True, "depths": (6, 6, 6), "hidden": 152,
        "window_scales": ws}
       for ws in (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2))]
    + [{"sd": True, "mf": True, "two_x": True, "depths": (16, 1, tail),
        "hidden": base, "window_scales": Fraction(1)}
       for tail, base in ((9, 128), (5, 160), (3, 192), (2, 224), (1, 256))]
    + [{"sd": True, "mf": True, "two_x": True, "depths": (28, 1, 1), "hidden": 224,
        "window_scales": Fraction(1)}]
)

# The compound-scaling sweep: (input size, depth, widths) groups, all
# single-stage dense with half-scale windows.
SCALING_GRID = (
    (640, 18, (384, 432, 462, 492, 564)),
    (768, 18, (288, 306, 330, 384, 432, 462)),
    (896, 18, (186, 222, 246, 288, 330, 384)),
    (1024, 18, (120, 132, 144, 162, 198, 246, 288)),
    (896, 12, (276, 300, 324, 360, 390)),
    (896, 24, (156, 180, 192, 258, 294)),
    (896, 32, (120, 132, 144, 180, 240)),
    (896, 40, (96, 102, 114, 126, 150, 156)),
)


def ablation_grid_configs() -> list:
    return [ablation_config(**row) for row in ABLATION_GRID]


def scaling_grid_configs() -> list:
    configs = []
    for input_size, depth, widths in SCALING_GRID:
        configs.extend(enumerate_scaling({depth}, {input_size}, widths))
    return configs


def _truncated_normal(rng: np.random.Generator, dims, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with draws beyond two deviations resampled."""
    size = int(np.prod(dims)) if dims else 1
    x = rng.standard_normal(size)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (std * x).reshape(dims)


def init_weights(cfg: ArchConfig, seed: int, trainable: bool = False) -> WeightSet:
    """Deterministic weights for a config: truncated-normal (sigma 0.02) for
    projection weights and embeddings, ones for layernorm gammas, zeros for
    biases and betas. The same seed always yields bit-identical tensors."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for tensor_name, dims in weight_shapes(cfg):
        leaf = tensor_name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(dims)
        elif leaf in ("beta", "bias"):
            data = np.zeros(dims)
        else:
            data = _truncated_normal(rng, dims)
        tensors[tensor_name] = Tensor(data, requires_grad=trainable)
    return WeightSet(tensors)


def override_input(cfg: ArchConfig, input_size: int) -> ArchConfig:
    """The same architecture at a different input resolution."""
    if input_size == cfg.input:
        return cfg
    return replace(cfg, input=input_size)
