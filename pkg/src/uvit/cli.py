"""Command-line front end.

Subcommands: presets, cost, ablation-table, scaling-table, window
(validate/canonicalize), forward, rf. Tables land in files (CSV or JSON);
results are deterministic given argv and seed. Exit codes: 0 success,
1 usage error, 2 contract or validation error. Outputs are computed in full
before the output file is opened, so failing runs write nothing.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys

import numpy as np

from .analysis import (layer_rf_summary, read_scores_csv, write_rf_long_csv,
                       write_rf_summary_csv)
from .blocks import forward
from .costs import cost_row, count_flops, count_params, write_cost_csv
from .errors import UViTError
from .factory import (PRESET_NAMES, ablation_grid_configs, config_to_dict,
                      init_weights, load_config, override_input, preset,
                      scaling_grid_configs)
from .tensor import Tensor
from .weights import WeightSet
from .windows import bind_strategy, format_strategy, parse_strategy, plan_windows


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_source(sub):
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help=f"one of: {', '.join(PRESET_NAMES)}")
    group.add_argument("--config", help="path to an ArchConfig JSON file")


def _resolve_config(args):
    cfg = preset(args.preset) if args.preset else load_config(args.config)
    if getattr(args, "input", None):
        cfg = override_input(cfg, args.input)
    return cfg


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _format_for(path, explicit):
    if explicit:
        return explicit
    return "json" if str(path).lower().endswith(".json") else "csv"


def _cmd_presets(args) -> int:
    names = [n for n in PRESET_NAMES]
    if _format_for(args.output, args.format) == "json":
        payload = []
        for name in names:
            cfg = preset(name)
            payload.append({
                "config": config_to_dict(cfg),
                "params": count_params(cfg).params,
                "gmacs": count_flops(cfg).gmacs,
            })
        _write_json(args.output, payload)
    else:
        write_cost_csv(args.output, [(preset(name), None) for name in names])
    return 0


def _cmd_cost(args) -> int:
    cfg = _resolve_config(args)
    input_size = args.input or cfg.input
    if _format_for(args.output, args.format) == "json":
        params = count_params(cfg)
        flops = count_flops(cfg, input_size)
        _write_json(args.output, {
            "config": config_to_dict(cfg),
            "input": input_size,
            "params": params.params,
            "param_breakdown": params.param_breakdown,
            "macs": flops.macs,
            "gmacs": flops.gmacs,
            "mac_breakdown": flops.mac_breakdown,
        })
    else:
        write_cost_csv(args.output, [(cfg, input_size)])
    return 0


_ABLATION_COLUMNS = ("sd", "mf", "two_x", "input_scales", "depths",
                     "window_scales", "hiddens", "output_scales",
                     "params", "gmacs")


def _cmd_ablation_table(args) -> int:
    rows = []
    for cfg in ablation_grid_configs():
        outputs = [str(s.output_tap if s.output_tap is not None else s.input_scale)
                   for s in cfg.stages]
        rows.append({
            "sd": int(cfg.sd), "mf": int(cfg.mf), "two_x": int(cfg.two_x),
            "input_scales": "/".join(str(s.input_scale) for s in cfg.stages),
            "depths": "/".join(str(s.depth) for s in cfg.stages),
            "window_scales": "/".join(str(s.window_scale) for s in cfg.stages),
            "hiddens": "/".join(str(s.hidden) for s in cfg.stages),
            "output_scales": "/".join(outputs),
            "params": count_params(cfg).params,
            "gmacs": f"{count_flops(cfg).gmacs:.6f}",
        })
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return 0


def _cmd_scaling_table(args) -> int:
    write_cost_csv(args.output, [(cfg, None) for cfg in scaling_grid_configs()])
    return 0


def _cmd_window(args) -> int:
    strategy = parse_strategy(args.strategy)
    if args.action == "canonicalize":
        print(format_strategy(strategy))
        return 0
    if args.depth is not None and args.grid:
        h, w = _parse_grid(args.grid)
        bind_strategy(strategy, args.depth, h, w)
    elif args.depth is not None:
        if strategy.depth() != args.depth:
            raise UViTError(
                f"strategy covers {strategy.depth()} blocks, expected {args.depth}")
    elif args.grid:
        h, w = _parse_grid(args.grid)
        for scale, _ in strategy.phases:
            plan_windows(h, w, scale)
    print(f"ok: {format_strategy(strategy)} ({strategy.depth()} blocks)")
    return 0


def _parse_grid(text: str):
    parts = text.lower().split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise _UsageError(f"--grid expects HxW, got {text!r}") from None
    return h, w


def _checksum(t: Tensor) -> str:
    return hashlib.sha256(np.ascontiguousarray(t.data, dtype="<f8").tobytes()).hexdigest()


def _cmd_forward(args) -> int:
    cfg = _resolve_config(args)
    if args.weights:
        ws = WeightSet.load(args.weights)
    else:
        ws = init_weights(cfg, args.seed)
    image_rng = np.random.default_rng((args.seed, 1))
    image = Tensor(image_rng.random((cfg.input, cfg.input, 3)))
    result = forward(cfg, ws, image)
    outputs = []
    if cfg.mode == "classification":
        outputs.append(("logits", result.logits))
    else:
        for si, grid in enumerate(result.grids):
            stage = cfg.stages[si] if cfg.mf else cfg.stages[-1]
            scale = stage.output_tap if stage.output_tap is not None else stage.input_scale
            outputs.append((f"features_{scale.numerator}_{scale.denominator}",
                            grid.values))
    payload = {
        "config": config_to_dict(cfg),
        "input": cfg.input,
        "seed": args.seed,
        "outputs": [
            {"name": name, "dims": list(t.dims), "sha256": _checksum(t),
             "sum": float(t.data.sum())}
            for name, t in outputs
        ],
    }
    if args.save_weights:
        ws.save(args.save_weights)
    _write_json(args.output, payload)
    return 0


def _cmd_rf(args) -> int:
    records, layers = read_scores_csv(args.scores)
    summary = layer_rf_summary(records, layers)
    write_rf_summary_csv(args.output, summary)
    if args.per_head:
        write_rf_long_csv(args.per_head, summary)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="uvit", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    p = subs.add_parser("presets", help="emit the built-in preset table")
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(handler=_cmd_presets)

    p = subs.add_parser("cost", help="emit a cost report for one config")
    _add_config_source(p)
    p.add_argument("--input", type=int, help="input size (defaults to the config's)")
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(handler=_cmd_cost)

    p = subs.add_parser("ablation-table",
                        help="emit costs for the SD/MF/2x design grid")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_ablation_table)

    p = subs.add_parser("scaling-table",
                        help="emit costs for the compound-scaling sweep")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_scaling_table)

    p = subs.add_parser("window", help="window-strategy tools")
    p.add_argument("action", choices=("validate", "canonicalize"))
    p.add_argument("--strategy", required=True)
    p.add_argument("--depth", type=int)
    p.add_argument("--grid", help="token grid as HxW")
    p.set_defaults(handler=_cmd_window)

    p = subs.add_parser("forward", help="run a deterministic forward pass")
    _add_config_source(p)
    p.add_argument("--input", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", help="load weights from this container")
    p.add_argument("--save-weights", help="also save the weights used")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_forward)

    p = subs.add_parser("rf", help="summarize relative receptive fields")
    p.add_argument("--scores", required=True,
                   help="long-form CSV: layer,head,i,j,score[,window]")
    p.add_argument("--output", required=True)
    p.add_argument("--per-head", help="also write per-head values here")
    p.set_defaults(handler=_cmd_rf)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except UViTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
