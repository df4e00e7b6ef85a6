"""Named weight containers and their on-disk format.

A WeightSet maps tensor names to Tensors in a fixed enumeration order. The
serialized form is a single little-endian binary file:

    bytes 0..7    magic "UVITW001"
    bytes 8..15   uint64: byte length of the JSON manifest
    manifest      UTF-8 JSON: {"tensors": [{"name": str, "dims": [int, ...]}, ...]}
    payload       the tensors' float64 data, concatenated in manifest order,
                  each in row-major (C) order

weight_shapes() enumerates the tensor names and dims an architecture needs,
in the canonical order used both for initialization and for serialization.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .tensor import Tensor

_MAGIC = b"UVITW001"


def weight_shapes(cfg) -> list:
    """(name, dims) pairs for every tensor of an ArchConfig, in canonical order.

    Names: embed.{kernel,bias,pos,cls,cls_pos}, block.{i}.{ln1,qkv,proj,ln2,
    ffn1,ffn2}.{gamma,beta,weight,bias} with i global over all stages,
    transition.{k}.{weight,bias} for learned transitions after stage k,
    final_ln.{gamma,beta}, and head.{weight,bias} in classification mode.
    """
    d0 = cfg.stages[0].hidden
    g0 = cfg.grid_extent(0)
    p = cfg.patch
    shapes = [
        ("embed.kernel", (p, p, 3, d0)),
        ("embed.bias", (d0,)),
        ("embed.pos", (g0, g0, d0)),
    ]
    if cfg.mode == "classification":
        shapes.append(("embed.cls", (d0,)))
        shapes.append(("embed.cls_pos", (d0,)))
    index = 0
    for stage in cfg.stages:
        d = stage.hidden
        for _ in range(stage.depth):
            prefix = f"block.{index}"
            shapes.extend([
                (f"{prefix}.ln1.gamma", (d,)),
                (f"{prefix}.ln1.beta", (d,)),
                (f"{prefix}.qkv.weight", (d, 3 * d)),
                (f"{prefix}.qkv.bias", (3 * d,)),
                (f"{prefix}.proj.weight", (d, d)),
                (f"{prefix}.proj.bias", (d,)),
                (f"{prefix}.ln2.gamma", (d,)),
                (f"{prefix}.ln2.beta", (d,)),
                (f"{prefix}.ffn1.weight", (d, cfg.ffn_ratio * d)),
                (f"{prefix}.ffn1.bias", (cfg.ffn_ratio * d,)),
                (f"{prefix}.ffn2.weight", (cfg.ffn_ratio * d, d)),
                (f"{prefix}.ffn2.bias", (d,)),
            ])
            index += 1
    for k, spec in enumerate(cfg.transitions()):
        kind = spec.kind
        d_in = cfg.stages[k].hidden
        d_out = cfg.stages[k + 1].hidden
        if kind == "strided-projection":
            shapes.append((f"transition.{k}.weight", (4 * d_in, d_out)))
            shapes.append((f"transition.{k}.bias", (d_out,)))
        elif kind == "width-projection":
            shapes.append((f"transition.{k}.weight", (d_in, d_out)))
            shapes.append((f"transition.{k}.bias", (d_out,)))
        # bilinear-merge and none carry no parameters
    d_last = cfg.stages[-1].hidden
    shapes.append(("final_ln.gamma", (d_last,)))
    shapes.append(("final_ln.beta", (d_last,)))
    if cfg.mode == "classification":
        shapes.append(("head.weight", (d_last, 1000)))
        shapes.append(("head.bias", (1000,)))
    return shapes


class WeightSet:
    """An ordered name -> Tensor mapping with binary save/load."""

    def __init__(self, tensors: dict):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list:
        return list(self.tensors)

    def total_elements(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def require(self, name: str, dims: tuple) -> Tensor:
        t = self.tensors.get(name)
        if t is None:
            raise ConfigError(f"weight set is missing tensor {name!r}")
        if t.dims != tuple(dims):
            raise ConfigError(
                f"tensor {name!r} has dims {t.dims}, config expects {tuple(dims)}")
        return t

    def set_requires_grad(self, flag: bool = True) -> None:
        for t in self.tensors.values():
            t.requires_grad = bool(flag)

    def save(self, path) -> None:
        manifest = {"tensors": [{"name": name, "dims": list(t.dims)}
                                for name, t in self.tensors.items()]}
        blob = json.dumps(manifest).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for t in self.tensors.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "WeightSet":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != _MAGIC:
            raise ConfigError(f"{path}: not a weight container (bad magic)")
        manifest_len = int.from_bytes(raw[8:16], "little")
        header_end = 16 + manifest_len
        try:
            manifest = json.loads(raw[16:header_end].decode("utf-8"))
            entries = manifest["tensors"]
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: corrupt manifest") from exc
        tensors = {}
        offset = header_end
        for entry in entries:
            dims = tuple(int(x) for x in entry["dims"])
            count = int(np.prod(dims)) if dims else 1
            nbytes = count * 8
            chunk = raw[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise ConfigError(f"{path}: payload truncated at {entry['name']!r}")
            data = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(dims)
            tensors[entry["name"]] = Tensor(data)
            offset += nbytes
        if offset != len(raw):
            raise ConfigError(f"{path}: {len(raw) - offset} trailing bytes after payload")
        return cls(tensors)


def validate_weights(cfg, ws: WeightSet) -> None:
    """Check that a WeightSet carries exactly the tensors cfg needs."""
    expected = weight_shapes(cfg)
    for name, dims in expected:
        ws.require(name, dims)
    expected_names = {name for name, _ in expected}
    extra = [name for name in ws.names() if name not in expected_names]
    if extra:
        raise ConfigError(f"weight set has tensors the config does not use: {extra}")
