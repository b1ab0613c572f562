"""Binary checkpoint format.

Layout::

    8 bytes   magic b"BDNCKPT\\0"
    4 bytes   format version, uint32 little-endian
    4 bytes   header length L, uint32 little-endian
    L bytes   UTF-8 JSON header: kind, variant, head, profile, style_indices,
              param_count and the layer manifest [{"name", "shape"}, ...]
    rest      parameters in manifest order, little-endian float64, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .arch import (BdnModel, Head, Variant, assemble, build_pathway, build_scae,
                   get_profile, headless)
from .engine import Sequential

MAGIC = b"BDNCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, meta: dict, named_params):
    named = [(n, np.ascontiguousarray(t.data if hasattr(t, "data") else t, dtype="<f8"))
             for n, t in named_params]
    header = dict(meta)
    header["param_count"] = int(sum(a.size for _, a in named))
    header["layers"] = [{"name": n, "shape": list(a.shape)} for n, a in named]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, a in named:
            f.write(a.tobytes())


def read_header(path) -> dict:
    return load_params(path)[0]


def load_params(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    offset = 16 + hlen
    params = {}
    for entry in header["layers"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, params


def _fill(named_params, params: dict, prefix="", strict=True):
    for n, t in named_params:
        key = prefix + n
        if key not in params:
            if strict:
                raise CheckpointError(f"checkpoint lacks parameter {key}")
            continue
        if params[key].shape != t.shape:
            raise CheckpointError(f"{key}: checkpoint shape {params[key].shape} != model {t.shape}")
        t.data[...] = params[key]


def save_model(model: BdnModel, path):
    meta = {"kind": "bdn", "variant": model.variant.value, "head": model.head.value,
            "profile": model.profile.name, "style_indices": list(model.style_indices),
            "frozen_pathways": model.frozen_pathways}
    save_params(path, meta, model.named_params())


def load_model(path, variant=None, head=None) -> BdnModel:
    """Rebuild a model from ``path``; ``variant``/``head`` if given must match the file."""
    header, params = load_params(path)
    if header.get("kind") != "bdn":
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r} checkpoint, not a model")
    if variant is not None and Variant(variant).value != header["variant"]:
        raise CheckpointError(f"{path}: checkpoint variant {header['variant']} != requested "
                              f"{Variant(variant).value}")
    if head is not None and Head(head).value != header["head"]:
        raise CheckpointError(f"{path}: checkpoint head {header['head']} != requested {Head(head).value}")
    profile = get_profile(header["profile"])
    n = len(header["style_indices"])
    pathways = [headless(build_pathway(0, profile)) for _ in range(n)]
    model = assemble(header["variant"], pathways, header["head"], profile, 0,
                     header["style_indices"], header.get("frozen_pathways", False))
    _fill(model.named_params(), params)
    return model


def save_pathway(pathway: Sequential, path, style_index: int, profile="desk"):
    """Pathway checkpoint; conv4 is kept so both with-head and headless forms load."""
    meta = {"kind": "pathway", "style_index": int(style_index), "profile": get_profile(profile).name,
            "head_layers": ["conv4"]}
    save_params(path, meta, pathway.named_params())


def load_pathway(path, with_head=False) -> tuple[Sequential, dict]:
    header, params = load_params(path)
    if header.get("kind") != "pathway":
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r} checkpoint, not a pathway")
    net = build_pathway(0, header["profile"])
    _fill(net.named_params(), params, strict=False)
    return (net if with_head else headless(net)), header


def save_scae(scae: Sequential, path, profile="desk"):
    save_params(path, {"kind": "scae", "profile": get_profile(profile).name}, scae.named_params())


def load_scae(path) -> tuple[Sequential, dict]:
    header, params = load_params(path)
    if header.get("kind") != "scae":
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r} checkpoint, not an SCAE")
    net = build_scae(0, header["profile"])
    _fill(net.named_params(), params)
    return net, header

