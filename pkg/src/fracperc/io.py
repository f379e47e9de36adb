"""On-disk formats: RLE configuration files and JSON artifacts.

A configuration file is one line of JSON followed by little-endian uint64
run lengths over the flattened C-order grid. Runs alternate starting with
non-retained cells, so the first run may be zero.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from . import __version__
from .construction import CellIndex, LevelConfiguration, ProcessParams

FORMAT = "fracperc-rle/1"
OUTPUT_ENV = "FRACPERC_OUTPUT_DIR"


def output_dir(explicit: Optional[str] = None) -> str:
    """Explicit directory, else ``$FRACPERC_OUTPUT_DIR``, else ``./fracperc-out``."""
    return explicit or os.environ.get(OUTPUT_ENV) or "fracperc-out"


def rle_encode(flat: np.ndarray) -> np.ndarray:
    flat = np.asarray(flat, dtype=bool).ravel()
    if flat.size == 0:
        return np.zeros(0, dtype="<u8")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype("<u8")


def rle_encode_sorted(flat_idx: np.ndarray, total: int) -> np.ndarray:
    """RLE of a sparse set given its sorted flat indices, without a dense grid."""
    idx = np.asarray(flat_idx, dtype=np.int64)
    if idx.size == 0:
        return np.array([total], dtype="<u8") if total else np.zeros(0, dtype="<u8")
    brk = np.flatnonzero(np.diff(idx) != 1) + 1
    starts = idx[np.concatenate([[0], brk])]
    ends = idx[np.concatenate([brk - 1, [idx.size - 1]])] + 1
    gaps = starts - np.concatenate([[0], ends[:-1]])
    runs = np.empty(2 * len(starts), dtype=np.int64)
    runs[0::2] = gaps
    runs[1::2] = ends - starts
    if ends[-1] < total:
        runs = np.concatenate([runs, [total - ends[-1]]])
    return runs.astype("<u8")


def rle_decode_indices(runs: np.ndarray, total: int) -> np.ndarray:
    runs = np.asarray(runs, dtype=np.int64)
    if runs.sum() != total:
        raise ValueError(f"run lengths sum to {runs.sum()}, expected {total}")
    pos = np.concatenate([[0], np.cumsum(runs)])
    starts, ends = pos[1:-1:2], pos[2::2]
    lengths = ends - starts
    before = np.cumsum(lengths) - lengths
    return np.arange(lengths.sum(), dtype=np.int64) + np.repeat(starts - before, lengths)


def config_header(config: LevelConfiguration) -> dict:
    return {"format": FORMAT, "version": __version__, **config.header()}


def save_configuration(config: LevelConfiguration, path: str) -> None:
    side = config.side
    total = side**config.d
    flat = np.ravel_multi_index(tuple(config.coords.T), (side,) * config.d) if config.z_n else np.zeros(0, np.int64)
    runs = rle_encode_sorted(np.sort(flat), total)
    with open(path, "wb") as fh:
        fh.write(json.dumps(config_header(config), sort_keys=True).encode() + b"\n")
        fh.write(runs.tobytes())


def load_configuration(path: str) -> LevelConfiguration:
    with open(path, "rb") as fh:
        head = fh.readline()
        body = fh.read()
    h = json.loads(head)
    if h.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if len(body) % 8:
        raise ValueError(f"{path}: truncated run-length body")
    params = ProcessParams(h["N"], h["d"], h["p"], h["seed"])
    side = params.N ** h["level"]
    flat = rle_decode_indices(np.frombuffer(body, dtype="<u8"), side ** params.d)
    coords = np.column_stack(np.unravel_index(flat, (side,) * params.d)).astype(np.int64)
    if len(coords) != h["z_n"]:
        raise ValueError(f"{path}: header says {h['z_n']} cells, body has {len(coords)}")
    root = CellIndex(h["root"]["level"], tuple(h["root"]["k"])) if "root" in h else None
    return LevelConfiguration(params, h["level"], coords.reshape(-1, params.d),
                              full_until=h.get("full_until", 0), root=root)


def write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def config_json(config: LevelConfiguration) -> dict:
    """JSON artifact for a configuration: header plus 0-based retained coordinates."""
    return {**config_header(config), "kind": "configuration", "cells": config.coords.tolist()}
